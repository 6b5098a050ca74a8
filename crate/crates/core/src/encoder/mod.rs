//! Toy dual vision/text encoder with per-modality residual adapters and the
//! image/text fusion adapters.

mod graph;
mod prompts;
mod projection;

pub use graph::EncoderGraph;
pub use prompts::{
    tokenize, PromptSet, PromptVariant, Vocabulary, DESC1_PROMPT, DESC2_PROMPT, KHAN_PROMPT, MS_PROMPT,
    NOISE_PROMPT, PAN_PROMPT, WALD_PROMPT,
};
pub use projection::{pca_basis, Projection};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ndtensor::{Tape, Tensor};
use crate::params::ParamSet;
use crate::rasters::Raster;

pub const DEFAULT_DIM: usize = 64;
pub const STEM_WIDTHS: [usize; 3] = [16, 32, 32];
pub const TEXT_WIDTH: usize = 32;
pub const ADAPTER_REDUCTION: usize = 4;
pub const ADAPTER_ALPHA: f32 = 0.2;
pub const TAU_INIT: f64 = 0.07;
/// Lower bound applied to both temperatures after every update.
/// Stem inputs are mapped to `(x − INPUT_CENTER) · INPUT_SCALE`.
pub const INPUT_CENTER: f64 = 0.5;
pub const INPUT_SCALE: f64 = 4.0;
pub const TAU_MIN: f64 = 0.01;

/// Image type; selects the adapter (and, for PAN, channel replication).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ImageKind {
    Ms,
    Pan,
    Hrms,
}

impl ImageKind {
    pub const ALL: [ImageKind; 3] = [ImageKind::Ms, ImageKind::Pan, ImageKind::Hrms];

    pub fn tag(self) -> &'static str {
        match self {
            ImageKind::Ms => "ms",
            ImageKind::Pan => "pan",
            ImageKind::Hrms => "hrms",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Adapter blocks, three per side.
pub fn adapter_names() -> Vec<String> {
    ["img", "txt"]
        .iter()
        .flat_map(|side| ImageKind::ALL.iter().map(move |k| format!("ca.{side}.{}", k.tag())))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub bands: usize,
    pub dim: usize,
    pub projection: Projection,
    pub variant: PromptVariant,
}

impl EncoderConfig {
    pub fn new(bands: usize) -> Self {
        EncoderConfig {
            bands,
            dim: DEFAULT_DIM,
            projection: Projection::Conv,
            variant: PromptVariant::Wald,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < ADAPTER_REDUCTION || !self.dim.is_multiple_of(ADAPTER_REDUCTION) {
            return Err(Error::Parameter(format!(
                "embedding dim must be a positive multiple of {ADAPTER_REDUCTION}, got {}",
                self.dim
            )));
        }
        self.projection.check_bands(self.bands)
    }
}

/// Encoder weights plus the configuration they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub set: ParamSet,
    pub vocab: Vocabulary,
    pub prompts: PromptSet,
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<f32> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng) as f32)
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = Vocabulary::standard();
        let prompts = PromptSet::new(&vocab, config.variant)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let mut set = ParamSet::new();
        set.insert(
            "meta.config",
            Tensor::new(
                &[4],
                vec![
                    config.bands as f32,
                    d as f32,
                    config.projection.code() as f32,
                    config.variant.code() as f32,
                ],
            )?,
        )?;
        set.insert("proj.w", Tensor::zeros(&[3, config.bands, 1, 1]))?;
        let mut cin = 3;
        for (i, &c) in STEM_WIDTHS.iter().enumerate() {
            let fan_in = (cin * 9) as f64;
            set.insert(format!("stem.{i}.w"), normal(&mut rng, &[c, cin, 3, 3], (2.0 / fan_in).sqrt()))?;
            set.insert(format!("stem.{i}.b"), Tensor::zeros(&[c]))?;
            cin = c;
        }
        set.insert("img.head.w", normal(&mut rng, &[cin, d], (1.0 / cin as f64).sqrt()))?;
        set.insert("img.head.b", Tensor::zeros(&[d]))?;
        set.insert("txt.embed", normal(&mut rng, &[vocab.len(), TEXT_WIDTH], 1.0))?;
        set.insert("txt.pos", Tensor::full(&[vocab.max_len()], 1.0))?;
        set.insert(
            "txt.head.w",
            normal(&mut rng, &[TEXT_WIDTH, d], (1.0 / TEXT_WIDTH as f64).sqrt()),
        )?;
        set.insert("txt.head.b", Tensor::zeros(&[d]))?;
        let h = d / ADAPTER_REDUCTION;
        for name in adapter_names() {
            set.insert(format!("{name}.w1"), normal(&mut rng, &[d, h], (2.0 / d as f64).sqrt()))?;
            set.insert(format!("{name}.b1"), Tensor::zeros(&[h]))?;
            set.insert(format!("{name}.w2"), normal(&mut rng, &[h, d], (1.0 / h as f64).sqrt()))?;
            set.insert(format!("{name}.b2"), Tensor::zeros(&[d]))?;
            set.insert(format!("{name}.alpha"), Tensor::full(&[1], ADAPTER_ALPHA))?;
        }
        for fa in ["ifa", "tfa"] {
            set.insert(format!("{fa}.w1"), normal(&mut rng, &[2 * d, d], (2.0 / (2 * d) as f64).sqrt()))?;
            set.insert(format!("{fa}.b1"), Tensor::zeros(&[d]))?;
            set.insert(format!("{fa}.w2"), normal(&mut rng, &[d, d], (1.0 / d as f64).sqrt()))?;
            set.insert(format!("{fa}.b2"), Tensor::zeros(&[d]))?;
        }
        let log_tau = TAU_INIT.ln() as f32;
        set.insert("tau.c", Tensor::full(&[1], log_tau))?;
        set.insert("tau.i", Tensor::full(&[1], log_tau))?;
        Ok(EncoderParams {
            config,
            set,
            vocab,
            prompts,
        })
    }

    /// Rebuilds parameters from a checkpoint, checking it against a freshly
    /// initialized layout.
    pub fn from_set(set: ParamSet) -> Result<Self> {
        let meta = set.require("meta.config")?.data().to_vec();
        if meta.len() != 4 {
            return Err(Error::format(0, "meta.config must hold 4 values"));
        }
        let code = |v: f32| v as u32;
        let config = EncoderConfig {
            bands: meta[0] as usize,
            dim: meta[1] as usize,
            projection: Projection::from_code(code(meta[2]))
                .ok_or_else(|| Error::format(0, "unknown projection code"))?,
            variant: PromptVariant::from_code(code(meta[3]))
                .ok_or_else(|| Error::format(0, "unknown prompt variant code"))?,
        };
        let template = EncoderParams::init(config, 0)?;
        if template.set.names() != set.names()
            || template
                .set
                .tensors()
                .iter()
                .zip(set.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::format(0, "checkpoint layout does not match an encoder"));
        }
        Ok(EncoderParams { set, ..template })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_set(ParamSet::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.set.write(path)
    }

    /// Keeps both temperatures at or above [`TAU_MIN`].
    pub fn clamp_temperatures(&mut self) {
        let floor = TAU_MIN.ln() as f32;
        for name in ["tau.c", "tau.i"] {
            if let Some(t) = self.set.get_mut(name) {
                t.data_mut().iter_mut().for_each(|v| *v = v.max(floor));
            }
        }
    }

    pub fn temperatures(&self) -> (f64, f64) {
        let get = |n: &str| (self.set.get(n).expect("temperature present").item() as f64).exp();
        (get("tau.c"), get("tau.i"))
    }

    /// Text ids for the prompt bound to an image kind.
    pub fn prompt(&self, kind: ImageKind) -> &[usize] {
        match kind {
            ImageKind::Ms => &self.prompts.ms,
            ImageKind::Pan => &self.prompts.pan,
            ImageKind::Hrms => &self.prompts.hrms,
        }
    }
}

fn first_row(tape: &Tape<f32>, v: crate::ndtensor::Var) -> Vec<f32> {
    let d = tape.shape(v)[1];
    tape.value(v).data()[..d].to_vec()
}

/// Three stem input channels for one raster, `[3, H, W]`.
pub fn project_input(r: &Raster, mode: Projection, params: &EncoderParams) -> Result<Tensor<f32>> {
    let mut tape = Tape::<f32>::new();
    let g = EncoderGraph::new(params, &mut tape, false);
    let x = tape.constant(r.to_tensor());
    let kind = if r.bands() == 1 { ImageKind::Pan } else { ImageKind::Ms };
    let y = g.project_with(&mut tape, kind, x, mode)?;
    tape.value(y).clone().reshape(&[3, r.height(), r.width()])
}

/// Unit-norm embedding of one raster through the `kind` adapter.
pub fn encode_image(r: &Raster, params: &EncoderParams, kind: ImageKind) -> Result<Vec<f32>> {
    let mut tape = Tape::<f32>::new();
    let g = EncoderGraph::new(params, &mut tape, false);
    let x = tape.constant(r.to_tensor());
    let e = g.image(&mut tape, kind, x)?;
    Ok(first_row(&tape, e))
}

/// Unit-norm embedding of a token sequence through the `kind` text adapter.
pub fn encode_text(tokens: &[usize], params: &EncoderParams, kind: ImageKind) -> Result<Vec<f32>> {
    let mut tape = Tape::<f32>::new();
    let g = EncoderGraph::new(params, &mut tape, false);
    let e = g.text(&mut tape, kind, tokens)?;
    Ok(first_row(&tape, e))
}

fn fusion_adapter(a: &[f32], b: &[f32], params: &EncoderParams, image: bool) -> Result<Vec<f32>> {
    let d = params.config.dim;
    if a.len() != d || b.len() != d {
        return Err(Error::Dimension(format!(
            "fusion adapter expects two {d}-vectors, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut tape = Tape::<f32>::new();
    let g = EncoderGraph::new(params, &mut tape, false);
    let va = tape.constant(Tensor::new(&[1, d], a.to_vec())?);
    let vb = tape.constant(Tensor::new(&[1, d], b.to_vec())?);
    let e = if image { g.ifa(&mut tape, va, vb)? } else { g.tfa(&mut tape, va, vb)? };
    Ok(first_row(&tape, e))
}

pub fn ifa(f_ms: &[f32], f_pan: &[f32], params: &EncoderParams) -> Result<Vec<f32>> {
    fusion_adapter(f_ms, f_pan, params, true)
}

pub fn tfa(t_ms: &[f32], t_pan: &[f32], params: &EncoderParams) -> Result<Vec<f32>> {
    fusion_adapter(t_ms, t_pan, params, false)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}
