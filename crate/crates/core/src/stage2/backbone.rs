use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ndtensor::{resize_bicubic, Real, Tape, Tensor, Var};
use crate::params::{Bound, ParamSet};
use crate::rasters::Raster;

/// Hidden widths of the two inner convolutions.
pub const BACKBONE_WIDTHS: [usize; 2] = [32, 16];
/// Kernel edge of each of the three convolutions.
pub const BACKBONE_KERNELS: [usize; 3] = [9, 5, 5];

/// Subtracted from every network input; the residual itself is uncentered.
pub const BACKBONE_INPUT_CENTER: f64 = 0.5;

/// Three-layer PNN-style network with a global residual, plus the learnable
/// band-to-PAN operator `phi`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    pub bands: usize,
    pub set: ParamSet,
}

impl BackboneParams {
    /// He-normal inner layers; the last layer starts at zero so the network
    /// begins as bicubic upsampling.
    pub fn init(bands: usize, seed: u64) -> Result<Self> {
        if bands == 0 {
            return Err(Error::Parameter("backbone needs at least one band".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        set.insert("meta.bands", Tensor::new(&[1], vec![bands as f32])?)?;
        let widths = [BACKBONE_WIDTHS[0], BACKBONE_WIDTHS[1], bands];
        let mut cin = bands + 1;
        for (i, (&c, &k)) in widths.iter().zip(&BACKBONE_KERNELS).enumerate() {
            let w = if i == 2 {
                Tensor::zeros(&[c, cin, k, k])
            } else {
                let std = (2.0 / (cin * k * k) as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("finite std");
                Tensor::from_fn(&[c, cin, k, k], |_| dist.sample(&mut rng) as f32)
            };
            set.insert(format!("l{}.w", i + 1), w)?;
            set.insert(format!("l{}.b", i + 1), Tensor::zeros(&[c]))?;
            cin = c;
        }
        set.insert("phi.w", Tensor::full(&[1, bands, 1, 1], 1.0 / bands as f32))?;
        Ok(BackboneParams { bands, set })
    }

    pub fn from_set(set: ParamSet) -> Result<Self> {
        let meta = set.require("meta.bands")?;
        if meta.numel() != 1 || meta.item() < 1.0 {
            return Err(Error::format(0, "meta.bands must hold one positive value"));
        }
        let template = BackboneParams::init(meta.item() as usize, 0)?;
        if template.set.names() != set.names()
            || template
                .set
                .tensors()
                .iter()
                .zip(set.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::format(0, "checkpoint layout does not match a backbone"));
        }
        Ok(BackboneParams { set, ..template })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_set(ParamSet::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.set.write(path)
    }

    pub fn phi(&self) -> &[f32] {
        self.set.get("phi.w").expect("phi present").data()
    }
}

/// Integer spatial ratio between PAN and LRMS; both axes must agree.
pub fn pan_ratio(lrms: &[usize], pan: &[usize]) -> Result<usize> {
    if lrms.len() != 4 || pan.len() != 4 {
        return Err(Error::Dimension(format!("expected [N,C,H,W] inputs, got {lrms:?} and {pan:?}")));
    }
    let (h, w, ph, pw) = (lrms[2], lrms[3], pan[2], pan[3]);
    if lrms[0] != pan[0] || pan[1] != 1 || h == 0 || w == 0 || ph % h != 0 || ph / h != pw / w || pw % w != 0 {
        return Err(Error::Dimension(format!(
            "PAN {pan:?} is not an integer upscale of LRMS {lrms:?}"
        )));
    }
    Ok(ph / h)
}

pub struct BackboneGraph<'a> {
    pub bands: usize,
    pub params: Bound<'a>,
}

impl<'a> BackboneGraph<'a> {
    pub fn new<T: Real>(p: &'a BackboneParams, tape: &mut Tape<T>, trainable: bool) -> Self {
        BackboneGraph {
            bands: p.bands,
            params: p.set.bind(tape, trainable),
        }
    }

    pub fn from_bound(p: &'a BackboneParams, params: Bound<'a>) -> Self {
        BackboneGraph { bands: p.bands, params }
    }

    /// Raw (unclamped) output `[N,B,H,W]` for LRMS `[N,B,h,w]` and PAN
    /// `[N,1,H,W]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, lrms: Var, pan: Var) -> Result<Var> {
        let ls = tape.shape(lrms).to_vec();
        if ls.len() != 4 || ls[1] != self.bands {
            return Err(Error::Dimension(format!(
                "backbone expects [N,{},h,w] LRMS, got {ls:?}",
                self.bands
            )));
        }
        let ratio = pan_ratio(&ls, tape.shape(pan))?;
        let up = resize_bicubic(tape, lrms, ratio as f64)?;
        let x = tape.concat(&[up, pan], 1)?;
        let mut x = tape.affine(x, 1.0, -BACKBONE_INPUT_CENTER);
        for (i, &k) in BACKBONE_KERNELS.iter().enumerate() {
            let w = self.params.var(&format!("l{}.w", i + 1));
            let b = self.params.var(&format!("l{}.b", i + 1));
            x = tape.conv2d(x, w, 1, k / 2)?;
            x = tape.add_bias(x, b)?;
            if i < 2 {
                x = tape.relu(x);
            }
        }
        tape.add(up, x)
    }

    /// `phi`: weighted band sum to one channel.
    pub fn phi<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.conv2d(x, self.params.var("phi.w"), 1, 0)
    }
}

/// Inference on a single pair; samples are clamped to `[0,1]`.
pub fn backbone_forward(lrms: &Raster, pan: &Raster, params: &BackboneParams) -> Result<Raster> {
    let mut out = backbone_forward_batch(&[lrms], &[pan], params)?;
    Ok(out.remove(0))
}

pub fn backbone_forward_batch(lrms: &[&Raster], pan: &[&Raster], params: &BackboneParams) -> Result<Vec<Raster>> {
    if lrms.len() != pan.len() {
        return Err(Error::Dimension(format!("{} LRMS vs {} PAN rasters", lrms.len(), pan.len())));
    }
    let mut tape = Tape::<f32>::new();
    let g = BackboneGraph::new(params, &mut tape, false);
    let x = tape.constant(Raster::stack(lrms)?);
    let p = tape.constant(Raster::stack(pan)?);
    let y = g.forward(&mut tape, x, p)?;
    let clamped = tape.value(y).map(|v| v.clamp(0.0, 1.0));
    (0..lrms.len()).map(|i| Raster::from_tensor(&clamped, i)).collect()
}
