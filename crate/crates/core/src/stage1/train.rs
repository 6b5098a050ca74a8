use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{cosine, EncoderGraph, EncoderParams, ImageKind};
use crate::error::{Error, Result};
use crate::ndtensor::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::protocol::SceneTriplet;
use crate::rasters::Raster;

use super::losses::{loss_fusion, loss_inter, loss_intra, IntraMode};

pub const STAGE1_LOG_HEADER: &str = "iteration,L_inter,L_intra,L_fusion,L_s1";

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Config {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub w_inter: f64,
    pub w_intra: f64,
    pub w_fusion: f64,
    pub intra_mode: IntraMode,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            iterations: 1000,
            batch_size: 32,
            lr: 0.003,
            seed: 0,
            w_inter: 1.0,
            w_intra: 1.0,
            w_fusion: 1.0,
            intra_mode: IntraMode::CrossScene,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Row {
    pub iteration: usize,
    pub inter: f64,
    pub intra: f64,
    pub fusion: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stage1Log {
    pub rows: Vec<Stage1Row>,
}

impl Stage1Log {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{STAGE1_LOG_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iteration, r.inter, r.intra, r.fusion, r.total
            ));
        }
        out
    }
}

fn stack(rasters: &[&Raster]) -> Result<Tensor<f32>> {
    Raster::stack(rasters)
}

fn pseudo(t: &SceneTriplet) -> Result<&Raster> {
    t.pseudo_hrms.as_ref().ok_or_else(|| {
        Error::Contract(format!("scene {} has no pseudo-HRMS reference", t.scene_id))
    })
}

/// Embeddings of one batch, bound to a tape.
pub struct TripletEmbeddings {
    /// `[3N,D]`, type-major.
    pub image: Var,
    /// `[3,D]`: MS, PAN, HRMS prompts.
    pub text: Var,
    pub image_fused: Var,
    pub text_fused: Var,
    pub n: usize,
}

/// Runs the encoder over `batch` on `tape`.
pub fn embed_triplets(
    tape: &mut Tape<f32>,
    g: &EncoderGraph<'_>,
    params: &EncoderParams,
    batch: &[&SceneTriplet],
) -> Result<TripletEmbeddings> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let lrms: Vec<&Raster> = batch.iter().map(|t| &t.lrms).collect();
    let pan: Vec<&Raster> = batch.iter().map(|t| &t.pan).collect();
    let hrms = batch.iter().map(|t| pseudo(t)).collect::<Result<Vec<_>>>()?;
    let x_ms = tape.constant(stack(&lrms)?);
    let x_pan = tape.constant(stack(&pan)?);
    let x_hr = tape.constant(stack(&hrms)?);
    let e_ms = g.image(tape, ImageKind::Ms, x_ms)?;
    let e_pan = g.image(tape, ImageKind::Pan, x_pan)?;
    let e_hr = g.image(tape, ImageKind::Hrms, x_hr)?;
    let image = tape.concat(&[e_ms, e_pan, e_hr], 0)?;
    let t_ms = g.text(tape, ImageKind::Ms, params.prompt(ImageKind::Ms))?;
    let t_pan = g.text(tape, ImageKind::Pan, params.prompt(ImageKind::Pan))?;
    let t_hr = g.text(tape, ImageKind::Hrms, params.prompt(ImageKind::Hrms))?;
    let text = tape.concat(&[t_ms, t_pan, t_hr], 0)?;
    let image_fused = g.ifa(tape, e_ms, e_pan)?;
    let text_fused = g.tfa(tape, t_ms, t_pan)?;
    Ok(TripletEmbeddings {
        image,
        text,
        image_fused,
        text_fused,
        n: batch.len(),
    })
}

/// Minimizes `w_inter·L_inter + w_intra·L_intra + w_fusion·L_fusion` with
/// Adam. A zero learning rate leaves the parameters untouched.
pub fn train_stage1(
    dataset: &[SceneTriplet],
    init: &EncoderParams,
    cfg: &Stage1Config,
) -> Result<(EncoderParams, Stage1Log)> {
    if cfg.batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    if dataset.len() < cfg.batch_size {
        return Err(Error::Parameter(format!(
            "{} scenes cannot fill a batch of {}",
            dataset.len(),
            cfg.batch_size
        )));
    }
    if cfg.lr < 0.0 || !cfg.lr.is_finite() {
        return Err(Error::Parameter(format!("learning rate must be >= 0, got {}", cfg.lr)));
    }
    let mut params = init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(params.set.tensors());
    let mut log = Stage1Log::default();
    for it in 1..=cfg.iterations {
        let picks = sample(&mut rng, dataset.len(), cfg.batch_size);
        let batch: Vec<&SceneTriplet> = picks.iter().map(|i| &dataset[i]).collect();
        let snapshot = params.clone();
        let mut tape = Tape::<f32>::new();
        let g = EncoderGraph::new(&snapshot, &mut tape, true);
        let e = embed_triplets(&mut tape, &g, &snapshot, &batch)?;
        let inv_c = g.inv_temperature(&mut tape, "c");
        let inv_i = g.inv_temperature(&mut tape, "i");
        let inter = loss_inter(&mut tape, e.image, e.text, inv_c)?;
        let intra = loss_intra(&mut tape, e.image, inv_i, cfg.intra_mode)?;
        let wald = tape.narrow(e.text, 0, 2, 1)?;
        let hrms = tape.narrow(e.image, 0, 2 * e.n, e.n)?;
        let fusion = loss_fusion(&mut tape, e.text_fused, wald, e.image_fused, hrms)?;
        let a = tape.affine(inter, cfg.w_inter, 0.0);
        let b = tape.affine(intra, cfg.w_intra, 0.0);
        let c = tape.affine(fusion, cfg.w_fusion, 0.0);
        let ab = tape.add(a, b)?;
        let total = tape.add(ab, c)?;
        let value = |v: Var| tape.value(v).item() as f64;
        let row = Stage1Row {
            iteration: it,
            inter: value(inter),
            intra: value(intra),
            fusion: value(fusion),
            total: value(total),
        };
        if !row.total.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                msg: format!("non-finite Stage I loss {row:?}"),
            });
        }
        log.rows.push(row);
        if cfg.lr == 0.0 {
            continue;
        }
        let bound = g.params;
        let grads = tape.backward(total)?;
        let grads = bound.collect(&grads);
        adam_step(params.set.tensors_mut(), &grads, &adam, &mut state)?;
        params.clamp_temperatures();
    }
    Ok((params, log))
}

fn encode_all(params: &EncoderParams, kind: ImageKind, rasters: &[&Raster]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(rasters.len());
    for chunk in rasters.chunks(16) {
        let mut tape = Tape::<f32>::new();
        let g = EncoderGraph::new(params, &mut tape, false);
        let x = tape.constant(stack(chunk)?);
        let e = g.image(&mut tape, kind, x)?;
        let d = tape.shape(e)[1];
        out.extend(tape.value(e).data().chunks(d).map(<[f32]>::to_vec));
    }
    Ok(out)
}

fn type_rasters(triplets: &[SceneTriplet], kind: ImageKind) -> Result<Vec<&Raster>> {
    triplets
        .iter()
        .map(|t| match kind {
            ImageKind::Ms => Ok(&t.lrms),
            ImageKind::Pan => Ok(&t.pan),
            ImageKind::Hrms => pseudo(t),
        })
        .collect()
}

/// Fraction of MS/PAN/HRMS patches whose nearest prompt embedding is their
/// own type's.
pub fn modality_accuracy(params: &EncoderParams, triplets: &[SceneTriplet]) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let texts = ImageKind::ALL
        .iter()
        .map(|&k| crate::encoder::encode_text(params.prompt(k), params, k))
        .collect::<Result<Vec<_>>>()?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for kind in ImageKind::ALL {
        for e in encode_all(params, kind, &type_rasters(triplets, kind)?)? {
            let best = (0..3)
                .max_by(|&a, &b| cosine(&e, &texts[a]).total_cmp(&cosine(&e, &texts[b])))
                .expect("three prompts");
            correct += usize::from(best == kind.index());
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Mean pairwise cosine between embeddings of distinct scenes, per type
/// (MS, PAN, HRMS).
pub fn same_type_cosines(params: &EncoderParams, triplets: &[SceneTriplet]) -> Result<[f64; 3]> {
    if triplets.len() < 2 {
        return Err(Error::InsufficientNegatives("need two scenes".into()));
    }
    let mut out = [0.0; 3];
    for kind in ImageKind::ALL {
        let e = encode_all(params, kind, &type_rasters(triplets, kind)?)?;
        let (mut acc, mut pairs) = (0.0, 0usize);
        for i in 0..e.len() {
            for j in i + 1..e.len() {
                acc += cosine(&e[i], &e[j]);
                pairs += 1;
            }
        }
        out[kind.index()] = acc / pairs as f64;
    }
    Ok(out)
}
