use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{encode_image, encode_text, EncoderGraph, EncoderParams, ImageKind};
use crate::error::{Error, Result};
use crate::metrics::Q_BLOCK;
use crate::ndtensor::{adam_step, mae, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::protocol::{reduce_inputs, SceneTriplet, SensorModel};
use crate::rasters::Raster;

use super::backbone::{backbone_forward_batch, BackboneGraph, BackboneParams};
use super::losses::{loss_pseudo, loss_qnr, loss_semantic, loss_spat, loss_spec, qnr_reference, SemanticAnchors};

/// Which Stage II loss groups are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossGroups {
    pub spec_spat: bool,
    pub qnr: bool,
    pub pseudo: bool,
    pub semantic: bool,
}

/// Every ablation row label understood by [`LossGroups::from_str`].
pub const TABLE2_LABELS: [&str; 6] = [
    "L_spec+L_spat",
    "L_QNR",
    "L_unsup",
    "L_unsup+L_ship",
    "L_unsup+L_d",
    "L_unsup+L_ship+L_d",
];

/// Rows of the ablation sweep, baseline first.
pub const ABLATION_ROWS: [&str; 5] = [
    "L_spec+L_spat",
    "L_unsup",
    "L_unsup+L_ship",
    "L_unsup+L_d",
    "L_unsup+L_ship+L_d",
];

impl LossGroups {
    pub const FULL: LossGroups = LossGroups {
        spec_spat: true,
        qnr: true,
        pseudo: true,
        semantic: true,
    };

    pub fn any(&self) -> bool {
        self.spec_spat || self.qnr || self.pseudo || self.semantic
    }

    /// Loss columns written to the training log, in order.
    pub fn columns(&self) -> Vec<&'static str> {
        let mut c = Vec::new();
        if self.spec_spat {
            c.extend(["L_spec", "L_spat"]);
        }
        if self.qnr {
            c.push("L_QNR");
        }
        if self.pseudo {
            c.push("L_ship");
        }
        if self.semantic {
            c.push("L_d");
        }
        c
    }

    pub fn log_header(&self) -> String {
        let mut h = vec!["iteration"];
        h.extend(self.columns());
        h.push("L_total");
        h.join(",")
    }
}

impl fmt::Display for LossGroups {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        match (self.spec_spat, self.qnr) {
            (true, true) => parts.push("L_unsup"),
            (true, false) => parts.push("L_spec+L_spat"),
            (false, true) => parts.push("L_QNR"),
            (false, false) => {}
        }
        if self.pseudo {
            parts.push("L_ship");
        }
        if self.semantic {
            parts.push("L_d");
        }
        if parts.is_empty() {
            return write!(f, "none");
        }
        write!(f, "{}", parts.join("+"))
    }
}

impl FromStr for LossGroups {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut g = LossGroups {
            spec_spat: false,
            qnr: false,
            pseudo: false,
            semantic: false,
        };
        let terms: Vec<&str> = s.split('+').map(str::trim).collect();
        let mut i = 0;
        while i < terms.len() {
            match terms[i] {
                "L_unsup" => {
                    g.spec_spat = true;
                    g.qnr = true;
                }
                "L_spec" if terms.get(i + 1) == Some(&"L_spat") => {
                    g.spec_spat = true;
                    i += 1;
                }
                "L_QNR" => g.qnr = true,
                "L_ship" => g.pseudo = true,
                "L_d" => g.semantic = true,
                other => return Err(Error::Config(format!("unknown loss group '{other}' in '{s}'"))),
            }
            i += 1;
        }
        if !g.any() {
            return Err(Error::Config(format!("'{s}' enables no loss")));
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Config {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub groups: LossGroups,
    pub w_d: f64,
    pub block: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            iterations: 1000,
            batch_size: 32,
            lr: 0.003,
            seed: 0,
            groups: LossGroups::FULL,
            w_d: 1.0,
            block: Q_BLOCK,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Row {
    pub iteration: usize,
    /// Values for [`LossGroups::columns`], same order.
    pub terms: Vec<f64>,
    pub total: f64,
    pub skipped_directions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Log {
    pub header: String,
    pub rows: Vec<Stage2Row>,
}

impl Stage2Log {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", self.header);
        for r in &self.rows {
            out.push_str(&r.iteration.to_string());
            for t in &r.terms {
                out.push_str(&format!(",{t}"));
            }
            out.push_str(&format!(",{}\n", r.total));
        }
        out
    }
}

struct SceneCache {
    lrms: Vec<f32>,
    pan: Vec<f32>,
    qnr_ref: Option<Vec<f64>>,
    pseudo: Option<Vec<f32>>,
    f_ms: Vec<f32>,
    f_pan: Vec<f32>,
}

impl SemanticAnchors {
    /// Text-space displacements from the MS and PAN prompts to the HRMS
    /// prompt.
    pub fn from_encoder(params: &EncoderParams) -> Result<Self> {
        let t = |k: ImageKind| encode_text(params.prompt(k), params, k);
        let (ms, pan, hr) = (t(ImageKind::Ms)?, t(ImageKind::Pan)?, t(ImageKind::Hrms)?);
        let diff = |a: &[f32]| hr.iter().zip(a).map(|(h, x)| h - x).collect();
        Ok(SemanticAnchors {
            text_ms: diff(&ms),
            text_pan: diff(&pan),
        })
    }
}

fn gather(caches: &[SceneCache], picks: &[usize], f: impl Fn(&SceneCache) -> &[f32], shape: [usize; 4]) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(shape.iter().product());
    for &i in picks {
        data.extend_from_slice(f(&caches[i]));
    }
    Tensor::new(&shape, data)
}

/// Stepwise Stage II optimizer. Parameters change only after a step whose
/// loss was finite, so `params` is always the last good state.
pub struct Stage2Trainer<'a> {
    cfg: Stage2Config,
    caches: Vec<SceneCache>,
    lr_shape: [usize; 3],
    hr_shape: [usize; 2],
    encoder: Option<&'a EncoderParams>,
    anchors: Option<SemanticAnchors>,
    pub params: BackboneParams,
    state: AdamState<f32>,
    rng: ChaCha8Rng,
    pub log: Stage2Log,
}

impl<'a> Stage2Trainer<'a> {
    pub fn new(
        dataset: &[SceneTriplet],
        init: &BackboneParams,
        encoder: Option<&'a EncoderParams>,
        pseudo: Option<&BackboneParams>,
        model: &SensorModel,
        cfg: &Stage2Config,
    ) -> Result<Self> {
        if !cfg.groups.any() {
            return Err(Error::Config("Stage II needs at least one loss group".into()));
        }
        if cfg.batch_size == 0 || dataset.len() < cfg.batch_size {
            return Err(Error::Parameter(format!(
                "{} scenes cannot fill a batch of {}",
                dataset.len(),
                cfg.batch_size
            )));
        }
        if cfg.lr < 0.0 || !cfg.lr.is_finite() {
            return Err(Error::Parameter(format!("learning rate must be >= 0, got {}", cfg.lr)));
        }
        let encoder = if cfg.groups.semantic {
            let e = encoder.ok_or_else(|| Error::Dependency("L_d needs a Stage I encoder checkpoint".into()))?;
            if e.config.bands != init.bands {
                return Err(Error::Dimension(format!(
                    "encoder built for {} bands, backbone for {}",
                    e.config.bands, init.bands
                )));
            }
            Some(e)
        } else {
            None
        };
        let pseudo = if cfg.groups.pseudo {
            Some(pseudo.ok_or_else(|| Error::Dependency("L_ship needs a pretrained pseudo-supervisor".into()))?)
        } else {
            None
        };
        let (lw, lh, lb) = dataset[0].lrms.shape();
        let (pw, ph, _) = dataset[0].pan.shape();
        if lb != init.bands {
            return Err(Error::Dimension(format!("data has {lb} bands, backbone {}", init.bands)));
        }
        let mut caches = Vec::with_capacity(dataset.len());
        for t in dataset {
            if t.lrms.shape() != (lw, lh, lb) || t.pan.shape() != (pw, ph, 1) {
                return Err(Error::Dimension(format!("scene {} differs in shape from the first scene", t.scene_id)));
            }
            let pseudo_ref = match pseudo {
                Some(p) => Some(backbone_forward_batch(&[&t.lrms], &[&t.pan], p)?.remove(0).data().to_vec()),
                None => None,
            };
            let (f_ms, f_pan) = match encoder {
                Some(e) => (
                    encode_image(&t.lrms, e, ImageKind::Ms)?,
                    encode_image(&t.pan, e, ImageKind::Pan)?,
                ),
                None => (Vec::new(), Vec::new()),
            };
            caches.push(SceneCache {
                lrms: t.lrms.data().to_vec(),
                pan: t.pan.data().to_vec(),
                qnr_ref: if cfg.groups.qnr {
                    Some(qnr_reference(&t.lrms, &t.pan, model, cfg.block)?)
                } else {
                    None
                },
                pseudo: pseudo_ref,
                f_ms,
                f_pan,
            });
        }
        let anchors = encoder.map(SemanticAnchors::from_encoder).transpose()?;
        Ok(Stage2Trainer {
            cfg: cfg.clone(),
            caches,
            lr_shape: [lb, lh, lw],
            hr_shape: [ph, pw],
            encoder,
            anchors,
            params: init.clone(),
            state: AdamState::new(init.set.tensors()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            log: Stage2Log {
                header: cfg.groups.log_header(),
                rows: Vec::new(),
            },
        })
    }

    pub fn iterations_done(&self) -> usize {
        self.log.rows.len()
    }

    /// One optimizer step on a fresh random batch.
    pub fn step(&mut self) -> Result<&Stage2Row> {
        let it = self.log.rows.len() + 1;
        let n = self.cfg.batch_size;
        let picks = sample(&mut self.rng, self.caches.len(), n).into_vec();
        let [b, h, w] = self.lr_shape;
        let [ph, pw] = self.hr_shape;
        let groups = self.cfg.groups;
        let mut tape = Tape::<f32>::new();
        let g = BackboneGraph::new(&self.params, &mut tape, true);
        let lrms = tape.constant(gather(&self.caches, &picks, |c| &c.lrms, [n, b, h, w])?);
        let pan = tape.constant(gather(&self.caches, &picks, |c| &c.pan, [n, 1, ph, pw])?);
        let out = g.forward(&mut tape, lrms, pan)?;
        let mut terms: Vec<Var> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut skipped = 0;
        if groups.spec_spat {
            terms.push(loss_spec(&mut tape, out, lrms)?);
            terms.push(loss_spat(&mut tape, out, pan, g.params.var("phi.w"))?);
            weights.extend([1.0, 1.0]);
        }
        if groups.qnr {
            let refs: Vec<Vec<f64>> = picks
                .iter()
                .map(|&i| self.caches[i].qnr_ref.clone().expect("cached when enabled"))
                .collect();
            terms.push(loss_qnr(&mut tape, out, pan, &refs, self.cfg.block)?);
            weights.push(1.0);
        }
        if groups.pseudo {
            let r = tape.constant(gather(
                &self.caches,
                &picks,
                |c| c.pseudo.as_deref().expect("cached when enabled"),
                [n, b, ph, pw],
            )?);
            terms.push(loss_pseudo(&mut tape, out, r)?);
            weights.push(1.0);
        }
        if let (Some(enc), Some(anchors)) = (self.encoder, self.anchors.as_ref()) {
            let eg = EncoderGraph::new(enc, &mut tape, false);
            let f_ms: Vec<&[f32]> = picks.iter().map(|&i| self.caches[i].f_ms.as_slice()).collect();
            let f_pan: Vec<&[f32]> = picks.iter().map(|&i| self.caches[i].f_pan.as_slice()).collect();
            let s = loss_semantic(&mut tape, &eg, out, &f_ms, &f_pan, anchors)?;
            skipped = s.skipped;
            terms.push(s.loss);
            weights.push(self.cfg.w_d);
        }
        let mut total = tape.affine(terms[0], weights[0], 0.0);
        for (&t, &wt) in terms.iter().zip(&weights).skip(1) {
            let scaled = tape.affine(t, wt, 0.0);
            total = tape.add(total, scaled)?;
        }
        let row = Stage2Row {
            iteration: it,
            terms: terms.iter().map(|&t| tape.value(t).item() as f64).collect(),
            total: tape.value(total).item() as f64,
            skipped_directions: skipped,
        };
        if !row.total.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                msg: format!("non-finite Stage II loss {:?}", row.terms),
            });
        }
        if self.cfg.lr > 0.0 {
            let bound = g.params;
            let grads = tape.backward(total)?;
            let grads = bound.collect(&grads);
            let adam = AdamConfig {
                lr: self.cfg.lr,
                ..AdamConfig::default()
            };
            adam_step(self.params.set.tensors_mut(), &grads, &adam, &mut self.state)?;
        }
        self.log.rows.push(row);
        Ok(self.log.rows.last().expect("just pushed"))
    }

    pub fn finish(self) -> (BackboneParams, Stage2Log) {
        (self.params, self.log)
    }
}

/// Runs every configured iteration of Stage II.
pub fn train_stage2(
    dataset: &[SceneTriplet],
    init: &BackboneParams,
    encoder: Option<&EncoderParams>,
    pseudo: Option<&BackboneParams>,
    model: &SensorModel,
    cfg: &Stage2Config,
) -> Result<(BackboneParams, Stage2Log)> {
    let mut t = Stage2Trainer::new(dataset, init, encoder, pseudo, model, cfg)?;
    for _ in 0..cfg.iterations {
        t.step()?;
    }
    Ok(t.finish())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iterations: 1000,
            batch_size: 32,
            lr: 0.003,
            seed: 0,
        }
    }
}

pub const PRETRAIN_LOG_HEADER: &str = "iteration,L_pretrain";

/// Supervised ℓ1 training at reduced resolution: inputs are degraded once
/// more and the original LRMS is the target.
pub fn pretrain_backbone_reduced(
    dataset: &[SceneTriplet],
    init: &BackboneParams,
    model: &SensorModel,
    cfg: &PretrainConfig,
) -> Result<(BackboneParams, Vec<f64>)> {
    if cfg.batch_size == 0 || dataset.len() < cfg.batch_size {
        return Err(Error::Parameter(format!(
            "{} scenes cannot fill a batch of {}",
            dataset.len(),
            cfg.batch_size
        )));
    }
    if cfg.lr < 0.0 || !cfg.lr.is_finite() {
        return Err(Error::Parameter(format!("learning rate must be >= 0, got {}", cfg.lr)));
    }
    let reduced = dataset
        .iter()
        .map(|t| reduce_inputs(t, model))
        .collect::<Result<Vec<(Raster, Raster)>>>()?;
    let mut params = init.clone();
    let mut state = AdamState::new(params.set.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let picks = sample(&mut rng, dataset.len(), cfg.batch_size);
        let lr: Vec<&Raster> = picks.iter().map(|i| &reduced[i].0).collect();
        let pan: Vec<&Raster> = picks.iter().map(|i| &reduced[i].1).collect();
        let target: Vec<&Raster> = picks.iter().map(|i| &dataset[i].lrms).collect();
        let mut tape = Tape::<f32>::new();
        let g = BackboneGraph::new(&params, &mut tape, true);
        let x = tape.constant(Raster::stack(&lr)?);
        let p = tape.constant(Raster::stack(&pan)?);
        let y = tape.constant(Raster::stack(&target)?);
        let out = g.forward(&mut tape, x, p)?;
        let loss = mae(&mut tape, out, y)?;
        let value = tape.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                msg: "non-finite pretraining loss".into(),
            });
        }
        log.push(value);
        if cfg.lr > 0.0 {
            let bound = g.params;
            let grads = tape.backward(loss)?;
            let grads = bound.collect(&grads);
            adam_step(params.set.tensors_mut(), &grads, &adam, &mut state)?;
        }
    }
    Ok((params, log))
}

pub fn pretrain_log_csv(log: &[f64]) -> String {
    let mut out = format!("{PRETRAIN_LOG_HEADER}\n");
    for (i, v) in log.iter().enumerate() {
        out.push_str(&format!("{},{v}\n", i + 1));
    }
    out
}

/// Fuses the twice-degraded inputs, giving an output comparable to the LRMS.
pub fn fuse_reduced(triplet: &SceneTriplet, params: &BackboneParams, model: &SensorModel) -> Result<Raster> {
    let (lr, pan) = reduce_inputs(triplet, model)?;
    Ok(backbone_forward_batch(&[&lr], &[&pan], params)?.remove(0))
}
