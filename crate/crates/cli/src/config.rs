//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use panlab::encoder::{EncoderConfig, Projection, PromptVariant};
use panlab::protocol::SensorModel;
use panlab::stage1::{IntraMode, Stage1Config};
use panlab::stage2::{LossGroups, PretrainConfig, Stage2Config};
use panlab::{Error, Result};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "PANLAB_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "panlab-runs";
pub const CONFIG_FILE: &str = "config.txt";

/// Every key, in serialization order.
pub const KEYS: [&str; 23] = [
    "seed",
    "scenes",
    "size",
    "bands",
    "mtf_gain",
    "pan_gain",
    "batch_size",
    "iterations",
    "lr",
    "align_iterations",
    "pretrain_iterations",
    "stage2_iterations",
    "stage2_batch_size",
    "prompt",
    "projection",
    "intra_mode",
    "loss_spec_spat",
    "loss_qnr",
    "loss_pseudo",
    "loss_semantic",
    "w_d",
    "backbone_seed",
    "output",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub scenes: usize,
    pub size: usize,
    pub bands: usize,
    pub mtf_gain: f64,
    pub pan_gain: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    /// Per-stage overrides of `iterations` / `batch_size`.
    pub align_iterations: Option<usize>,
    pub pretrain_iterations: Option<usize>,
    pub stage2_iterations: Option<usize>,
    pub stage2_batch_size: Option<usize>,
    pub prompt: PromptVariant,
    pub projection: Projection,
    pub intra_mode: IntraMode,
    pub loss_spec_spat: bool,
    pub loss_qnr: bool,
    pub loss_pseudo: bool,
    pub loss_semantic: bool,
    pub w_d: f64,
    /// Seed for network initialization; separate from the data seed.
    pub backbone_seed: u64,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scenes: 32,
            size: 64,
            bands: 4,
            mtf_gain: 0.3,
            pan_gain: 0.3,
            batch_size: 32,
            iterations: 1000,
            lr: 0.003,
            align_iterations: None,
            pretrain_iterations: None,
            stage2_iterations: None,
            stage2_batch_size: None,
            prompt: PromptVariant::Wald,
            projection: Projection::Conv,
            intra_mode: IntraMode::CrossScene,
            loss_spec_spat: true,
            loss_qnr: true,
            loss_pseudo: true,
            loss_semantic: true,
            w_d: 1.0,
            backbone_seed: 0,
            output: PathBuf::from(DEFAULT_OUTPUT_ROOT),
        }
    }
}

fn bad(key: &str, value: &str, why: &str) -> Error {
    Error::Config(format!("{key}={value}: {why}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, "not a valid number"))
}

fn parse_opt(key: &str, value: &str) -> Result<Option<usize>> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

pub fn intra_mode_name(m: IntraMode) -> &'static str {
    match m {
        IntraMode::CrossScene => "cross_scene",
        IntraMode::AllRows => "all_rows",
    }
}

fn opt(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "scenes" => self.scenes = parse_num(key, value)?,
            "size" => self.size = parse_num(key, value)?,
            "bands" => self.bands = parse_num(key, value)?,
            "mtf_gain" => self.mtf_gain = parse_num(key, value)?,
            "pan_gain" => self.pan_gain = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "iterations" => self.iterations = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "align_iterations" => self.align_iterations = parse_opt(key, value)?,
            "pretrain_iterations" => self.pretrain_iterations = parse_opt(key, value)?,
            "stage2_iterations" => self.stage2_iterations = parse_opt(key, value)?,
            "stage2_batch_size" => self.stage2_batch_size = parse_opt(key, value)?,
            "prompt" => self.prompt = value.parse()?,
            "projection" => self.projection = value.parse()?,
            "intra_mode" => {
                self.intra_mode = match value {
                    "cross_scene" => IntraMode::CrossScene,
                    "all_rows" => IntraMode::AllRows,
                    _ => return Err(bad(key, value, "expected cross_scene or all_rows")),
                }
            }
            "loss_spec_spat" => self.loss_spec_spat = parse_bool(key, value)?,
            "loss_qnr" => self.loss_qnr = parse_bool(key, value)?,
            "loss_pseudo" => self.loss_pseudo = parse_bool(key, value)?,
            "loss_semantic" => self.loss_semantic = parse_bool(key, value)?,
            "w_d" => self.w_d = parse_num(key, value)?,
            "backbone_seed" => self.backbone_seed = parse_num(key, value)?,
            "output" => {
                if value.is_empty() {
                    return Err(bad(key, value, "empty path"));
                }
                self.output = PathBuf::from(value)
            }
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "scenes" => self.scenes.to_string(),
            "size" => self.size.to_string(),
            "bands" => self.bands.to_string(),
            "mtf_gain" => self.mtf_gain.to_string(),
            "pan_gain" => self.pan_gain.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "iterations" => self.iterations.to_string(),
            "lr" => self.lr.to_string(),
            "align_iterations" => opt(self.align_iterations),
            "pretrain_iterations" => opt(self.pretrain_iterations),
            "stage2_iterations" => opt(self.stage2_iterations),
            "stage2_batch_size" => opt(self.stage2_batch_size),
            "prompt" => self.prompt.to_string(),
            "projection" => self.projection.to_string(),
            "intra_mode" => intra_mode_name(self.intra_mode).to_string(),
            "loss_spec_spat" => self.loss_spec_spat.to_string(),
            "loss_qnr" => self.loss_qnr.to_string(),
            "loss_pseudo" => self.loss_pseudo.to_string(),
            "loss_semantic" => self.loss_semantic.to_string(),
            "w_d" => self.w_d.to_string(),
            "backbone_seed" => self.backbone_seed.to_string(),
            "output" => self.output.display().to_string(),
            _ => return None,
        })
    }

    /// Parses a full file: one `key=value` per line, `#` comments, every
    /// key at most once; absent keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", n + 1)));
            }
            seen.push(k);
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            writeln!(out, "{k}={}", self.get(k).expect("listed key")).expect("writing to a String");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands != 4 && self.bands != 8 {
            return Err(Error::Parameter(format!("bands must be 4 or 8, got {}", self.bands)));
        }
        // the SSIM window must fit the low-resolution image
        if !self.size.is_multiple_of(4) || self.size < 44 {
            return Err(Error::Parameter(format!(
                "size must be a multiple of 4 and at least 44, got {}",
                self.size
            )));
        }
        if self.scenes == 0 {
            return Err(Error::Parameter("scenes must be positive".into()));
        }
        for (name, b) in [
            ("batch_size", Some(self.batch_size)),
            ("stage2_batch_size", self.stage2_batch_size),
        ] {
            if b == Some(0) {
                return Err(Error::Parameter(format!("{name} must be positive")));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.w_d >= 0.0 && self.w_d.is_finite()) {
            return Err(Error::Parameter(format!("w_d must be finite and >= 0, got {}", self.w_d)));
        }
        self.sensor_model().validate()?;
        self.encoder_config().validate()?;
        if !self.groups().any() {
            return Err(Error::Config("at least one Stage II loss group must be enabled".into()));
        }
        Ok(())
    }

    pub fn sensor_model(&self) -> SensorModel {
        SensorModel {
            mtf_gains: vec![self.mtf_gain; self.bands],
            pan_gain: self.pan_gain,
            ..SensorModel::new(self.bands)
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            projection: self.projection,
            variant: self.prompt,
            ..EncoderConfig::new(self.bands)
        }
    }

    pub fn groups(&self) -> LossGroups {
        LossGroups {
            spec_spat: self.loss_spec_spat,
            qnr: self.loss_qnr,
            pseudo: self.loss_pseudo,
            semantic: self.loss_semantic,
        }
    }

    pub fn set_groups(&mut self, g: LossGroups) {
        self.loss_spec_spat = g.spec_spat;
        self.loss_qnr = g.qnr;
        self.loss_pseudo = g.pseudo;
        self.loss_semantic = g.semantic;
    }

    pub fn stage1(&self) -> Stage1Config {
        Stage1Config {
            iterations: self.align_iterations.unwrap_or(self.iterations),
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            intra_mode: self.intra_mode,
            ..Stage1Config::default()
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            iterations: self.pretrain_iterations.unwrap_or(self.iterations),
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
        }
    }

    pub fn stage2(&self) -> Stage2Config {
        Stage2Config {
            iterations: self.stage2_iterations.unwrap_or(self.iterations),
            batch_size: self.stage2_batch_size.unwrap_or(self.batch_size),
            lr: self.lr,
            seed: self.seed,
            groups: self.groups(),
            w_d: self.w_d,
            ..Stage2Config::default()
        }
    }

    /// Seed of scene `i` in the simulated set.
    pub fn scene_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
    }
}
