//! The pipeline steps behind each subcommand. Every step writes the
//! configuration that produced it into its output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use panlab::encoder::{EncoderParams, ImageKind};
use panlab::metrics::{evaluate, MetricReport, METRIC_HEADER};
use panlab::protocol::{bdsd_fuse, exp_upsample, reduce_inputs, upsample_bicubic, SceneTriplet, SensorModel};
use panlab::rasters::{export_preview, read_raster, write_raster, BandMap, Raster};
use panlab::stage1::{modality_accuracy, same_type_cosines, train_stage1};
use panlab::stage2::{
    backbone_forward, fuse_reduced, pretrain_backbone_reduced, pretrain_log_csv, BackboneParams, LossGroups,
    Stage2Trainer, ABLATION_ROWS,
};
use panlab::Error;

use crate::config::{RunConfig, CONFIG_FILE};
use crate::dataset::{read_dataset, write_dataset};

pub const ENCODER_CKPT: &str = "encoder.panw";
pub const PSEUDO_CKPT: &str = "pseudo.panw";
pub const BACKBONE_CKPT: &str = "backbone.panw";
pub const LAST_GOOD_CKPT: &str = "backbone.last_good.panw";
pub const STAGE1_LOG: &str = "stage1_log.csv";
pub const PRETRAIN_LOG: &str = "pretrain_log.csv";
pub const STAGE2_LOG: &str = "stage2_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BASELINE_FILE: &str = "baseline.txt";
pub const REPORT_FILE: &str = "report.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

fn prepare_dir(cfg: &RunConfig, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(dir.join(CONFIG_FILE), cfg.to_kv())
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn check_bands(cfg: &RunConfig, data: &[SceneTriplet]) -> anyhow::Result<()> {
    let b = data[0].lrms.bands();
    if b != cfg.bands {
        return Err(Error::Config(format!("dataset has {b} bands but the config says {}", cfg.bands)).into());
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> anyhow::Result<()> {
    cfg.validate()?;
    prepare_dir(cfg, &cfg.output)?;
    write_dataset(cfg, &cfg.output)
}

/// Stage I summary written next to the checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn align(cfg: &RunConfig, dataset: &Path) -> anyhow::Result<AlignSummary> {
    cfg.validate()?;
    let data = read_dataset(dataset)?;
    check_bands(cfg, &data)?;
    prepare_dir(cfg, &cfg.output)?;
    let init = EncoderParams::init(cfg.encoder_config(), cfg.backbone_seed)?;
    let (params, log) = train_stage1(&data, &init, &cfg.stage1())?;
    params.write(cfg.output.join(ENCODER_CKPT))?;
    write(cfg.output.join(STAGE1_LOG), log.to_csv())?;
    let total = |i: usize| log.rows.get(i).map_or(f64::NAN, |r| r.total);
    Ok(AlignSummary {
        initial_loss: total(0),
        final_loss: total(log.rows.len().saturating_sub(1)),
    })
}

pub fn pretrain(cfg: &RunConfig, dataset: &Path) -> anyhow::Result<()> {
    cfg.validate()?;
    let data = read_dataset(dataset)?;
    check_bands(cfg, &data)?;
    prepare_dir(cfg, &cfg.output)?;
    let init = BackboneParams::init(cfg.bands, cfg.backbone_seed)?;
    let (params, log) = pretrain_backbone_reduced(&data, &init, &cfg.sensor_model(), &cfg.pretrain())?;
    params.write(cfg.output.join(PSEUDO_CKPT))?;
    write(cfg.output.join(PRETRAIN_LOG), pretrain_log_csv(&log))
}

/// Stage II. On divergence the last finite parameters are saved before the
/// error is returned.
pub fn train(cfg: &RunConfig, dataset: &Path, stage1: Option<&Path>, pseudo: Option<&Path>) -> anyhow::Result<()> {
    cfg.validate()?;
    let groups = cfg.groups();
    let encoder = match (groups.semantic, stage1) {
        (true, None) => {
            return Err(Error::Dependency("L_d is enabled but no Stage I checkpoint was given".into()).into())
        }
        (true, Some(p)) => Some(EncoderParams::read(p).with_context(|| format!("loading {}", p.display()))?),
        (false, _) => None,
    };
    let pseudo = match (groups.pseudo, pseudo) {
        (true, None) => {
            return Err(Error::Dependency("L_ship is enabled but no pseudo-supervisor checkpoint was given".into()).into())
        }
        (true, Some(p)) => Some(BackboneParams::read(p).with_context(|| format!("loading {}", p.display()))?),
        (false, _) => None,
    };
    let data = read_dataset(dataset)?;
    check_bands(cfg, &data)?;
    prepare_dir(cfg, &cfg.output)?;
    let init = BackboneParams::init(cfg.bands, cfg.backbone_seed)?;
    let s2 = cfg.stage2();
    let mut trainer = Stage2Trainer::new(&data, &init, encoder.as_ref(), pseudo.as_ref(), &cfg.sensor_model(), &s2)?;
    for _ in 0..s2.iterations {
        if let Err(e) = trainer.step() {
            trainer.params.write(cfg.output.join(LAST_GOOD_CKPT))?;
            write(cfg.output.join(STAGE2_LOG), trainer.log.to_csv())?;
            return Err(e.into());
        }
    }
    let (params, log) = trainer.finish();
    params.write(cfg.output.join(BACKBONE_CKPT))?;
    write(cfg.output.join(STAGE2_LOG), log.to_csv())
}

/// Directory name of an ablation row.
pub fn ablation_dir(label: &str) -> String {
    label.replace('+', "_")
}

/// Trains every ablation row into `cfg.output/<row>/`.
pub fn train_sweep(cfg: &RunConfig, dataset: &Path, stage1: Option<&Path>, pseudo: Option<&Path>) -> anyhow::Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for label in ABLATION_ROWS {
        let mut row = cfg.clone();
        row.set_groups(label.parse()?);
        row.output = cfg.output.join(ablation_dir(label));
        train(&row, dataset, stage1, pseudo).with_context(|| format!("ablation row {label}"))?;
        dirs.push(row.output);
    }
    Ok(dirs)
}

fn preview_map(bands: usize) -> BandMap {
    if bands >= 3 {
        BandMap::Rgb([2, 1, 0])
    } else {
        BandMap::Gray
    }
}

pub fn preview_name(bands: usize) -> &'static str {
    if bands >= 3 {
        "fused.ppm"
    } else {
        "fused.pgm"
    }
}

/// Fuses one LRMS/PAN pair with a trained backbone.
pub fn fuse(cfg: &RunConfig, checkpoint: &Path, lrms: &Path, pan: &Path) -> anyhow::Result<Raster> {
    let params = BackboneParams::read(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let lrms = read_raster(lrms)?;
    let pan = read_raster(pan)?;
    let fused = backbone_forward(&lrms, &pan, &params)?;
    prepare_dir(cfg, &cfg.output)?;
    write_raster(&fused, cfg.output.join("fused.panr"))?;
    write(
        cfg.output.join(preview_name(fused.bands())),
        export_preview(&fused, preview_map(fused.bands()))?,
    )?;
    Ok(fused)
}

/// Metrics for one fused raster; reference-based columns need `reference`.
pub fn eval_files(
    cfg: &RunConfig,
    fused: &Path,
    lrms: &Path,
    pan: &Path,
    reference: Option<&Path>,
) -> anyhow::Result<MetricReport> {
    let fused = read_raster(fused)?;
    let lrms = read_raster(lrms)?;
    let pan = read_raster(pan)?;
    let reference = reference.map(read_raster).transpose()?;
    let model = SensorModel {
        mtf_gains: vec![cfg.mtf_gain; lrms.bands()],
        pan_weights: vec![1.0 / lrms.bands() as f64; lrms.bands()],
        ..cfg.sensor_model()
    };
    let report = evaluate(&fused, &lrms, &pan, reference.as_ref(), &model)?;
    prepare_dir(cfg, &cfg.output)?;
    write(cfg.output.join(METRICS_FILE), report.to_csv())?;
    Ok(report)
}

/// How a run produces fused images.
pub enum Method {
    Backbone(BackboneParams),
    Exp,
    Bdsd,
}

impl Method {
    pub fn baseline(name: &str) -> anyhow::Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "exp" => Ok(Method::Exp),
            "bdsd" => Ok(Method::Bdsd),
            _ => Err(Error::Config(format!("unknown baseline '{name}' (expected exp or bdsd)")).into()),
        }
    }

    fn full(&self, t: &SceneTriplet, model: &SensorModel) -> panlab::Result<Raster> {
        match self {
            Method::Backbone(p) => backbone_forward(&t.lrms, &t.pan, p),
            Method::Exp => exp_upsample(&t.lrms),
            Method::Bdsd => bdsd_fuse(&t.lrms, &t.pan, model),
        }
    }

    fn reduced(&self, t: &SceneTriplet, model: &SensorModel) -> panlab::Result<Raster> {
        match self {
            Method::Backbone(p) => fuse_reduced(t, p, model),
            Method::Exp => upsample_bicubic(&reduce_inputs(t, model)?.0, model.ratio),
            Method::Bdsd => {
                let (lr, pan) = reduce_inputs(t, model)?;
                bdsd_fuse(&lr, &pan, model)
            }
        }
    }
}

/// Dataset-average scores: QNR family at full resolution, reference-based
/// indices at reduced resolution against the original LRMS.
pub fn score_dataset(method: &Method, data: &[SceneTriplet], model: &SensorModel) -> panlab::Result<MetricReport> {
    let mut sums = [0.0f64; 7];
    for t in data {
        let full = evaluate(&method.full(t, model)?, &t.lrms, &t.pan, None, model)?;
        let (lr, pan) = reduce_inputs(t, model)?;
        let reduced = evaluate(&method.reduced(t, model)?, &lr, &pan, Some(&t.lrms), model)?;
        let v = [
            reduced.mpsnr,
            reduced.ergas,
            reduced.sam,
            reduced.q2n,
            full.d_lambda,
            full.d_s,
            full.qnr,
        ];
        for (s, x) in sums.iter_mut().zip(v) {
            *s += x.expect("evaluated with the needed inputs");
        }
    }
    let n = data.len() as f64;
    let m = sums.map(|s| Some(s / n));
    Ok(MetricReport {
        mpsnr: m[0],
        ergas: m[1],
        sam: m[2],
        q2n: m[3],
        d_lambda: m[4],
        d_s: m[5],
        qnr: m[6],
    })
}

/// Scores a trained run directory, or a baseline into `cfg.output`, on a
/// held-out dataset and writes `metrics.csv` plus a preview of the first
/// scene.
pub fn eval_dataset(cfg: &RunConfig, dataset: &Path, run: Option<&Path>, baseline: Option<&str>) -> anyhow::Result<MetricReport> {
    let (method, out) = match (run, baseline) {
        (Some(dir), None) => {
            let p = dir.join(BACKBONE_CKPT);
            let params = BackboneParams::read(&p).with_context(|| format!("loading {}", p.display()))?;
            (Method::Backbone(params), dir.to_path_buf())
        }
        (None, Some(name)) => (Method::baseline(name)?, cfg.output.clone()),
        _ => return Err(Error::Config("give exactly one of a run directory or a baseline".into()).into()),
    };
    let data = read_dataset(dataset)?;
    check_bands(cfg, &data)?;
    let model = cfg.sensor_model();
    let report = score_dataset(&method, &data, &model)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    if run.is_none() {
        write(out.join(CONFIG_FILE), cfg.to_kv())?;
        write(out.join(BASELINE_FILE), format!("{}\n", baseline.expect("checked").to_ascii_uppercase()))?;
    }
    let first = method.full(&data[0], &model)?;
    write(out.join(preview_name(first.bands())), export_preview(&first, preview_map(first.bands()))?)?;
    write(out.join(METRICS_FILE), report.to_csv())?;
    Ok(report)
}

/// One line of the aggregate report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub label: String,
    pub config: Option<RunConfig>,
    pub metrics: Option<MetricReport>,
}

pub const REPORT_CONFIG_COLUMNS: [&str; 6] = ["seed", "bands", "prompt", "projection", "stage2_iterations", "stage2_batch_size"];

fn read_run(dir: &Path) -> ReportRow {
    let run = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let config = fs::read_to_string(dir.join(CONFIG_FILE))
        .ok()
        .and_then(|t| RunConfig::from_kv(&t).ok());
    let metrics = fs::read_to_string(dir.join(METRICS_FILE))
        .ok()
        .and_then(|t| MetricReport::from_csv(&t));
    let label = match fs::read_to_string(dir.join(BASELINE_FILE)) {
        Ok(name) => name.trim().to_string(),
        Err(_) => config.as_ref().map_or_else(|| "unknown".into(), |c| c.groups().to_string()),
    };
    ReportRow {
        run,
        label,
        config,
        metrics,
    }
}

fn metric_fields(m: Option<&MetricReport>) -> String {
    m.map_or_else(|| ",".repeat(6), MetricReport::csv_row)
}

/// Aggregates run directories into `report.csv` (sorted by run name) and
/// the ablation table `ablation.csv`. Fails after writing both if any run
/// lacks a metrics file.
pub fn report(cfg: &RunConfig, runs: &[PathBuf]) -> anyhow::Result<Vec<ReportRow>> {
    let mut rows: Vec<ReportRow> = runs.iter().map(|d| read_run(d)).collect();
    rows.sort_by(|a, b| a.run.cmp(&b.run));
    prepare_dir(cfg, &cfg.output)?;
    let mut text = format!("run,label,{},status,{METRIC_HEADER}\n", REPORT_CONFIG_COLUMNS.join(","));
    for r in &rows {
        let cols: Vec<String> = REPORT_CONFIG_COLUMNS
            .iter()
            .map(|k| r.config.as_ref().and_then(|c| c.get(k)).unwrap_or_default())
            .collect();
        let status = if r.metrics.is_some() { "ok" } else { "incomplete" };
        text.push_str(&format!(
            "{},{},{},{status},{}\n",
            r.run,
            r.label,
            cols.join(","),
            metric_fields(r.metrics.as_ref())
        ));
    }
    write(cfg.output.join(REPORT_FILE), text)?;
    write(cfg.output.join(ABLATION_FILE), ablation_table(&rows))?;
    let missing: Vec<&str> = rows.iter().filter(|r| r.metrics.is_none()).map(|r| r.run.as_str()).collect();
    if !missing.is_empty() {
        return Err(Error::Contract(format!("runs without {METRICS_FILE}: {}", missing.join(", "))).into());
    }
    Ok(rows)
}

/// The five ablation rows in their canonical order, filled from the first
/// run (by name) whose loss groups match.
pub fn ablation_table(rows: &[ReportRow]) -> String {
    let mut text = format!("configuration,run,status,{METRIC_HEADER}\n");
    for label in ABLATION_ROWS {
        let want: LossGroups = label.parse().expect("canonical label");
        let hit = rows.iter().find(|r| {
            r.config.as_ref().is_some_and(|c| c.groups() == want) && r.label == want.to_string()
        });
        let (run, status, metrics) = match hit {
            Some(r) => (r.run.as_str(), if r.metrics.is_some() { "ok" } else { "incomplete" }, r.metrics.as_ref()),
            None => ("", "missing", None),
        };
        text.push_str(&format!("{label},{run},{status},{}\n", metric_fields(metrics)));
    }
    text
}

/// Held-out Stage I checks: nearest-prompt accuracy and per-type mean
/// cosine between distinct scenes.
pub fn stage1_diagnostics(encoder: &Path, dataset: &Path) -> anyhow::Result<(f64, [f64; 3])> {
    let params = EncoderParams::read(encoder)?;
    let data = read_dataset(dataset)?;
    Ok((modality_accuracy(&params, &data)?, same_type_cosines(&params, &data)?))
}

/// Used by diagnostics output.
pub fn kind_names() -> [&'static str; 3] {
    ImageKind::ALL.map(|k| k.tag())
}
