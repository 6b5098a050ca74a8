use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use panlab_cli::commands;
use panlab_cli::config::{RunConfig, DEFAULT_OUTPUT_ROOT, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "panlab", version, about = "Two-stage unsupervised pansharpening on simulated scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset of scene triplets.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Stage I: align the encoder on a dataset.
    Align {
        #[arg(long)]
        dataset: PathBuf,
        /// Held-out dataset for modality accuracy and same-type cosine.
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the reduced-resolution pseudo-supervisor.
    Pretrain {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Stage II: train the fusion backbone.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        stage1: Option<PathBuf>,
        #[arg(long)]
        pseudo: Option<PathBuf>,
        /// Train every ablation row into its own subdirectory.
        #[arg(long)]
        sweep: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fuse one LRMS/PAN pair with a trained backbone.
    Fuse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        lrms: PathBuf,
        #[arg(long)]
        pan: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a fused raster, a trained run, or a baseline.
    Eval {
        #[arg(long, conflicts_with = "dataset", requires_all = ["lrms", "pan"])]
        fused: Option<PathBuf>,
        #[arg(long)]
        lrms: Option<PathBuf>,
        #[arg(long)]
        pan: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, required_unless_present = "fused")]
        dataset: Option<PathBuf>,
        /// Run directory holding a backbone checkpoint; metrics are written there.
        #[arg(long, requires = "dataset", conflicts_with = "baseline")]
        run: Option<PathBuf>,
        /// exp or bdsd
        #[arg(long, requires = "dataset")]
        baseline: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Aggregate run directories into report.csv and ablation.csv.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Overrides for every configuration key, applied on top of `--config`.
#[derive(Args)]
struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long = "config")]
    file: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    scenes: Option<String>,
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    bands: Option<String>,
    #[arg(long)]
    mtf_gain: Option<String>,
    #[arg(long)]
    pan_gain: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    align_iterations: Option<String>,
    #[arg(long)]
    pretrain_iterations: Option<String>,
    #[arg(long)]
    stage2_iterations: Option<String>,
    #[arg(long)]
    stage2_batch_size: Option<String>,
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    projection: Option<String>,
    #[arg(long)]
    intra_mode: Option<String>,
    #[arg(long)]
    loss_spec_spat: Option<String>,
    #[arg(long)]
    loss_qnr: Option<String>,
    #[arg(long)]
    loss_pseudo: Option<String>,
    #[arg(long)]
    loss_semantic: Option<String>,
    #[arg(long)]
    w_d: Option<String>,
    #[arg(long)]
    backbone_seed: Option<String>,
    #[arg(long)]
    output: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> [(&'static str, Option<&String>); 23] {
        [
            ("seed", self.seed.as_ref()),
            ("scenes", self.scenes.as_ref()),
            ("size", self.size.as_ref()),
            ("bands", self.bands.as_ref()),
            ("mtf_gain", self.mtf_gain.as_ref()),
            ("pan_gain", self.pan_gain.as_ref()),
            ("batch_size", self.batch_size.as_ref()),
            ("iterations", self.iterations.as_ref()),
            ("lr", self.lr.as_ref()),
            ("align_iterations", self.align_iterations.as_ref()),
            ("pretrain_iterations", self.pretrain_iterations.as_ref()),
            ("stage2_iterations", self.stage2_iterations.as_ref()),
            ("stage2_batch_size", self.stage2_batch_size.as_ref()),
            ("prompt", self.prompt.as_ref()),
            ("projection", self.projection.as_ref()),
            ("intra_mode", self.intra_mode.as_ref()),
            ("loss_spec_spat", self.loss_spec_spat.as_ref()),
            ("loss_qnr", self.loss_qnr.as_ref()),
            ("loss_pseudo", self.loss_pseudo.as_ref()),
            ("loss_semantic", self.loss_semantic.as_ref()),
            ("w_d", self.w_d.as_ref()),
            ("backbone_seed", self.backbone_seed.as_ref()),
            ("output", self.output.as_ref()),
        ]
    }

    /// Defaults, then the file, then flags. Without an explicit output the
    /// run goes to `$PANLAB_OUTPUT_ROOT/<command>`.
    fn resolve(&self, command: &str) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.file {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::from_kv(&text)?
            }
            None => RunConfig::default(),
        };
        let file_sets_output = cfg.output != Path::new(DEFAULT_OUTPUT_ROOT);
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.output.is_none() && !file_sets_output {
            let root = std::env::var_os(OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
            cfg.output = root.join(command);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { config } => {
            let cfg = config.resolve("simulate")?;
            commands::simulate(&cfg)?;
            println!("wrote {} scenes to {}", cfg.scenes, cfg.output.display());
        }
        Command::Align { dataset, holdout, config } => {
            let cfg = config.resolve("align")?;
            let s = commands::align(&cfg, &dataset)?;
            println!("L_s1 {:.6} -> {:.6}", s.initial_loss, s.final_loss);
            if let Some(h) = holdout {
                let (acc, cos) = commands::stage1_diagnostics(&cfg.output.join(commands::ENCODER_CKPT), &h)?;
                let names = commands::kind_names();
                let mut text = format!("accuracy,cos_{},cos_{},cos_{}\n", names[0], names[1], names[2]);
                text.push_str(&format!("{acc},{},{},{}\n", cos[0], cos[1], cos[2]));
                fs::write(cfg.output.join("stage1_eval.csv"), &text)?;
                print!("{text}");
            }
        }
        Command::Pretrain { dataset, config } => {
            let cfg = config.resolve("pretrain")?;
            commands::pretrain(&cfg, &dataset)?;
        }
        Command::Train {
            dataset,
            stage1,
            pseudo,
            sweep,
            config,
        } => {
            let cfg = config.resolve("train")?;
            if sweep {
                for d in commands::train_sweep(&cfg, &dataset, stage1.as_deref(), pseudo.as_deref())? {
                    println!("{}", d.display());
                }
            } else {
                commands::train(&cfg, &dataset, stage1.as_deref(), pseudo.as_deref())?;
            }
        }
        Command::Fuse {
            checkpoint,
            lrms,
            pan,
            config,
        } => {
            let cfg = config.resolve("fuse")?;
            let f = commands::fuse(&cfg, &checkpoint, &lrms, &pan)?;
            println!("{}x{}x{} -> {}", f.bands(), f.height(), f.width(), cfg.output.display());
        }
        Command::Eval {
            fused,
            lrms,
            pan,
            reference,
            dataset,
            run,
            baseline,
            config,
        } => {
            let cfg = config.resolve("eval")?;
            let report = match (fused, dataset) {
                (Some(f), None) => commands::eval_files(
                    &cfg,
                    &f,
                    &lrms.expect("required by clap"),
                    &pan.expect("required by clap"),
                    reference.as_deref(),
                )?,
                (None, Some(d)) => commands::eval_dataset(&cfg, &d, run.as_deref(), baseline.as_deref())?,
                _ => unreachable!("clap enforces exactly one source"),
            };
            print!("{}", report.to_csv());
        }
        Command::Report { runs, config } => {
            let cfg = config.resolve("report")?;
            let rows = commands::report(&cfg, &runs)?;
            println!("{} runs -> {}", rows.len(), cfg.output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(panlab_cli::exit_code(&e) as u8)
        }
    }
}
