use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vsod_core::syndata::{generate_dataset, write_dataset, DatasetConfig};
use vsod_core::FusionMode;
use vsod_harness::data::load_samples;
use vsod_harness::{ablate, evaluate, infer, model_from_checkpoint, train, Checkpoint, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "vsod", about = "Two-stream video saliency: train, evaluate, ablate, infer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint.bin to --out.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from this checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset; writes report.json and maps to --out.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score several fusion modes over several seeds.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "concat,cag_only,dde_only,cag_dde")]
        modes: Vec<FusionMode>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Write saliency maps for a directory of RGB frames and flow renderings.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset.
    GenData {
        /// TOML dataset description.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        corrupt_fraction: Option<f64>,
        /// Also store exact flow fields next to the renderings.
        #[arg(long)]
        raw_flow: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fusion_mode: Option<FusionMode>,
    #[arg(long)]
    steps: Option<usize>,
    /// Training dataset root.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.fusion_mode {
            cfg.fusion_mode = m;
        }
        if let Some(n) = self.steps {
            cfg.max_steps = n;
        }
        if let Some(d) = &self.data {
            cfg.train_data = Some(d.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn echo_config(cfg: &TrainConfig) {
    eprintln!("# resolved config\n{}", cfg.to_toml());
    for (key, value) in [("train_data", &cfg.train_data), ("eval_data", &cfg.eval_data)] {
        if value.is_none() {
            eprintln!("# {key} unset");
        }
    }
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    match path {
        Some(p) => Ok(p),
        None => bail!("no {what} given (flag or config key)"),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { run, resume } => {
            let cfg = run.resolve()?;
            let data = load_samples(required(&cfg.train_data, "training data")?)?;
            let mut trainer = match resume {
                Some(p) => {
                    let mut ckpt = Checkpoint::load(&p)?;
                    ckpt.config.max_steps = cfg.max_steps;
                    Trainer::resume(ckpt, data)?
                }
                None => Trainer::new(cfg, data)?,
            };
            echo_config(trainer.config());
            let out = run.out.unwrap_or_else(|| PathBuf::from("."));
            let mut stdout = std::io::stdout().lock();
            train(&mut trainer, Some(&out), &mut stdout)?;
            eprintln!("checkpoint written to {}", out.join("checkpoint.bin").display());
        }
        Command::Eval { checkpoint, data, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            echo_config(&ckpt.config);
            let model = model_from_checkpoint(&ckpt)?;
            let samples = load_samples(&data)?;
            let maps = out.as_ref().map(|o| o.join("maps"));
            let eval = evaluate(&model, &samples, maps.as_deref())?;
            if eval.resized_frames > 0 {
                eprintln!("{} frames resized to a multiple of 32", eval.resized_frames);
            }
            if let Some(e) = eval.confidence_error {
                eprintln!("mean gate confidence error {e:.4}");
            }
            let json = eval.report.to_json();
            println!("{json}");
            if let Some(o) = out {
                std::fs::write(o.join("report.json"), &json).with_context(|| format!("writing {}", o.display()))?;
            }
        }
        Command::Ablate {
            run,
            eval_data,
            modes,
            seeds,
        } => {
            let cfg = run.resolve()?;
            echo_config(&cfg);
            let train_set = load_samples(required(&cfg.train_data, "training data")?)?;
            let eval_path = eval_data.or_else(|| cfg.eval_data.clone());
            let eval_set = load_samples(required(&eval_path, "evaluation data")?)?;
            let mut stderr = std::io::stderr().lock();
            let table = ablate(&cfg, &modes, &seeds, &train_set, &eval_set, &mut stderr)?;
            print!("{table}");
            if let Some(o) = run.out {
                std::fs::create_dir_all(&o)?;
                std::fs::write(o.join("ablation.md"), table.to_string())?;
                std::fs::write(o.join("ablation.json"), table.to_json())?;
            }
        }
        Command::Infer {
            checkpoint,
            rgb,
            flow,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            echo_config(&ckpt.config);
            let model = model_from_checkpoint(&ckpt)?;
            let written = infer(&model, &rgb, &flow, &out)?;
            eprintln!("wrote {} maps to {}", written.len(), out.display());
        }
        Command::GenData {
            config,
            seed,
            sequences,
            corrupt_fraction,
            raw_flow,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    toml::from_str::<DatasetConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => DatasetConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = sequences {
                cfg.sequences = n;
            }
            if let Some(f) = corrupt_fraction {
                cfg.corrupt_fraction = f;
            }
            eprintln!("# resolved dataset config\n{}", toml::to_string(&cfg)?);
            let data = generate_dataset(&cfg)?;
            write_dataset(&out, &data, raw_flow)?;
            eprintln!("wrote {} sequences to {}", data.len(), out.display());
        }
    }
    Ok(())
}
