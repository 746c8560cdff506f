use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use posym::experiments::score::{HeadSource, ScoreConfig};
use posym::experiments::shapes::{ShapesConfig, TrainedShapeConfig};
use posym::experiments::sweep::SweepConfig;
use posym::experiments::verify::VerifyConfig;
use posym::experiments::{self, CommandOutcome, ExitStatus, RunContext};
use posym::tasks::TaskKind;
use posym::trainer::TrainConfig;
use posym::{Error, Result};

/// Positional versus symbolic rotary attention heads.
#[derive(Parser)]
#[command(name = "posym", version)]
struct Cli {
    /// Root seed recorded in every output.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "posym-out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// JSON file with the command's config (snake_case field names).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exclusion fuzzing, exact constructions, counterexample, shape theorems.
    VerifyTheory {
        #[arg(long)]
        fuzz_samples: Option<usize>,
        /// Run H_POS at three times its angle.
        #[arg(long)]
        corrupt_h_pos: bool,
    },
    /// Positional/symbolic scores per head and per frequency.
    Score {
        /// Score a trained checkpoint instead of the constructed heads.
        #[arg(long, conflicts_with = "random")]
        checkpoint: Option<PathBuf>,
        /// Score this many random heads.
        #[arg(long)]
        random: Option<usize>,
    },
    /// Train one model per (base angle, task) cell.
    Sweep {
        #[arg(long, value_delimiter = ',', value_parser = parse_task)]
        tasks: Option<Vec<TaskKind>>,
        #[arg(long, value_delimiter = ',')]
        base_angles: Option<Vec<f64>>,
        #[arg(long)]
        planes: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Closed-form peak-attention shapes, optionally trained accuracy shapes.
    Shapes {
        /// Also train the low-frequency Index and high-frequency Retrieval models.
        #[arg(long)]
        trained: bool,
    },
    /// Train a single model.
    Train {
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskKind>,
        #[arg(long)]
        base_angle: Option<f64>,
        #[arg(long)]
        second_base_angle: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Record query/key images every epoch.
        #[arg(long)]
        log_qk: bool,
    },
}

fn parse_task(s: &str) -> std::result::Result<TaskKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    match path {
        None => Ok(C::default()),
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
    }
}

fn run(cli: Cli) -> Result<CommandOutcome> {
    let ctx = RunContext::new(cli.seed, &cli.out, cli.workers);
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::VerifyTheory {
            fuzz_samples,
            corrupt_h_pos,
        } => {
            let mut cfg: VerifyConfig = load(cfg_path)?;
            if let Some(s) = fuzz_samples {
                cfg.fuzz_samples = s;
            }
            cfg.corrupt_h_pos |= corrupt_h_pos;
            experiments::run_verify_theory(&cfg, &ctx)
        }
        Command::Score { checkpoint, random } => {
            let mut cfg: ScoreConfig = load(cfg_path)?;
            if let Some(path) = checkpoint {
                cfg.source = HeadSource::Checkpoint { path };
            } else if let Some(count) = random {
                cfg.source = HeadSource::Random {
                    count,
                    d_in: 16,
                    planes: 8,
                };
            }
            experiments::run_score(&cfg, &ctx)
        }
        Command::Sweep {
            tasks,
            base_angles,
            planes,
            epochs,
        } => {
            let mut cfg: SweepConfig = load(cfg_path)?;
            if let Some(t) = tasks {
                cfg.tasks = t;
            }
            if let Some(a) = base_angles {
                cfg.base_angles = a;
            }
            if let Some(p) = planes {
                cfg.planes = p;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            experiments::run_sweep(&cfg, &ctx)
        }
        Command::Shapes { trained } => {
            let mut cfg: ShapesConfig = load(cfg_path)?;
            if trained && cfg.trained.is_empty() {
                cfg.trained = vec![
                    TrainedShapeConfig::low_frequency_index(),
                    TrainedShapeConfig::high_frequency_retrieval(),
                ];
            }
            experiments::run_shapes(&cfg, &ctx)
        }
        Command::Train {
            task,
            base_angle,
            second_base_angle,
            epochs,
            log_qk,
        } => {
            let mut cfg: TrainConfig = load(cfg_path)?;
            if let Some(t) = task {
                cfg.task = t;
            }
            if let Some(a) = base_angle {
                cfg.base_angle = a;
            }
            if second_base_angle.is_some() {
                cfg.second_base_angle = second_base_angle;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.log_qk |= log_qk;
            experiments::run_train(&cfg, &ctx)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(outcome.status.code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(ExitStatus::from_error(&e).code() as u8)
        }
    }
}
