//! The `stamo` command-line interface.
//!
//! One subcommand per experiment stage; every run writes its artifacts plus
//! a validating manifest into its own run directory. With identical flags
//! and seeds, reruns produce byte-identical CSV/JSON artifacts (the manifest
//! carries wall-clock timestamps; everything else is pure).

mod commands;
mod config;
mod manifest;
mod report;

pub use config::{EvalConfig, ExperimentConfig, ReconstructConfig};
pub use manifest::{hash_inputs, run_id, RunManifest, RunRecorder, MANIFEST_NAME};

use crate::error::{Error, Result};
use clap::{CommandFactory, Parser, Subcommand};
use std::path::PathBuf;

pub const RUNS_DIR_ENV: &str = "STAMO_RUNS_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "stamo",
    about = "Compact two-token visual states with emergent latent motion",
    disable_version_flag = true
)]
pub struct Cli {
    /// Experiment configuration file (JSON, strict schema).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Root seed applied to every stage.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,

    /// Output run directory (default: $STAMO_RUNS_DIR/<run-id>).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Use the published full-scale training profile (batch 512, lr 3e-5,
    /// weight decay 1e-3, seed 33, two 1024-wide tokens).
    #[arg(long, global = true)]
    pub paper_scale: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scripted demonstration dataset.
    GenData {
        /// Allow replacing an existing non-empty dataset directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Train the diffusion autoencoder on a dataset.
    TrainDae {
        /// Dataset directory produced by gen-data.
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
    },
    /// Reconstruct dataset frames through the trained autoencoder and report
    /// PSNR/SSIM per split.
    Reconstruct {
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Euler steps for sampling (0 is a usage error).
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        n_images: usize,
    },
    /// Decode a latent interpolation between two images into a frame strip.
    Interpolate {
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PNG")]
        image_a: PathBuf,
        #[arg(long, value_name = "PNG")]
        image_b: PathBuf,
        #[arg(long, default_value_t = 8)]
        frames: usize,
    },
    /// Decode tokens(3) + tokens(2) - tokens(1): motion transfer across scenes.
    Transfer {
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PNG")]
        image_1: PathBuf,
        #[arg(long, value_name = "PNG")]
        image_2: PathBuf,
        #[arg(long, value_name = "PNG")]
        image_3: PathBuf,
    },
    /// Linear-probe motion representations against ground-truth actions.
    Probe {
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
    },
    /// Behavior-clone a policy, optionally with a future-state head.
    TrainPolicy {
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Autoencoder checkpoint (required when the config enables
        /// future-state targets).
        #[arg(long, value_name = "DIR")]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a policy checkpoint closed-loop.
    EvalPolicy {
        #[arg(long, value_name = "DIR")]
        policy: PathBuf,
    },
    /// Co-train on action-labeled robot data plus pseudo-labeled video data.
    Cotrain {
        #[arg(long, value_name = "DIR")]
        robot_dataset: PathBuf,
        #[arg(long, value_name = "DIR")]
        video_dataset: PathBuf,
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
    },
    /// Consolidate run directories into a markdown report with plots.
    Report {
        /// Run directories to consolidate.
        #[arg(value_name = "DIR", required = true)]
        runs: Vec<PathBuf>,
    },
}

/// Long help text (pinned by a golden-file test).
pub fn help_text() -> String {
    Cli::command().render_long_help().to_string()
}

fn resolve_out_dir(cli_out: &Option<PathBuf>, run_id: &str) -> PathBuf {
    if let Some(out) = cli_out {
        return out.clone();
    }
    let root = std::env::var(RUNS_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from("runs"));
    root.join(run_id)
}

/// Execute a parsed command; returns the manifest of the finished run.
pub fn execute(cli: Cli, raw_args: &[String]) -> Result<RunManifest> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if cli.paper_scale {
        cfg.apply_paper_scale();
    }
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    let seeds = vec![cli.seed.unwrap_or(cfg.data.seed)];
    let cfg_json = serde_json::to_value(&cfg)?;

    let (name, inputs): (&str, Vec<PathBuf>) = match &cli.command {
        Command::GenData { .. } => ("gen-data", vec![]),
        Command::TrainDae { dataset } => ("train-dae", vec![dataset.clone()]),
        Command::Reconstruct { checkpoint, dataset, steps, .. } => {
            if *steps == 0 {
                return Err(Error::Config("--steps must be at least 1".into()));
            }
            ("reconstruct", vec![checkpoint.clone(), dataset.clone()])
        }
        Command::Interpolate { checkpoint, image_a, image_b, frames } => {
            if *frames < 2 {
                return Err(Error::Config("--frames must be at least 2".into()));
            }
            ("interpolate", vec![checkpoint.clone(), image_a.clone(), image_b.clone()])
        }
        Command::Transfer { checkpoint, image_1, image_2, image_3 } => (
            "transfer",
            vec![checkpoint.clone(), image_1.clone(), image_2.clone(), image_3.clone()],
        ),
        Command::Probe { checkpoint, dataset } => {
            ("probe", vec![checkpoint.clone(), dataset.clone()])
        }
        Command::TrainPolicy { dataset, checkpoint } => {
            let mut v = vec![dataset.clone()];
            v.extend(checkpoint.clone());
            ("train-policy", v)
        }
        Command::EvalPolicy { policy } => ("eval-policy", vec![policy.clone()]),
        Command::Cotrain { robot_dataset, video_dataset, checkpoint } => (
            "cotrain",
            vec![robot_dataset.clone(), video_dataset.clone(), checkpoint.clone()],
        ),
        Command::Report { runs } => ("report", runs.clone()),
    };

    let rid = run_id(name, raw_args, &cfg_json, &seeds);
    let out_dir = resolve_out_dir(&cli.out, &rid);
    let recorder = RunRecorder::begin(
        out_dir,
        name,
        raw_args.to_vec(),
        cfg_json,
        seeds,
        &inputs,
    )?;

    match cli.command {
        Command::GenData { overwrite } => commands::gen_data(&cfg, recorder, overwrite),
        Command::TrainDae { dataset } => commands::train_dae(&cfg, recorder, &dataset),
        Command::Reconstruct { checkpoint, dataset, steps, n_images } => {
            commands::reconstruct(&cfg, recorder, &checkpoint, &dataset, steps, n_images)
        }
        Command::Interpolate { checkpoint, image_a, image_b, frames } => {
            commands::interpolate(&cfg, recorder, &checkpoint, &image_a, &image_b, frames)
        }
        Command::Transfer { checkpoint, image_1, image_2, image_3 } => {
            commands::transfer(&cfg, recorder, &checkpoint, &image_1, &image_2, &image_3)
        }
        Command::Probe { checkpoint, dataset } => {
            commands::probe(&cfg, recorder, &checkpoint, &dataset)
        }
        Command::TrainPolicy { dataset, checkpoint } => {
            commands::train_policy(&cfg, recorder, &dataset, checkpoint.as_deref())
        }
        Command::EvalPolicy { policy } => commands::eval_policy(&cfg, recorder, &policy),
        Command::Cotrain { robot_dataset, video_dataset, checkpoint } => {
            commands::cotrain(&cfg, recorder, &robot_dataset, &video_dataset, &checkpoint)
        }
        Command::Report { runs } => report::consolidate(recorder, &runs),
    }
}

/// Parse argv-style arguments and execute; the testable entry point.
pub fn run_from<I>(args: I) -> Result<RunManifest>
where
    I: IntoIterator<Item = String>,
{
    let raw: Vec<String> = args.into_iter().collect();
    let cli = Cli::try_parse_from(&raw).map_err(|e| Error::Config(e.to_string()))?;
    execute(cli, &raw[1..])
}

/// Process entry point: returns the exit code.
pub fn main_entry() -> i32 {
    let args: Vec<String> = std::env::args().collect();
    // let clap print help/usage itself
    match Cli::try_parse_from(&args) {
        Ok(cli) => match execute(cli, &args[1..]) {
            Ok(manifest) => {
                println!("run {} finished: {} outputs", manifest.run_id, manifest.outputs.len());
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
        Err(e) => {
            // --help / --version land here with exit code 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
