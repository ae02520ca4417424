//! `ulm` — microbubble localization pipeline driver.
//!
//! Subcommands cover the whole run: `simulate` synthetic data, `split` it by
//! frame correlation, `train` the detector, `infer` detections, `evaluate`
//! them, and `render` super-resolution maps. Behavior comes from a JSON
//! config (defaults < file < `--set` overrides < dedicated flags); the fully
//! resolved config is echoed into every output directory.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ulm", version, about = "Microbubble localization pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file; defaults apply for missing keys.
    #[arg(long, global = true, env = "ULM_CONFIG")]
    config: Option<PathBuf>,
    /// Override one config value, e.g. --set train.epochs=5 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY.PATH=VALUE")]
    sets: Vec<String>,
    /// Master seed; wins over the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap the worker thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with COCO ground truth.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Independent scenes to simulate; wins over the config.
        #[arg(long)]
        scenes: Option<usize>,
        /// Frames per scene; wins over the config.
        #[arg(long)]
        frames_per_scene: Option<usize>,
        /// Also write PNG previews.
        #[arg(long)]
        previews: bool,
    },
    /// Select a low-correlation test split and write the manifest.
    Split {
        #[arg(long)]
        data: PathBuf,
        /// Manifest path; defaults to `<data>/split.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        test_size: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train the detector from scratch (or resume from a checkpoint).
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Split manifest; defaults to `<data>/split.json`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint instead of initializing fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run patch-split inference over frames and write detections.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to one side of a split manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Which frames to run when a manifest is given.
        #[arg(long, value_parser = ["train", "test", "all"], default_value = "all")]
        subset: String,
    },
    /// Score detections against ground truth.
    Evaluate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict scoring to one side of a split manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_parser = ["train", "test", "all"], default_value = "all")]
        subset: String,
    },
    /// Accumulate centroids into a super-resolution map.
    Render {
        /// Detections to render; omit with --from-ground-truth.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Render the dataset's ground-truth centroids instead.
        #[arg(long)]
        from_ground_truth: bool,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors that decide the exit code.
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    fn usage<E: std::fmt::Display>(e: E) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.common.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        ulm_core::init_thread_pool(threads).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut sets = cli.common.sets.clone();
    if let Some(seed) = cli.common.seed {
        sets.push(format!("seed={seed}"));
    }
    // dedicated flags win: append after --set overrides
    match &cli.command {
        Command::Simulate { scenes, frames_per_scene, previews, .. } => {
            if let Some(s) = scenes {
                sets.push(format!("simulator.scenes={s}"));
            }
            if let Some(f) = frames_per_scene {
                sets.push(format!("simulator.frames_per_scene={f}"));
            }
            if *previews {
                sets.push("simulator.previews=true".into());
            }
        }
        Command::Split { test_size, threshold, .. } => {
            if let Some(t) = test_size {
                sets.push(format!("split.test_size={t}"));
            }
            if let Some(t) = threshold {
                sets.push(format!("split.threshold={t}"));
            }
        }
        Command::Train { epochs, .. } => {
            if let Some(e) = epochs {
                sets.push(format!("train.epochs={e}"));
            }
        }
        _ => {}
    }
    let config = ulm_core::config::PipelineConfig::load(cli.common.config.as_deref(), &sets)
        .map_err(CliError::usage)?;

    match cli.command {
        Command::Simulate { out, .. } => commands::simulate(&config, &out),
        Command::Split { data, out, .. } => {
            let out = out.unwrap_or_else(|| data.join("split.json"));
            commands::split(&config, &data, &out)
        }
        Command::Train { data, manifest, out, resume, .. } => {
            let manifest = manifest.unwrap_or_else(|| data.join("split.json"));
            commands::train(&config, &data, &manifest, &out, resume.as_deref())
        }
        Command::Infer { checkpoint, data, out, manifest, subset } => {
            commands::infer(&config, &checkpoint, &data, &out, manifest.as_deref(), &subset)
        }
        Command::Evaluate { detections, data, out, manifest, subset } => {
            commands::evaluate(&config, &detections, &data, &out, manifest.as_deref(), &subset)
        }
        Command::Render { detections, from_ground_truth, data, out } => {
            if detections.is_some() == from_ground_truth {
                return Err(CliError::Usage(
                    "pass exactly one of --detections or --from-ground-truth".into(),
                ));
            }
            commands::render(&config, detections.as_deref(), &data, &out)
        }
    }
}
