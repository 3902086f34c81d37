mod commands;
mod config;
mod scenario;
mod viz;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::RunConfig;

/// Flow-driven pedestrian trajectory prediction and robot navigation.
#[derive(Debug, Parser)]
#[command(name = "flowmno", version)]
struct Cli {
    /// Flat `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for scene generation, initialisation and batch order.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate crowd scenes: frames, ground-truth flows, tracks, detections
    /// and a split manifest.
    GenData,
    /// Dense optical flow between two PGM frames, written as `.flo`.
    Flow {
        prev: PathBuf,
        next: PathBuf,
        /// Also write a color-wheel PPM of the flow.
        #[arg(long)]
        viz: Option<PathBuf>,
    },
    /// Train the operator on a generated dataset; writes the best checkpoint
    /// and `<out>.history.csv`.
    Train { data_dir: PathBuf },
    /// Roll the operator forward from a flow and step each detection's
    /// centroid through the predicted flows.
    Predict {
        checkpoint: PathBuf,
        flow: PathBuf,
        detections: PathBuf,
        /// Steps to predict; defaults to `predict.horizon`.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// ADE / FDE of predicted tracks against ground truth; `--out` adds a CSV.
    Eval { pred: PathBuf, gt: PathBuf },
    /// Closed-loop navigation through a scenario file.
    Navigate {
        scenario: PathBuf,
        /// Constant-velocity pedestrian predictions.
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        oracle: bool,
        /// Operator checkpoint used to predict pedestrian motion.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Frame (or flow color wheel) with boxes and per-box mean-flow arrows.
    Viz {
        flow: PathBuf,
        #[arg(long)]
        frame: Option<PathBuf>,
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Arrow length per pixel of flow.
        #[arg(long, default_value_t = 4.0)]
        arrow_scale: f64,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::GenData => commands::gen_data(&cfg, &cfg.out_path(out)?),
        Command::Flow { prev, next, viz } => commands::flow(&cfg, &prev, &next, &cfg.out_path(out)?, viz.as_deref()),
        Command::Train { data_dir } => commands::train(&cfg, &data_dir, &cfg.out_path(out)?),
        Command::Predict {
            checkpoint,
            flow,
            detections,
            horizon,
        } => {
            if let Some(h) = horizon {
                anyhow::ensure!(h > 0, "--horizon must be positive");
                cfg.horizon = h;
            }
            commands::predict(&cfg, &checkpoint, &flow, &detections, &cfg.out_path(out)?)
        }
        Command::Eval { pred, gt } => commands::eval(&pred, &gt, out.or(cfg.out.as_deref())),
        Command::Navigate {
            scenario, checkpoint, ..
        } => commands::navigate(&cfg, &scenario, checkpoint.as_deref(), &cfg.out_path(out)?).map(drop),
        Command::Viz {
            flow,
            frame,
            detections,
            arrow_scale,
        } => commands::viz(
            &flow,
            frame.as_deref(),
            detections.as_deref(),
            arrow_scale,
            &cfg.out_path(out)?,
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
