mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;

/// Object pose estimation from depth point clouds.
#[derive(Debug, Parser)]
#[command(name = "pointpose", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic train/test dataset
    Generate {
        /// Output directory; receives `train/` and `test/`
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: Overrides,
    },
    /// Train the rotation and translation networks
    Train {
        /// Training dataset directory
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file to write
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint, including optimizer state
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also append the epoch log to this file
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        run: Overrides,
    },
    /// Score a checkpoint on a dataset
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Refine every prediction with ICP
        #[arg(long)]
        icp: bool,
        /// Results JSON file
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: Overrides,
    },
    /// Predict the pose of one segmented cloud
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Observed segment as ASCII PLY
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        class_id: usize,
        /// Refine with ICP against this model PLY
        #[arg(long)]
        icp: Option<PathBuf>,
        /// Also write the pose here
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: Overrides,
    },
    /// Run ICP from a given initial pose
    Refine {
        /// Initial pose: `rx ry rz tx ty tz` (axis-angle radians, meters)
        #[arg(long, allow_hyphen_values = true)]
        init: String,
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Alias of --icp-radius
        #[arg(long)]
        radius: Option<f64>,
        /// Alias of --icp-decay
        #[arg(long)]
        decay: Option<f64>,
        /// Also write the refined pose here
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: Overrides,
    },
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Generate { out, run } => commands::generate(&run.resolve()?, &out),
        Command::Train {
            data,
            out,
            resume,
            log,
            run,
        } => commands::train(&run.resolve()?, &data, &out, resume.as_deref(), log.as_deref()),
        Command::Eval {
            checkpoint,
            data,
            icp,
            out,
            run,
        } => commands::eval(&run.resolve()?, &checkpoint, &data, icp, out.as_deref()),
        Command::Infer {
            checkpoint,
            cloud,
            class_id,
            icp,
            out,
            run,
        } => commands::infer(&run.resolve()?, &checkpoint, &cloud, class_id, icp.as_deref(), out.as_deref()),
        Command::Refine {
            init,
            cloud,
            model,
            radius,
            decay,
            out,
            run,
        } => {
            let mut cfg = run.resolve()?;
            cfg.icp_radius = radius.unwrap_or(cfg.icp_radius);
            cfg.icp_decay = decay.unwrap_or(cfg.icp_decay);
            commands::refine(&cfg, &init, &cloud, &model, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
