mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::ConfigOverrides;
use qdyn_core::CoreError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Wave-packet emulation workbench: simulate, distill, train, roll out,
/// evaluate, sweep, and interpret.
#[derive(Parser)]
#[command(name = "qdyn", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate wave packets over the configured case set
    Simulate {
        #[command(flatten)]
        cfg: ConfigOverrides,
    },
    /// Distill trajectories into a windowed training dataset
    Curriculum {
        /// Trajectory directory (default: <output>/trajectories)
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigOverrides,
    },
    /// Train a surrogate model on a windowed dataset
    Train {
        /// Dataset directory (default: <output>/dataset)
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigOverrides,
    },
    /// Run a closed-loop emulation of one recorded trajectory
    Rollout {
        /// Checkpoint directory
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trajectory directory
        #[arg(long)]
        trajectory: PathBuf,
        #[command(flatten)]
        cfg: ConfigOverrides,
    },
    /// Score a checkpoint (or the oracle) on a benchmark suite
    Evaluate {
        /// Checkpoint directory (omit with --oracle)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigOverrides,
    },
    /// Sweep a physics axis across checkpoints, or retrain over a
    /// hyper-parameter axis
    Sweep {
        /// Checkpoint directories (generalization sweeps)
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Trajectory directory for hyper sweeps (default: <output>/trajectories)
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigOverrides,
    },
    /// Compute input-attribution maps and symmetry diagnostics
    Interpret {
        /// Checkpoint directory
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (default: <output>/dataset)
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigOverrides,
    },
    /// Re-run a full pipeline end to end (targets: table1)
    Reproduce {
        target: String,
        #[command(flatten)]
        cfg: ConfigOverrides,
    },
    /// Describe a checkpoint, dataset, or trajectory directory
    Inspect { path: PathBuf },
}

fn run(cmd: Cmd) -> anyhow::Result<serde_json::Value> {
    match cmd {
        Cmd::Simulate { cfg } => commands::simulate(&cfg.resolve()?),
        Cmd::Curriculum { trajectories, cfg } => {
            commands::curriculum(&cfg.resolve()?, trajectories.as_deref())
        }
        Cmd::Train { dataset, cfg } => {
            commands::train_model(&cfg.resolve()?, dataset.as_deref(), "train")
        }
        Cmd::Rollout {
            checkpoint,
            trajectory,
            cfg,
        } => commands::rollout_trajectory(&cfg.resolve()?, &checkpoint, &trajectory),
        Cmd::Evaluate { checkpoint, cfg } => {
            commands::evaluate_suite(&cfg.resolve()?, checkpoint.as_deref(), "evaluate")
        }
        Cmd::Sweep {
            checkpoint,
            trajectories,
            cfg,
        } => commands::sweep(&cfg.resolve()?, &checkpoint, trajectories.as_deref()),
        Cmd::Interpret {
            checkpoint,
            dataset,
            cfg,
        } => commands::interpret(&cfg.resolve()?, &checkpoint, dataset.as_deref()),
        Cmd::Reproduce { target, cfg } => commands::reproduce(&cfg.resolve()?, &target),
        Cmd::Inspect { path } => commands::inspect(&path),
    }
}

/// Numerical breakdowns (non-finite fields, norm drift, diverged training)
/// exit 2; everything else that fails exits 1.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            match core {
                CoreError::NonFinite(_)
                | CoreError::NormDrift { .. }
                | CoreError::Diverged { .. } => return 2,
                _ => return 1,
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).unwrap_or_else(|_| summary.to_string())
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
