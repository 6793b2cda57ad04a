//! Experiment runner. Configuration problems exit 2; runtime failures
//! exit 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shortcut_lens::cli::{
    cmd_analyze, cmd_eval, cmd_sweep, cmd_train, spawn_sweep_points, ExperimentConfig, Resolved,
};
use shortcut_lens::error::{Error, Result};

#[derive(Parser)]
#[command(
    name = "shortcut-lens",
    version,
    about = "Self-supervised pretraining with automatic shortcut removal"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment file (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Override every seed in the experiment
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config's out_dir, else runs/<name>)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pretrain the configured model
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the latest checkpoint; no-op if already complete
        #[arg(long)]
        resume: bool,
    },
    /// Probe frozen representations of a checkpoint
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (default: newest under the output dir)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render lens difference figures and residual statistics
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (default: newest under the output dir)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and probe one run per reconstruction weight
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated reconstruction weights, e.g. 0.01,0.1,1,10
        #[arg(long)]
        lambdas: String,
        /// Continue a previously interrupted sweep
        #[arg(long)]
        resume: bool,
        /// Run sweep points as concurrent child processes
        #[arg(long)]
        parallel: bool,
    },
}

fn resolve(common: &Common) -> Result<Resolved> {
    ExperimentConfig::load(&common.config)?.resolve(common.seed, common.out.clone())
}

fn parse_lambdas(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| Error::config(format!("bad weight {p:?} in --lambdas")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { common, resume } => {
            let resolved = resolve(&common)?;
            let record = cmd_train(&resolved, resume)?;
            println!(
                "trained {} steps ({} per epoch) in {:.1}s",
                record.steps, record.steps_per_epoch, record.wall_seconds
            );
            println!("checkpoint: {}", record.final_checkpoint.display());
            println!("metrics:    {}", record.metrics_path.display());
            println!("record:     {}", resolved.out_dir.join("record.json").display());
        }
        Cmd::Eval { common, checkpoint } => {
            let resolved = resolve(&common)?;
            let report = cmd_eval(&resolved, checkpoint.as_deref())?;
            println!(
                "top-1 accuracy {:.4} ({:?} mode, {} test images)",
                report.top1, report.mode, report.test_examples
            );
            if let Some(sb) = &report.shape_bias {
                match sb.score {
                    Some(s) => println!(
                        "shape bias {:.4} ({} shape / {} texture / {} undetermined)",
                        s, sb.shape_matches, sb.texture_matches, sb.undetermined
                    ),
                    None => println!("shape bias undetermined (no prediction matched either label)"),
                }
            }
            println!(
                "report:     {}",
                resolved.out_dir.join("eval/report.json").display()
            );
        }
        Cmd::Analyze { common, checkpoint } => {
            let resolved = resolve(&common)?;
            let outputs = cmd_analyze(&resolved, checkpoint.as_deref())?;
            println!("mean per-image reconstruction loss {:.6e}", outputs.per_image_mean);
            println!("panel:     {}", outputs.panel.display());
            println!("mean map:  {}", outputs.mean_map.display());
            println!("stats:     {}", outputs.stats_dir.display());
        }
        Cmd::Sweep {
            common,
            lambdas,
            resume,
            parallel,
        } => {
            let resolved = resolve(&common)?;
            let values = parse_lambdas(&lambdas)?;
            if parallel {
                spawn_sweep_points(&resolved, &values)?;
            }
            // After parallel training the sweep below finds each point
            // complete and only runs the evaluations.
            let report = cmd_sweep(&resolved, &values, resume || parallel)?;
            println!(
                "best lambda {} with top-1 accuracy {:.4} over {} points",
                report.best_lambda, report.best_accuracy, report.points
            );
            if let Some(rho) = report.spearman_rec_lambda {
                println!("rank correlation (weight vs final recon loss): {rho:.3}");
            }
            println!("table:     {}", report.table.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
