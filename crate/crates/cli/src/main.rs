use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use reed_cli::run::{cmd_run_fedavg, cmd_sweep, cmd_validate_moments};
use reed_cli::{ExperimentConfig, SweepAxis};

#[derive(Debug, Parser)]
#[command(name = "reed", version, about = "REED over-the-air aggregation experiments")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare Monte Carlo estimator moments against the closed forms.
    ValidateMoments { config: PathBuf },
    /// Run FedAvg for every configured aggregator and trial.
    RunFedavg { config: PathBuf },
    /// Repeat run-fedavg over the values of one axis.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AxisArg {
    #[value(name = "m", alias = "M")]
    M,
    #[value(name = "snr_db", alias = "snr-db")]
    SnrDb,
    #[value(name = "alpha")]
    Alpha,
    #[value(name = "beta0")]
    Beta0,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::M => SweepAxis::M,
            AxisArg::SnrDb => SweepAxis::SnrDb,
            AxisArg::Alpha => SweepAxis::Alpha,
            AxisArg::Beta0 => SweepAxis::Beta0,
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.workers {
        anyhow::ensure!(n > 0, "--workers must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("starting worker pool")?;
    }
    let (path, axis) = match &cli.command {
        Command::ValidateMoments { config } | Command::RunFedavg { config } => (config, None),
        Command::Sweep { config, axis } => (config, Some(SweepAxis::from(*axis))),
    };
    let cfg = load(path, cli.seed)?;
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir());
    match cli.command {
        Command::ValidateMoments { .. } => cmd_validate_moments(&cfg, &out),
        Command::RunFedavg { .. } => {
            let summary = cmd_run_fedavg(&cfg, &out)?;
            for a in &summary.aggregators {
                println!(
                    "{:<14} final train loss {:.6} +- {:.6}{}",
                    a.aggregator,
                    a.final_train_loss.mean,
                    a.final_train_loss.std,
                    a.final_test_acc
                        .map(|m| format!(", test acc {:.4} +- {:.4}", m.mean, m.std))
                        .unwrap_or_default()
                );
            }
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Sweep { .. } => {
            let summary = cmd_sweep(&cfg, axis.expect("sweep axis"), &out)?;
            for p in &summary.points {
                for a in &p.summary.aggregators {
                    let gap = a.gap_to_ideal.map(|g| format!(" gap {:.4}", g.mean)).unwrap_or_default();
                    println!("{}={:<8} {:<14}{gap}", summary.axis, p.value, a.aggregator);
                }
            }
            println!("wrote {}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some moment points failed their tolerance");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
