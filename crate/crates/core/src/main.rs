use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use core_replay::harness::{
    emit_report, grid_csv, read_summary, run_ablation, run_experiment, run_grid_search, run_seeds, ExperimentConfig,
    Strategy,
};
use core_replay::Error;

#[derive(Parser)]
#[command(name = "core-replay", version, about = "Forgetting-aware replay experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the configured strategy.
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one strategy (all configured seeds unless --seed is given).
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Sweep lambda; repeat --lambda for each grid point (default 1..5).
    GridSearch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: Vec<f64>,
    },
    /// Run the full method and its three ablations.
    Ablation {
        #[command(flatten)]
        common: Common,
    },
    /// Print the summary of a previous run.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    if let Some(name) = &common.strategy {
        cfg.strategy = Strategy::parse(name)?;
    }
    Ok(cfg)
}

fn write_file(path: PathBuf, contents: String) -> Result<(), Error> {
    fs::write(&path, contents).map_err(|source| Error::Io { path, source })
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { common, seed, lambda } => {
            let mut cfg = load(&common)?;
            if let Some(l) = lambda {
                cfg.aqa.lambda = l;
            }
            let report = match seed {
                Some(s) => run_experiment(&cfg, s)?,
                None => run_seeds(&cfg)?,
            };
            emit_report(&report, &common.out)?;
            for run in &report.runs {
                println!("{} seed={} {}", report.label, run.seed, run.metrics.percent_row());
            }
            println!("{} mean {}", report.label, report.metrics.percent_row());
        }
        Command::GridSearch { common, lambda } => {
            let cfg = load(&common)?;
            let lambdas = if lambda.is_empty() { vec![1.0, 2.0, 3.0, 4.0, 5.0] } else { lambda };
            let rows = run_grid_search(&cfg, &lambdas)?;
            fs::create_dir_all(&common.out).map_err(|source| Error::Io {
                path: common.out.clone(),
                source,
            })?;
            write_file(common.out.join("grid.csv"), grid_csv(&rows))?;
            for r in &rows {
                println!("lambda={} {:.2} / {:.2}", r.lambda, 100.0 * r.acc_avg, 100.0 * r.acc_min);
            }
        }
        Command::Ablation { common } => {
            let cfg = load(&common)?;
            let table = run_ablation(&cfg)?;
            fs::create_dir_all(&common.out).map_err(|source| Error::Io {
                path: common.out.clone(),
                source,
            })?;
            write_file(common.out.join("ablation.csv"), table.to_csv())?;
            for r in &table.rows {
                println!("{:<20} {:.2} / {:.2}", r.variant, 100.0 * r.acc_avg, 100.0 * r.acc_min);
            }
        }
        Command::Report { out } => {
            let summary = read_summary(&out)?;
            println!("{} [{}]", summary.label, &summary.fingerprint[..12]);
            for s in &summary.seeds {
                println!("  seed={} {:.2} / {:.2}", s.seed, 100.0 * s.acc_avg, 100.0 * s.acc_min);
            }
            println!("  mean   {}", summary.table_row);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
