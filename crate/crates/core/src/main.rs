use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use mgpp::harness::{
    self, compare_runs, comparison_to_csv, dump_schedule, export_threshold_trajectory, histogram_to_csv,
    load_config_with, run_experiment, trajectory_to_csv,
};
use mgpp::prior::{curve_to_csv, penalty_curve, CurveGrid};

#[derive(Parser)]
#[command(name = "mgpp", version, about = "Mixture Gaussian prior pruning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its run directory.
    Run {
        config: PathBuf,
        /// Preset expanded before the file's keys (replaces the file's `preset`).
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-step schedule of a config as CSV.
    DumpSchedule {
        config: PathBuf,
        #[arg(long)]
        preset: Option<String>,
    },
    /// Histogram of nonzero prunable weights in a checkpoint, as CSV.
    ExportHistogram {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
    /// Prune thresholds recorded in a metrics file, as CSV.
    ExportThresholds { metrics: PathBuf },
    /// Penalty landscape `−log π(θ)` and `−∂/∂θ log π(θ)` on a grid, as CSV.
    ExportPriorCurve {
        config: PathBuf,
        /// Grid as LO:HI:STEP.
        #[arg(long, allow_hyphen_values = true)]
        range: String,
        /// Extra points on ±3× the spike/slab crossing.
        #[arg(long, default_value_t = 0)]
        zoom: usize,
        #[arg(long)]
        preset: Option<String>,
    },
    /// Mean ± sd of final test accuracy per method across metrics files.
    Compare {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

fn validation(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run {
            config,
            preset,
            seed,
            out,
        } => {
            let mut cfg = load_config_with(&config, preset.as_deref()).map_err(validation)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            let summary =
                run_experiment(&cfg).map_err(|e| if e.is_validation() { validation(e) } else { runtime(e) })?;
            println!("{}", serde_json::to_string_pretty(&summary).map_err(runtime)?);
        }
        Command::DumpSchedule { config, preset } => {
            let cfg = load_config_with(&config, preset.as_deref()).map_err(validation)?;
            print!("{}", dump_schedule(&cfg).map_err(validation)?);
        }
        Command::ExportHistogram { checkpoint, bins } => {
            if bins == 0 {
                return Err(validation(anyhow!("--bins must be at least 1")));
            }
            let rows = harness::export_histogram(&checkpoint, bins)
                .with_context(|| format!("reading {}", checkpoint.display()))
                .map_err(runtime)?;
            print!("{}", histogram_to_csv(&rows));
        }
        Command::ExportThresholds { metrics } => {
            let rows = export_threshold_trajectory(&metrics).map_err(runtime)?;
            if rows.is_empty() {
                eprintln!("warning: {} has no prune events; the table is empty", metrics.display());
            }
            print!("{}", trajectory_to_csv(&rows));
        }
        Command::ExportPriorCurve {
            config,
            range,
            zoom,
            preset,
        } => {
            let cfg = load_config_with(&config, preset.as_deref()).map_err(validation)?;
            let grid = CurveGrid::parse(&range).map_err(validation)?.with_zoom(zoom);
            let prior = cfg.mgp().map_err(validation)?;
            print!("{}", curve_to_csv(&penalty_curve(&prior, &grid)));
        }
        Command::Compare { metrics } => {
            let rows = compare_runs(&metrics).map_err(|e| match e {
                harness::metrics::MetricsError::MixedTasks(..) => validation(e),
                other => runtime(other),
            })?;
            print!("{}", comparison_to_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
