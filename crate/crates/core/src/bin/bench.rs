//! `bench run | plot | verify`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use msna::bench::{emit_plots, run_experiment, RunConfig};
use msna::verify;

#[derive(Parser)]
#[command(name = "bench", version, about = "Streaming stochastic Newton benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `workers` from the config.
        #[arg(long)]
        workers: Option<usize>,
        /// Synthetic runs at d = 1000, N = 10^7.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Render a log-log SVG of one metric from a results CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        metric: String,
        /// Defaults to the directory of the CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical property checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> msna::Result<bool> {
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            paper_scale,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if paper_scale {
                cfg.paper_scale();
            }
            let base = config.parent().map(PathBuf::from).unwrap_or_default();
            let summary = run_experiment(&cfg, &base)?;
            let failed = summary.meta.jobs.iter().filter(|j| j.error.is_some()).count();
            println!("wrote {} rows to {}", summary.records.len(), summary.csv_path.display());
            println!("metadata in {}", summary.json_path.display());
            if failed > 0 {
                eprintln!("{failed} job(s) failed; see the metadata file");
            }
            Ok(failed == 0)
        }
        Command::Plot { csv, metric, out } => {
            let dir = out.unwrap_or_else(|| csv.parent().map(PathBuf::from).unwrap_or_default());
            let (path, series) = emit_plots(&csv, &metric, &dir)?;
            println!("{} ({} series)", path.display(), series.len());
            Ok(true)
        }
        Command::Verify { seed } => {
            let reports = verify::suite(seed);
            let mut ok = true;
            for r in &reports {
                println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                ok &= r.passed;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
