use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stiffsense::pipeline::{self, PipelineConfig};
use stiffsense::Error;

/// Damping estimation and stress classification from pointing trajectories.
#[derive(Debug, Parser)]
#[command(name = "stiffsense", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic trial set with known parameters.
    Synth(Args),
    /// Run the LPC and MSD estimators on every trial.
    Estimate(Args),
    /// Correlate LPC against MSD estimates and summarize conditions.
    Correlate(Args),
    /// Run the per-participant, per-distance classification experiment.
    Classify(Args),
    /// Merge stored artifacts into one report.
    Report(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

fn run(cli: Cli) -> Result<(), Error> {
    let args = match &cli.command {
        Command::Synth(a) | Command::Estimate(a) | Command::Correlate(a) | Command::Classify(a) | Command::Report(a) => a,
    };
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;

    pipeline::with_jobs(args.jobs, || -> Result<(), Error> {
        match cli.command {
            Command::Synth(_) => {
                let s = pipeline::cmd_synth(&cfg)?;
                println!("{} trials written to {}", s.trials, s.dir.display());
            }
            Command::Estimate(_) => {
                let store = pipeline::cmd_estimate(&cfg)?;
                println!(
                    "{} trials estimated ({} LPC failures, {} MSD failures, {} files rejected)",
                    store.ingested_trials, store.failures.lpc, store.failures.msd, store.rejected_files
                );
            }
            Command::Correlate(_) => {
                let c = pipeline::cmd_correlate(&cfg)?;
                println!(
                    "{} paired rows, {} MSD outliers dropped, {} thresholds",
                    c.counts.paired_rows,
                    c.counts.msd_outliers_dropped,
                    c.curve.points.len()
                );
            }
            Command::Classify(_) => {
                let r = pipeline::cmd_classify(&cfg)?;
                print!("{}", r.table_csv());
            }
            Command::Report(_) => {
                pipeline::cmd_report(&cfg)?;
                println!("report written to {}", cfg.out_dir.join(pipeline::REPORT_JSON).display());
            }
        }
        Ok(())
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
