use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fusion_core::eval::{emit_report, run_experiment, run_sweep, summary, ExperimentConfig, ResultsRecord};
use fusion_core::{selftest, Error};
use log::error;

#[derive(Parser)]
#[command(name = "fusion", version, about = "Few-shot unsupervised continual learning experiments")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every variant and seed of a config, then write the report.
    Run { config: PathBuf },
    /// Rebuild CSV tables and plots from a results directory.
    Report { results_dir: PathBuf },
    /// Run a config once per value of one parameter.
    Sweep {
        config: PathBuf,
        /// Dotted config key, or a short alias such as `k`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

const VALIDATION: u8 = 1;
const RUNTIME: u8 = 2;

fn fail(e: Error) -> ExitCode {
    error!("{e}");
    ExitCode::from(if e.is_validation() { VALIDATION } else { RUNTIME })
}

fn finish(record: &ResultsRecord) -> ExitCode {
    print!("{}", summary(record));
    if record.failures().next().is_some() {
        ExitCode::from(RUNTIME)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let record = run_experiment(&cfg)?;
            let files = emit_report(&record, &cfg.output.dir)?;
            println!("wrote {}", files.results_csv.display());
            Ok(finish(&record))
        }
        Command::Report { results_dir } => {
            let record = ResultsRecord::load(results_dir.join("results.json"))?;
            let files = emit_report(&record, &results_dir)?;
            println!("wrote {}", files.results_csv.display());
            Ok(finish(&record))
        }
        Command::Sweep { config, param, values } => {
            let cfg = ExperimentConfig::load(&config)?;
            let sweep = run_sweep(&cfg, &param, &values)?;
            print!("{}", sweep.to_csv());
            let failed = sweep.points.iter().any(|p| p.failures > 0);
            Ok(if failed { ExitCode::from(RUNTIME) } else { ExitCode::SUCCESS })
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            Ok(if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(RUNTIME)
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    run(cli).unwrap_or_else(fail)
}
