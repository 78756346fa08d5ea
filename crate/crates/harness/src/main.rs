use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ive_harness::config::ExperimentSpec;
use ive_harness::experiment::{resolve_threads, run_experiment, write_outputs};
use ive_harness::verify::run_checks;
use ive_harness::HarnessError;

#[derive(Parser)]
#[command(name = "ive", version, about = "Blind source extraction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the trial count of the config.
        #[arg(long)]
        trials: Option<usize>,
        /// Overrides the base seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; falls back to IVE_THREADS.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the acceptance checks; exits non-zero if any fails.
    Verify {
        #[arg(long)]
        threads: Option<usize>,
        /// Run only the checks with these ids.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

fn run(
    config: PathBuf,
    out: PathBuf,
    trials: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<(), HarnessError> {
    let mut spec = ExperimentSpec::load(&config)?;
    if let Some(n) = trials {
        spec.trials = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let output = run_experiment(&spec, resolve_threads(threads)?)?;
    write_outputs(&out, &spec, &output)?;
    for alg in &output.summary.algorithms {
        for p in &alg.points {
            let isr = p.isr_trimmed_mean.map_or("n/a".to_string(), |v| format!("{v:.2} dB"));
            println!("{:<28} value {:<10} ISR {isr:<12} iterations {:.1} failures {}", alg.label, p.value, p.mean_iterations, p.failures);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, trials, seed, threads } => match run(config, out, trials, seed, threads) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Verify { threads, only } => {
            let threads = match resolve_threads(threads) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let results = run_checks(threads, &only);
            for r in &results {
                println!("{r}");
            }
            if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
