//! Experiment harness CLI: run experiments, generate the synthetic
//! datasets, compare reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use splitstream_cli::{run_compare, run_experiment, ExperimentConfig};
use splitstream_runtime::synth;

#[derive(Parser)]
#[command(name = "splitstream", about = "Spatio-temporal split-learning experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare two or more metrics.json reports of the same task.
    Compare {
        /// Paths to metrics.json files; differences are taken against the
        /// first one.
        reports: Vec<PathBuf>,
        /// Where the comparison CSVs are written.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Generate a synthetic dataset.
    GenData {
        /// cls (16x16 image classes) or reg (cholesterol-style CSV).
        #[arg(long)]
        task: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let artifacts = run_experiment(&cfg)?;
            let f = &artifacts.report.final_metrics;
            println!("run complete: {}", artifacts.out_dir.display());
            for summary in &artifacts.client_summaries {
                println!(
                    "  client sent {} records ({} bytes, {} retries)",
                    summary.records_sent, summary.bytes_sent, summary.retries
                );
            }
            if let Some(acc) = f.accuracy {
                println!("  test accuracy: {acc:.2}%");
            }
            if let (Some(msle), Some(rmsle), Some(smape)) = (f.msle, f.rmsle, f.smape) {
                println!("  test msle: {msle:.6}  rmsle: {rmsle:.6}  smape: {smape:.4}%");
            }
            Ok(())
        }
        Command::Compare { reports, out } => {
            let table = run_compare(&reports, &out)?;
            print!("{table}");
            println!("wrote {} and {}", out.join("compare_final.csv").display(), out.join("compare_curves.csv").display());
            Ok(())
        }
        Command::GenData { task, n, seed, out } => {
            match task.as_str() {
                "cls" => {
                    synth::write_classification_dataset(&out, n, seed)?;
                    println!("wrote {n} images under {}", out.display());
                }
                "reg" => {
                    let path = out.join("cholesterol.csv");
                    synth::write_regression_csv(&path, n, seed)?;
                    println!("wrote {n} rows to {}", path.display());
                }
                other => return Err(format!("unknown task {other:?} (expected cls or reg)").into()),
            }
            Ok(())
        }
    }
}
