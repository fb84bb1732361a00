//! Standalone hospital-side client: loads local data, runs the frozen
//! privacy layer and streams feature records to a splitstream server.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use splitstream_cli::ExperimentConfig;
use splitstream_core::{materialize_split, split_model, TaskKind};
use splitstream_proto::Conn;
use splitstream_runtime::{
    load_image_dataset, load_tabular_csv, ClientCfg, ClientRuntime, Sample, TabularStats,
};

#[derive(Parser)]
#[command(name = "splitstream-client", about = "Stream privacy-layer features to a splitstream server")]
struct Cli {
    /// Server address, e.g. 127.0.0.1:7000.
    #[arg(long)]
    server: String,
    #[arg(long)]
    client_id: u32,
    /// Experiment config shared with the server (model, scale, seed, split).
    #[arg(long)]
    config: PathBuf,
    /// Local dataset: class-directory root for images, CSV for tabular.
    #[arg(long)]
    data: PathBuf,
    /// Post-layer Gaussian noise; overrides the config value.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Experiment-wide seed; overrides the config value (must match the
    /// server's or the handshake is rejected).
    #[arg(long)]
    seed: Option<u64>,
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
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(sigma) = cli.noise_sigma {
        cfg.noise_sigma = sigma;
    }
    let spec = cfg.model_spec()?;
    let split = split_model(&spec)?;
    let (client_part, _) = materialize_split::<f32>(&spec)?;
    if split.client_part.layers.is_empty() {
        eprintln!("warning: split_index 0 leaves the privacy layer empty; raw inputs go on the wire");
    }

    let mut samples: Vec<Sample> = match cfg.task() {
        TaskKind::Classification => {
            let (h, w) = (spec.input_shape[0], spec.input_shape[1]);
            load_image_dataset(&cli.data, h, w, &cfg.positive_class)?
        }
        TaskKind::Regression => load_tabular_csv(&cli.data)?,
    };
    if cfg.task() == TaskKind::Regression {
        // Standalone clients normalize against their own local data; the
        // harness modes fit shared statistics on the training split instead.
        let idx: Vec<usize> = (0..samples.len()).collect();
        TabularStats::fit(&samples, &idx)?.apply(&mut samples);
    }

    let runtime = ClientRuntime::new(
        client_part,
        ClientCfg {
            client_id: cli.client_id,
            noise_sigma: cfg.noise_sigma,
            seed: cfg.seed,
            config_hash: split.config_hash,
        },
    );
    let server = cli.server.clone();
    let mut dial = move || -> std::io::Result<Box<dyn Conn>> {
        Ok(Box::new(std::net::TcpStream::connect(&server)?))
    };
    let summary = runtime.run(&samples, &mut dial)?;
    println!(
        "sent {} records ({} bytes, {} retries)",
        summary.records_sent, summary.bytes_sent, summary.retries
    );
    Ok(())
}
