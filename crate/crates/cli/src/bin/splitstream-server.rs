//! Standalone centralized server: accepts client feature streams, assembles
//! the concatenated dataset and trains the server-side layers.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use splitstream_cli::ExperimentConfig;
use splitstream_core::{derive_seed, materialize_split, split_model, TaskKind, TrainCfg};
use splitstream_proto::{SessionCfg, TcpListen};
use splitstream_runtime::{
    assemble_dataset, collect_records, train_server_model, FeatureQueue, IngestServer,
};

#[derive(Parser)]
#[command(name = "splitstream-server", about = "Centralized split-learning server")]
struct Cli {
    /// Listen address, e.g. 127.0.0.1:7000.
    #[arg(long)]
    listen: String,
    /// Experiment config shared with the clients.
    #[arg(long)]
    config: PathBuf,
    /// Number of distinct clients whose DONE completes ingestion.
    #[arg(long)]
    expect_clients: usize,
    /// Output directory for weights, epochs.csv and the dataset manifest.
    #[arg(long)]
    out: PathBuf,
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
    let cfg = ExperimentConfig::load(&cli.config)?;
    let spec = cfg.model_spec()?;
    let split = split_model(&spec)?;
    let (client_part, mut server_model) = materialize_split::<f32>(&spec)?;

    let listener = TcpListen::bind(&cli.listen)?;
    println!("listening on {}", listener.local_addr()?);
    let queue = Arc::new(FeatureQueue::new(cfg.queue_capacity, cli.expect_clients));
    let ingest =
        IngestServer::spawn(Box::new(listener), queue.clone(), SessionCfg::new(split.config_hash));

    // Collection has no overall deadline here: a standalone server waits for
    // its clients. Sessions themselves enforce the idle timeout.
    let records = loop {
        match collect_records(&queue, Duration::from_secs(3600)) {
            Ok(records) => break records,
            Err(e) => {
                eprintln!("still waiting for clients: {e}");
            }
        }
    };
    ingest.shutdown();
    let stats = queue.stats();
    println!(
        "ingested {} records ({} duplicate resends dropped) from {} clients",
        stats.admitted, stats.duplicates_dropped, stats.clients_done
    );

    let data = assemble_dataset(records)?;
    std::fs::create_dir_all(&cli.out)?;
    let mut manifest = String::from("client_id,sample_id\n");
    for (c, s) in &data.provenance {
        manifest.push_str(&format!("{c},{s}\n"));
    }
    std::fs::write(cli.out.join("manifest.csv"), manifest)?;

    let train_cfg = TrainCfg {
        epochs: cfg.epochs,
        batch: cfg.batch,
        learning_rate: cfg.learning_rate,
        loss: cfg.loss,
        shuffle_seed: derive_seed(cfg.seed, "train-shuffle", &[]),
        classification: cfg.task() == TaskKind::Classification,
        freeze_layers: 0,
    };
    let log = train_server_model(&mut server_model, &data, &train_cfg)?;
    let mut epochs_csv = String::from("epoch,loss,accuracy\n");
    for e in &log {
        match e.accuracy {
            Some(a) => epochs_csv.push_str(&format!("{},{},{}\n", e.epoch, e.loss, a)),
            None => epochs_csv.push_str(&format!("{},{},\n", e.epoch, e.loss)),
        }
    }
    std::fs::write(cli.out.join("epochs.csv"), epochs_csv)?;

    let mut composed_layers = client_part.layers.clone();
    composed_layers.extend(server_model.layers.clone());
    let composed = splitstream_core::Model32::new(composed_layers);
    splitstream_core::zoo::save_weights(&cli.out.join("weights.bin"), &spec, &composed)?;

    if let Some(last) = log.last() {
        match last.accuracy {
            Some(a) => println!("final epoch loss {:.6}, accuracy {a:.2}%", last.loss),
            None => println!("final epoch loss {:.6}", last.loss),
        }
    }
    println!("wrote weights and logs to {}", cli.out.display());
    Ok(())
}
