//! Experiment orchestration: the multi-client spatio-temporal run, the
//! single-client baselines, and the in-process frozen-first-block reference
//! used to verify that split training equals centralized training.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use splitstream_core::metrics::{EpochRow, FinalMetrics};
use splitstream_core::{
    classification_metrics, distribution_export, export_feature_image, materialize_split,
    regression_metrics, split_model, derive_seed, EpochMetrics, Error, FeatureRecord, Model32,
    MetricsReport, Result, TaskKind, Tensor32, TrainCfg,
};
use splitstream_proto::{in_proc_net, Conn, SessionCfg, TcpListen};
use splitstream_runtime::{
    assemble_dataset, collect_records, evaluate, load_image_dataset, load_tabular_csv,
    train_server_model, AssembledDataset, ClientCfg, ClientRuntime, ClientSummary, EvalOutcome,
    FeatureQueue, IngestServer, Sample, TabularStats,
};

use crate::config::{ExperimentConfig, Mode, Transport};
use crate::fedavg;
use crate::partition::{split_dataset, DataPartition};

/// How long the collector waits with zero progress before declaring a client
/// lost.
const COLLECT_DEADLINE: Duration = Duration::from_secs(120);

#[derive(Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub report: MetricsReport,
    pub epoch_log: Vec<EpochMetrics>,
    /// Frozen client part followed by the trained server part.
    pub composed: Model32,
    pub weights_path: PathBuf,
    pub client_summaries: Vec<ClientSummary>,
}

/// Loads and preprocesses the dataset named by the config (images resized to
/// the model's input shape, tabular rows validated).
pub fn load_samples(cfg: &ExperimentConfig) -> Result<Vec<Sample>> {
    let spec = cfg.model_spec()?;
    match cfg.task() {
        TaskKind::Classification => {
            let (h, w) = (spec.input_shape[0], spec.input_shape[1]);
            load_image_dataset(&cfg.data, h, w, &cfg.positive_class)
        }
        TaskKind::Regression => {
            let samples = load_tabular_csv(&cfg.data)?;
            if spec.input_shape != [splitstream_runtime::data::TABULAR_FEATURES] {
                return Err(Error::config(format!(
                    "model expects input shape {:?}, tabular data has {} features",
                    spec.input_shape,
                    splitstream_runtime::data::TABULAR_FEATURES
                )));
            }
            Ok(samples)
        }
    }
}

/// The shards that actually train in this mode.
fn active_shards(cfg: &ExperimentConfig, partition: &DataPartition) -> Result<Vec<Vec<usize>>> {
    match cfg.mode {
        Mode::SpatioTemporal | Mode::FedAvgLite { .. } => Ok(partition.client_shards.clone()),
        Mode::SingleClient { fraction } => {
            let pool = partition.pool();
            let take = (pool.len() as f64 * fraction) as usize;
            if take == 0 {
                return Err(Error::config(format!(
                    "single_fraction {fraction} leaves the client with no samples"
                )));
            }
            Ok(vec![pool[..take].to_vec()])
        }
    }
}

/// Normalizes tabular predictors in place with statistics fitted on the
/// training shards only; images pass through untouched.
fn normalize_for_training(
    cfg: &ExperimentConfig,
    samples: &mut [Sample],
    shards: &[Vec<usize>],
) -> Result<()> {
    if cfg.task() == TaskKind::Regression {
        let train_indices: Vec<usize> = shards.iter().flatten().copied().collect();
        let stats = TabularStats::fit(samples, &train_indices)?;
        stats.apply(samples);
    }
    Ok(())
}

/// Local per-client datasets: shard order preserved, sample ids renumbered
/// locally from zero (the wire contract for resume).
fn client_datasets(samples: &[Sample], shards: &[Vec<usize>]) -> Vec<Vec<Sample>> {
    shards
        .iter()
        .map(|shard| {
            shard
                .iter()
                .enumerate()
                .map(|(local, &idx)| Sample {
                    sample_id: local as u64,
                    features: samples[idx].features.clone(),
                    label: samples[idx].label,
                })
                .collect()
        })
        .collect()
}

fn subset(samples: &[Sample], indices: &[usize]) -> Vec<Sample> {
    indices
        .iter()
        .map(|&i| Sample {
            sample_id: samples[i].sample_id,
            features: samples[i].features.clone(),
            label: samples[i].label,
        })
        .collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    if let Mode::FedAvgLite { rounds, local_epochs } = cfg.mode {
        return fedavg::run_fedavg(cfg, rounds, local_epochs);
    }
    run_split_mode(cfg)
}

fn run_split_mode(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let mut samples = load_samples(cfg)?;
    let partition = split_dataset(
        samples.len(),
        &cfg.client_ratios,
        cfg.val_fraction,
        cfg.test_fraction,
        cfg.seed,
    )?;
    let shards = active_shards(cfg, &partition)?;
    normalize_for_training(cfg, &mut samples, &shards)?;

    let spec = cfg.model_spec()?;
    let split = split_model(&spec)?;
    let (client_model, mut server_model) = materialize_split::<f32>(&spec)?;
    let hash = split.config_hash;

    let datasets = client_datasets(&samples, &shards);
    let queue = Arc::new(FeatureQueue::new(cfg.queue_capacity, datasets.len()));
    let session_cfg = SessionCfg::new(hash);

    // Transport setup; clients run as threads either way, TCP goes through
    // real loopback sockets.
    enum Net {
        InProc(splitstream_proto::InProcDialer),
        Tcp(std::net::SocketAddr),
    }
    let (listener, net): (Box<dyn splitstream_proto::Listen>, Net) = match cfg.transport {
        Transport::InProcess => {
            let (listener, dialer) = in_proc_net();
            (Box::new(listener), Net::InProc(dialer))
        }
        Transport::Tcp => {
            let listener = TcpListen::bind(&cfg.tcp_addr)
                .map_err(|e| Error::config(format!("cannot bind {}: {e}", cfg.tcp_addr)))?;
            let addr = listener
                .local_addr()
                .map_err(|e| Error::internal(format!("no local addr: {e}")))?;
            (Box::new(listener), Net::Tcp(addr))
        }
    };
    let ingest = IngestServer::spawn(listener, queue.clone(), session_cfg);

    let (records, client_results) = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (client_id, local) in datasets.iter().enumerate() {
            let client_cfg = ClientCfg {
                client_id: client_id as u32,
                noise_sigma: cfg.noise_sigma,
                seed: cfg.seed,
                config_hash: hash,
            };
            let part = client_model.clone();
            let net_ref = &net;
            handles.push(scope.spawn(move || -> Result<ClientSummary> {
                let runtime = ClientRuntime::new(part, client_cfg);
                match net_ref {
                    Net::InProc(dialer) => {
                        let dialer = dialer.clone();
                        let mut dial = move || -> std::io::Result<Box<dyn Conn>> {
                            Ok(Box::new(dialer.connect()?))
                        };
                        runtime.run(local, &mut dial)
                    }
                    Net::Tcp(addr) => {
                        let addr = *addr;
                        let mut dial = move || -> std::io::Result<Box<dyn Conn>> {
                            Ok(Box::new(std::net::TcpStream::connect(addr)?))
                        };
                        runtime.run(local, &mut dial)
                    }
                }
            }));
        }
        let records = collect_records(&queue, COLLECT_DEADLINE);
        let results: Vec<Result<ClientSummary>> =
            handles.into_iter().map(|h| h.join().expect("client thread panicked")).collect();
        (records, results)
    });
    ingest.shutdown();

    let mut client_summaries = Vec::new();
    for (i, r) in client_results.into_iter().enumerate() {
        client_summaries
            .push(r.map_err(|e| Error::data(format!("client {i} failed: {e}")))?);
    }
    let records = records?;

    let data = assemble_dataset(records)?;
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", cfg.out.display())))?;
    write_manifest(&cfg.out, &data)?;

    let train_cfg = TrainCfg {
        epochs: cfg.epochs,
        batch: cfg.batch,
        learning_rate: cfg.learning_rate,
        loss: cfg.loss,
        shuffle_seed: derive_seed(cfg.seed, "train-shuffle", &[]),
        classification: cfg.task() == TaskKind::Classification,
        freeze_layers: 0,
    };
    let epoch_log = train_server_model(&mut server_model, &data, &train_cfg)?;
    write_epochs_csv(&cfg.out, &epoch_log)?;

    let mut composed_layers = client_model.layers.clone();
    composed_layers.extend(server_model.layers.clone());
    let composed = Model32::new(composed_layers);
    let weights_path = cfg.out.join("weights.bin");
    splitstream_core::zoo::save_weights(&weights_path, &spec, &composed)?;

    let test_samples = subset(&samples, &partition.test);
    let eval = evaluate(&client_model, &server_model, &test_samples, cfg.task())?;
    if cfg.task() == TaskKind::Classification {
        export_distortion_images(&cfg.out, &client_model, &test_samples[0])?;
    }
    let report = build_report(cfg, &spec.name, &epoch_log, &eval)?;
    report.write_files(&cfg.out)?;

    Ok(RunArtifacts {
        out_dir: cfg.out.clone(),
        report,
        epoch_log,
        composed,
        weights_path,
        client_summaries,
    })
}

/// The verification twin of the spatio-temporal run: one in-process model,
/// first `split_index` blocks frozen, trained on the union of the client
/// shards in canonical order with the same seeds.
pub fn run_centralized_reference(cfg: &ExperimentConfig) -> Result<(Vec<EpochMetrics>, Model32)> {
    let mut samples = load_samples(cfg)?;
    let partition = split_dataset(
        samples.len(),
        &cfg.client_ratios,
        cfg.val_fraction,
        cfg.test_fraction,
        cfg.seed,
    )?;
    let shards = active_shards(cfg, &partition)?;
    normalize_for_training(cfg, &mut samples, &shards)?;

    let spec = cfg.model_spec()?;
    let mut full: Model32 = spec.materialize()?;
    let freeze = spec.split_layer_count();

    let ordered: Vec<usize> = shards.iter().flatten().copied().collect();
    let pairs: Vec<(Tensor32, Tensor32)> = ordered
        .iter()
        .map(|&i| {
            (
                samples[i].features.clone(),
                Tensor32::new(vec![1], vec![samples[i].label]).unwrap(),
            )
        })
        .collect();
    let train_cfg = TrainCfg {
        epochs: cfg.epochs,
        batch: cfg.batch,
        learning_rate: cfg.learning_rate,
        loss: cfg.loss,
        shuffle_seed: derive_seed(cfg.seed, "train-shuffle", &[]),
        classification: cfg.task() == TaskKind::Classification,
        freeze_layers: freeze,
    };
    let log = splitstream_core::fit(&mut full, &pairs, &train_cfg)?;
    Ok((log, full))
}

fn write_manifest(out: &Path, data: &AssembledDataset) -> Result<()> {
    let mut text = String::from("client_id,sample_id\n");
    for (c, s) in &data.provenance {
        text.push_str(&format!("{c},{s}\n"));
    }
    std::fs::write(out.join("manifest.csv"), text)
        .map_err(|e| Error::data(format!("cannot write manifest: {e}")))
}

fn write_epochs_csv(out: &Path, log: &[EpochMetrics]) -> Result<()> {
    let mut text = String::from("epoch,loss,accuracy\n");
    for e in log {
        match e.accuracy {
            Some(acc) => text.push_str(&format!("{},{},{}\n", e.epoch, e.loss, acc)),
            None => text.push_str(&format!("{},{},\n", e.epoch, e.loss)),
        }
    }
    std::fs::write(out.join("epochs.csv"), text)
        .map_err(|e| Error::data(format!("cannot write epochs.csv: {e}")))
}

/// Original first test sample and its privacy-layer output, for the
/// distortion figures.
fn export_distortion_images(out: &Path, client_model: &Model32, sample: &Sample) -> Result<()> {
    let features_dir = out.join("features");
    let original = FeatureRecord {
        client_id: 0,
        sample_id: sample.sample_id,
        feature: sample.features.clone(),
        label: sample.label,
        noise_applied: false,
    };
    export_feature_image(&original, 0, &features_dir.join("original.pgm"))?;
    let transformed = client_model.forward(&sample.features)?;
    if transformed.dims().len() == 3 {
        let record = FeatureRecord { feature: transformed, ..original };
        export_feature_image(&record, 0, &features_dir.join("privacy_layer.pgm"))?;
    }
    Ok(())
}

pub(crate) fn build_report(
    cfg: &ExperimentConfig,
    model_name: &str,
    epoch_log: &[EpochMetrics],
    eval: &EvalOutcome,
) -> Result<MetricsReport> {
    let task = cfg.task();
    let final_metrics = match task {
        TaskKind::Classification => FinalMetrics {
            accuracy: Some(classification_metrics(&eval.predictions, &eval.labels, 0.5)?),
            ..FinalMetrics::default()
        },
        TaskKind::Regression => {
            let m = regression_metrics(&eval.labels, &eval.predictions)?;
            FinalMetrics {
                accuracy: None,
                msle: Some(m.msle),
                rmsle: Some(m.rmsle),
                smape: Some(m.smape),
            }
        }
    };
    Ok(MetricsReport {
        task,
        model: model_name.to_string(),
        mode: cfg.mode.name().to_string(),
        seed: cfg.seed,
        per_epoch: epoch_log
            .iter()
            .map(|e| EpochRow { epoch: e.epoch, loss: e.loss, accuracy: e.accuracy })
            .collect(),
        final_metrics,
        per_sample_losses: eval.per_sample_losses.clone(),
        distribution: distribution_export(&eval.per_sample_losses, 50)?,
    })
}
