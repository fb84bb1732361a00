//! The centralized server: accepts concurrent client sessions into the
//! feature queue, assembles the concatenated training set in canonical
//! order, trains the server-side layers and evaluates the composed pipeline.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use splitstream_core::{
    classification_metrics, fit, loss_forward, EpochMetrics, Error, FeatureRecord, LossKind,
    Model32, Result, TaskKind, Tensor32, TrainCfg,
};
use splitstream_proto::{serve_session, Listen, SessionCfg, SessionSummary};

use crate::data::Sample;
use crate::queue::{FeatureQueue, PopOutcome};

/// All features concatenated in canonical (client_id, sample_id) order.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledDataset {
    pub features: Vec<Tensor32>,
    pub labels: Vec<f32>,
    pub provenance: Vec<(u32, u64)>,
}

impl AssembledDataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// (feature, label-as-1-tensor) pairs for the trainer.
    pub fn training_pairs(&self) -> Vec<(Tensor32, Tensor32)> {
        self.features
            .iter()
            .zip(&self.labels)
            .map(|(f, l)| (f.clone(), Tensor32::new(vec![1], vec![*l]).unwrap()))
            .collect()
    }
}

/// Sorts records into canonical order and verifies dims homogeneity, so the
/// assembled set is independent of arrival interleaving.
pub fn assemble_dataset(mut records: Vec<FeatureRecord>) -> Result<AssembledDataset> {
    if records.is_empty() {
        return Err(Error::config("no records to assemble".to_string()));
    }
    records.sort_by_key(|r| (r.client_id, r.sample_id));
    let dims = records[0].feature.dims().to_vec();
    for r in &records {
        if r.feature.dims() != dims {
            return Err(Error::config(format!(
                "heterogeneous feature dims: client {} sample {} has {:?}, expected {:?}",
                r.client_id,
                r.sample_id,
                r.feature.dims(),
                dims
            )));
        }
    }
    let mut features = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    let mut provenance = Vec::with_capacity(records.len());
    for r in records {
        provenance.push((r.client_id, r.sample_id));
        labels.push(r.label);
        features.push(r.feature);
    }
    Ok(AssembledDataset { features, labels, provenance })
}

/// Drains the queue until every expected client has finished. `deadline` is
/// the longest the server will sit with no progress before declaring a
/// missing DONE.
pub fn collect_records(queue: &FeatureQueue, deadline: Duration) -> Result<Vec<FeatureRecord>> {
    let mut records = Vec::new();
    loop {
        match queue.pop_timeout(deadline) {
            (PopOutcome::Record, Some(r)) => records.push(r),
            (PopOutcome::Complete, None) => return Ok(records),
            (PopOutcome::TimedOut, None) => {
                return Err(Error::data(format!(
                    "timed out waiting for client DONEs ({} records so far)",
                    records.len()
                )))
            }
            other => return Err(Error::internal(format!("queue returned {other:?}"))),
        }
    }
}

/// Concurrent session acceptor feeding one queue. Sessions run on their own
/// threads; `shutdown` stops accepting and joins everything.
pub struct IngestServer {
    accept_handle: JoinHandle<Vec<splitstream_proto::Result<SessionSummary>>>,
    stop: Arc<AtomicBool>,
}

impl IngestServer {
    pub fn spawn(
        listener: Box<dyn Listen>,
        queue: Arc<FeatureQueue>,
        session_cfg: SessionCfg,
    ) -> IngestServer {
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let accept_handle = std::thread::spawn(move || {
            let mut sessions: Vec<JoinHandle<splitstream_proto::Result<SessionSummary>>> =
                Vec::new();
            while !stop_flag.load(Ordering::Relaxed) {
                match listener.accept_timeout(Duration::from_millis(25)) {
                    Ok(Some(conn)) => {
                        let queue = queue.clone();
                        let cfg = session_cfg.clone();
                        sessions.push(std::thread::spawn(move || {
                            serve_session(conn, &cfg, queue.as_ref())
                        }));
                    }
                    Ok(None) => {}
                    Err(_) => break, // all dialers gone
                }
            }
            sessions.into_iter().map(|h| h.join().expect("session thread panicked")).collect()
        });
        IngestServer { accept_handle, stop }
    }

    /// Stops accepting and returns every session's outcome.
    pub fn shutdown(self) -> Vec<splitstream_proto::Result<SessionSummary>> {
        self.stop.store(true, Ordering::Relaxed);
        self.accept_handle.join().expect("accept thread panicked")
    }
}

/// Trains the server part on the assembled features. Thin wrapper over the
/// engine's epoch loop; deterministic for a fixed shuffle seed.
pub fn train_server_model(
    model: &mut Model32,
    data: &AssembledDataset,
    cfg: &TrainCfg,
) -> Result<Vec<EpochMetrics>> {
    if data.is_empty() {
        return Err(Error::config("assembled dataset is empty".to_string()));
    }
    let pairs = data.training_pairs();
    fit(model, &pairs, cfg)
}

/// Per-sample evaluation of the composed client+server pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub predictions: Vec<f64>,
    pub labels: Vec<f64>,
    pub per_sample_losses: Vec<f64>,
}

impl EvalOutcome {
    pub fn accuracy(&self) -> Result<f64> {
        classification_metrics(&self.predictions, &self.labels, 0.5)
    }
}

/// Runs client part then server part over raw eval samples and collects
/// per-sample losses (the task's loss for classification, squared log error
/// for regression).
pub fn evaluate(
    client_part: &Model32,
    server_part: &Model32,
    samples: &[Sample],
    task: TaskKind,
) -> Result<EvalOutcome> {
    if samples.is_empty() {
        return Err(Error::config("evaluation requires samples".to_string()));
    }
    let mut predictions = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let mut per_sample_losses = Vec::with_capacity(samples.len());
    for s in samples {
        let feature = client_part.forward(&s.features)?;
        let out = server_part.forward(&feature)?;
        if out.len() != 1 {
            return Err(Error::config(format!(
                "evaluation expects scalar model output, got dims {:?}",
                out.dims()
            )));
        }
        let yhat = out.data()[0] as f64;
        let y = s.label as f64;
        let y_t = Tensor32::new(vec![1], vec![s.label])?;
        let loss = match task {
            TaskKind::Classification => {
                loss_forward(&y_t, &out, LossKind::BinaryCrossentropy)?
            }
            TaskKind::Regression => loss_forward(&y_t, &out, LossKind::Msle)?,
        };
        predictions.push(yhat);
        labels.push(y);
        per_sample_losses.push(loss);
    }
    Ok(EvalOutcome { predictions, labels, per_sample_losses })
}
