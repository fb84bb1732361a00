//! FedAvg-lite baseline: every client trains a full model copy on its shard;
//! the server averages parameters weighted by shard size, for the configured
//! number of synchronized rounds.

use splitstream_core::{
    derive_seed, EpochMetrics, Error, Model32, Result, Scalar, TaskKind, Tensor32, TrainCfg,
};
use splitstream_runtime::{evaluate, Sample};

use crate::config::ExperimentConfig;
use crate::experiment::{build_report, load_samples, RunArtifacts};
use crate::partition::split_dataset;

/// Shard-size-weighted parameter average. All models must share the same
/// architecture; accumulation happens in f64.
pub fn weighted_average(models: &[(Model32, f64)]) -> Result<Model32> {
    if models.is_empty() {
        return Err(Error::config("cannot average zero models".to_string()));
    }
    let total: f64 = models.iter().map(|(_, w)| *w).sum();
    if total <= 0.0 {
        return Err(Error::config("average weights must be positive".to_string()));
    }
    let mut out = models[0].0.clone();
    let keys: Vec<String> = out.params().iter().map(|(k, _)| k.clone()).collect();
    for key in keys {
        let mut acc: Vec<f64> = Vec::new();
        for (model, weight) in models {
            let params = model.params();
            let tensor = params
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, t)| *t)
                .ok_or_else(|| Error::config(format!("model missing parameter {key}")))?;
            if acc.is_empty() {
                acc = vec![0f64; tensor.len()];
            } else if acc.len() != tensor.len() {
                return Err(Error::config(format!("parameter {key} length mismatch")));
            }
            for (a, v) in acc.iter_mut().zip(tensor.data()) {
                *a += v.as_f64() * (*weight / total);
            }
        }
        for (k, t) in out.params_mut() {
            if k == key {
                for (p, a) in t.data_mut().iter_mut().zip(&acc) {
                    *p = *a as f32;
                }
            }
        }
    }
    Ok(out)
}

pub fn run_fedavg(
    cfg: &ExperimentConfig,
    rounds: usize,
    local_epochs: usize,
) -> Result<RunArtifacts> {
    let mut samples = load_samples(cfg)?;
    let partition = split_dataset(
        samples.len(),
        &cfg.client_ratios,
        cfg.val_fraction,
        cfg.test_fraction,
        cfg.seed,
    )?;
    let shards = partition.client_shards.clone();
    if cfg.task() == TaskKind::Regression {
        let train_indices: Vec<usize> = shards.iter().flatten().copied().collect();
        let stats = splitstream_runtime::TabularStats::fit(&samples, &train_indices)?;
        stats.apply(&mut samples);
    }

    let spec = cfg.model_spec()?;
    let mut global: Model32 = spec.materialize()?;
    let classification = cfg.task() == TaskKind::Classification;

    let shard_pairs: Vec<Vec<(Tensor32, Tensor32)>> = shards
        .iter()
        .map(|shard| {
            shard
                .iter()
                .map(|&i| {
                    (
                        samples[i].features.clone(),
                        Tensor32::new(vec![1], vec![samples[i].label]).unwrap(),
                    )
                })
                .collect()
        })
        .collect();

    let mut epoch_log = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let mut local_models = Vec::with_capacity(shards.len());
        let mut loss_acc = 0f64;
        let mut acc_acc = 0f64;
        let mut weight_total = 0f64;
        for (client, pairs) in shard_pairs.iter().enumerate() {
            let mut local = global.clone();
            let train_cfg = TrainCfg {
                epochs: local_epochs,
                batch: cfg.batch,
                learning_rate: cfg.learning_rate,
                loss: cfg.loss,
                shuffle_seed: derive_seed(
                    cfg.seed,
                    "fedavg-shuffle",
                    &[round as u64, client as u64],
                ),
                classification,
                freeze_layers: 0,
            };
            let log = splitstream_core::fit(&mut local, pairs, &train_cfg)?;
            let last = log.last().expect("at least one local epoch");
            let w = pairs.len() as f64;
            loss_acc += last.loss * w;
            if let Some(a) = last.accuracy {
                acc_acc += a * w;
            }
            weight_total += w;
            local_models.push((local, w));
        }
        global = weighted_average(&local_models)?;
        epoch_log.push(EpochMetrics {
            epoch: round + 1,
            loss: loss_acc / weight_total,
            accuracy: classification.then(|| acc_acc / weight_total),
        });
    }

    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", cfg.out.display())))?;
    let weights_path = cfg.out.join("weights.bin");
    splitstream_core::zoo::save_weights(&weights_path, &spec, &global)?;
    let mut epochs_csv = String::from("epoch,loss,accuracy\n");
    for e in &epoch_log {
        match e.accuracy {
            Some(a) => epochs_csv.push_str(&format!("{},{},{}\n", e.epoch, e.loss, a)),
            None => epochs_csv.push_str(&format!("{},{},\n", e.epoch, e.loss)),
        }
    }
    std::fs::write(cfg.out.join("epochs.csv"), epochs_csv)
        .map_err(|e| Error::data(format!("cannot write epochs.csv: {e}")))?;

    let test_samples: Vec<Sample> = partition
        .test
        .iter()
        .map(|&i| Sample {
            sample_id: samples[i].sample_id,
            features: samples[i].features.clone(),
            label: samples[i].label,
        })
        .collect();
    let eval = evaluate(&Model32::identity(), &global, &test_samples, cfg.task())?;
    let report = build_report(cfg, &spec.name, &epoch_log, &eval)?;
    report.write_files(&cfg.out)?;

    Ok(RunArtifacts {
        out_dir: cfg.out.clone(),
        report,
        epoch_log,
        composed: global,
        weights_path,
        client_summaries: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use splitstream_core::layers::DenseLayer;
    use splitstream_core::model::Layer;
    use splitstream_core::Tensor;

    fn dense(vals: Vec<f32>) -> Model32 {
        Model32::new(vec![Layer::Dense(
            DenseLayer::new(
                2,
                1,
                Tensor::new(vec![2, 1], vals).unwrap(),
                Tensor::zeros(vec![1]),
            )
            .unwrap(),
        )])
    }

    #[test]
    fn opposite_parameters_average_to_zero() {
        let a = dense(vec![0.5, -1.5]);
        let b = dense(vec![-0.5, 1.5]);
        let avg = weighted_average(&[(a, 10.0), (b, 10.0)]).unwrap();
        let params = avg.params();
        assert!(params[0].1.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_model_average_is_identity() {
        let a = dense(vec![0.25, 0.75]);
        let avg = weighted_average(&[(a.clone(), 3.0)]).unwrap();
        assert_eq!(avg, a);
    }

    #[test]
    fn weights_respect_shard_sizes() {
        let a = dense(vec![1.0, 1.0]);
        let b = dense(vec![0.0, 0.0]);
        let avg = weighted_average(&[(a, 3.0), (b, 1.0)]).unwrap();
        let params = avg.params();
        for v in params[0].1.data() {
            assert!((v - 0.75).abs() < 1e-7);
        }
    }
}
