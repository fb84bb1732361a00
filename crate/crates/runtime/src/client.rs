//! The hospital-side process: runs the frozen privacy-preserving layer over
//! local samples and streams the resulting feature records to the server.
//! Raw sample data never reaches the transport.

use splitstream_core::{derive_seed, Error, FeatureRecord, Model32, Result, XorShift64};
use splitstream_proto::{stream_records, ClientSessionCfg, Dial, ProtocolError, StreamOutcome};

use crate::data::Sample;

#[derive(Debug, Clone)]
pub struct ClientCfg {
    pub client_id: u32,
    /// Standard deviation of optional post-layer Gaussian noise; 0 disables.
    pub noise_sigma: f64,
    /// Experiment-wide seed; noise streams derive from it per record.
    pub seed: u64,
    pub config_hash: u64,
}

/// One client: a frozen privacy layer plus its configuration. The layer's
/// weights come from the experiment seed and are never trained.
pub struct ClientRuntime {
    cfg: ClientCfg,
    part: Model32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClientSummary {
    pub records_sent: u64,
    pub bytes_sent: u64,
    pub retries: u32,
}

impl ClientRuntime {
    pub fn new(part: Model32, cfg: ClientCfg) -> Self {
        ClientRuntime { cfg, part }
    }

    /// Runs the privacy layer over one sample. With split index 0 the part is
    /// empty and the feature equals the input; that configuration is
    /// permitted but offers no privacy reduction.
    pub fn privacy_forward(&self, sample: &Sample) -> Result<FeatureRecord> {
        let mut feature = self.part.forward(&sample.features)?;
        let noise_applied = self.cfg.noise_sigma > 0.0;
        if noise_applied {
            let mut rng = XorShift64::new(derive_seed(
                self.cfg.seed,
                "privacy-noise",
                &[self.cfg.client_id as u64, sample.sample_id],
            ));
            for v in feature.data_mut() {
                *v += rng.normal(self.cfg.noise_sigma) as f32;
            }
        }
        Ok(FeatureRecord {
            client_id: self.cfg.client_id,
            sample_id: sample.sample_id,
            feature,
            label: sample.label,
            noise_applied,
        })
    }

    /// Feature records for a whole local dataset, in local order.
    pub fn records(&self, samples: &[Sample]) -> Result<Vec<FeatureRecord>> {
        samples.iter().map(|s| self.privacy_forward(s)).collect()
    }

    /// Algorithm: run the privacy layer per sample, stream every record in
    /// deterministic local order, finish with DONE. Transport failures retry
    /// and resume from the last cumulative ack; a config-hash mismatch is
    /// fatal.
    pub fn run(&self, samples: &[Sample], dial: &mut dyn Dial) -> Result<ClientSummary> {
        let records = self.records(samples)?;
        let session = ClientSessionCfg::new(self.cfg.config_hash);
        let outcome: StreamOutcome =
            stream_records(dial, self.cfg.client_id, &records, &session).map_err(map_proto)?;
        Ok(ClientSummary {
            records_sent: outcome.records_sent,
            bytes_sent: outcome.bytes_sent,
            retries: outcome.retries,
        })
    }
}

fn map_proto(e: ProtocolError) -> Error {
    match e {
        ProtocolError::Rejected(code) => {
            Error::config(format!("server rejected handshake (reason code {code})"))
        }
        ProtocolError::Config(m) => Error::config(m),
        other => Error::data(format!("transport failed: {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use splitstream_core::layers::{PoolLayer, PoolMode};
    use splitstream_core::model::Layer;
    use splitstream_core::{Model, Tensor32};

    fn sample(id: u64, side: usize, seed: u64) -> Sample {
        let mut rng = XorShift64::new(seed);
        Sample {
            sample_id: id,
            features: Tensor32::new(
                vec![side, side, 1],
                (0..side * side).map(|_| rng.next_f64() as f32).collect(),
            )
            .unwrap(),
            label: 1.0,
        }
    }

    fn pool_client(noise_sigma: f64) -> ClientRuntime {
        ClientRuntime::new(
            Model::new(vec![Layer::Pool(PoolLayer { window: 2, mode: PoolMode::Max })]),
            ClientCfg { client_id: 1, noise_sigma, seed: 9, config_hash: 1 },
        )
    }

    #[test]
    fn identity_part_passes_input_through_and_is_flagged_nonprivate() {
        let client = ClientRuntime::new(
            Model::identity(),
            ClientCfg { client_id: 0, noise_sigma: 0.0, seed: 1, config_hash: 1 },
        );
        let s = sample(0, 4, 2);
        let record = client.privacy_forward(&s).unwrap();
        assert_eq!(record.feature, s.features);
        assert!(!record.noise_applied);
    }

    #[test]
    fn pooled_feature_is_smaller_than_input_by_window_area() {
        let client = pool_client(0.0);
        let s = sample(0, 64, 3);
        let record = client.privacy_forward(&s).unwrap();
        assert_eq!(record.feature.dims(), &[32, 32, 1]);
        assert_eq!(record.feature.len() * 4, s.features.len());
        assert_eq!(record.label, s.label);
    }

    #[test]
    fn covid_cnn_client_part_emits_pooled_multichannel_features() {
        use splitstream_core::{build_model, materialize_split, ModelKind, Scale};
        let spec = build_model(ModelKind::CovidCnn, Scale::ONE, 7).unwrap();
        let (part, _) = materialize_split::<f32>(&spec).unwrap();
        let client = ClientRuntime::new(
            part,
            ClientCfg { client_id: 0, noise_sigma: 0.0, seed: 7, config_hash: 1 },
        );
        let record = client.privacy_forward(&sample(0, 64, 8)).unwrap();
        // Valid 3x3 conv then 2x2 pool: 64 -> 62 -> 31, 16 filters. The
        // spatial extent shrinks fourfold even though the filter bank raises
        // the total element count.
        assert_eq!(record.feature.dims(), &[31, 31, 16]);
    }

    #[test]
    fn noise_has_requested_statistics() {
        let client = pool_client(0.1);
        let clean = pool_client(0.0);
        let s = sample(0, 256, 4); // 128x128 = 16384 feature elements
        let noisy = client.privacy_forward(&s).unwrap();
        let base = clean.privacy_forward(&s).unwrap();
        assert!(noisy.noise_applied);
        let diffs: Vec<f64> = noisy
            .feature
            .data()
            .iter()
            .zip(base.feature.data())
            .map(|(a, b)| (*a - *b) as f64)
            .collect();
        assert!(diffs.len() >= 10_000);
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std =
            (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!(mean.abs() < 0.01, "noise mean {mean}");
        assert!((std - 0.1).abs() < 0.01, "noise std {std}");
        // Determinism: the same record gets the same noise.
        let again = client.privacy_forward(&s).unwrap();
        assert_eq!(again, noisy);
    }

    #[test]
    fn max_pool_part_is_non_injective() {
        // Permuting non-maximal elements inside pool windows leaves the
        // record bit-identical.
        let client = pool_client(0.0);
        let mut base = sample(0, 4, 5);
        // Make window maxima unambiguous.
        for (i, v) in base.features.data_mut().iter_mut().enumerate() {
            *v = (i % 3) as f32 * 0.1;
        }
        let reference = client.privacy_forward(&base).unwrap();
        let mut variants = 0;
        for (a, b) in [(0usize, 1usize), (4, 5), (2, 3), (6, 7)] {
            let mut other = base.clone();
            let tmp = other.features.data()[a];
            let (va, vb) = (other.features.data()[a], other.features.data()[b]);
            let max = va.max(vb);
            // Only swap when neither is the window max.
            if va < max || vb < max {
                other.features.data_mut()[a] = other.features.data()[b];
                other.features.data_mut()[b] = tmp;
            }
            if other.features != base.features {
                variants += 1;
                let record = client.privacy_forward(&other).unwrap();
                assert_eq!(record.feature, reference.feature);
            }
        }
        assert!(variants > 0);
    }
}
