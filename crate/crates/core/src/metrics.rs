//! Quantitative outputs of a run: accuracy, MSLE/RMSLE/sMAPE, loss
//! distributions and feature-map image exports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::FeatureRecord;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

/// Thresholded classification accuracy in percent.
pub fn classification_metrics<F: Scalar>(yhat: &[F], y: &[F], threshold: f64) -> Result<f64> {
    if yhat.is_empty() || yhat.len() != y.len() {
        return Err(Error::data(format!(
            "accuracy requires equal nonempty prediction/label lengths, got {} and {}",
            yhat.len(),
            y.len()
        )));
    }
    let correct = yhat
        .iter()
        .zip(y)
        .filter(|(p, t)| {
            let predicted = if p.as_f64() >= threshold { 1.0 } else { 0.0 };
            predicted == t.as_f64()
        })
        .count();
    Ok(100.0 * correct as f64 / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub msle: f64,
    pub rmsle: f64,
    pub smape: f64,
}

/// MSLE with natural logs, RMSLE as the square root of the same accumulator,
/// and sMAPE in [0, 100] with both-zero pairs contributing 0.
pub fn regression_metrics<F: Scalar>(y: &[F], yhat: &[F]) -> Result<RegressionMetrics> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(Error::data(format!(
            "regression metrics require equal nonempty lengths, got {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    let n = y.len() as f64;
    let mut msle_acc = 0f64;
    let mut smape_acc = 0f64;
    for (i, (yv, pv)) in y.iter().zip(yhat).enumerate() {
        let (yv, pv) = (yv.as_f64(), pv.as_f64());
        if !yv.is_finite() || !pv.is_finite() {
            return Err(Error::data(format!("non-finite metric input at index {i}")));
        }
        if yv <= -1.0 || pv <= -1.0 {
            return Err(Error::data(format!(
                "msle values at index {i} ({yv}, {pv}) must be > -1"
            )));
        }
        let d = (yv + 1.0).ln() - (pv + 1.0).ln();
        msle_acc += d * d;
        let denom = yv.abs() + pv.abs();
        if denom > 0.0 {
            smape_acc += (yv - pv).abs() / denom;
        }
    }
    let msle = msle_acc / n;
    Ok(RegressionMetrics { msle, rmsle: msle.sqrt(), smape: 100.0 * smape_acc / n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    /// Sorted (loss value, cumulative fraction k/N) pairs.
    pub cdf: Vec<(f64, f64)>,
    /// Equal-width histogram as (bin center, density) with
    /// sum(density * width) = 1.
    pub pdf: Vec<(f64, f64)>,
}

/// Empirical CDF and a normalized histogram of per-sample losses.
pub fn distribution_export(per_sample_losses: &[f64], bins: usize) -> Result<Distribution> {
    if per_sample_losses.is_empty() {
        return Err(Error::data("distribution export requires nonempty losses".to_string()));
    }
    if bins == 0 {
        return Err(Error::config("histogram needs at least one bin".to_string()));
    }
    if let Some(bad) = per_sample_losses.iter().find(|v| !v.is_finite()) {
        return Err(Error::data(format!("non-finite loss value {bad}")));
    }
    let n = per_sample_losses.len();
    let mut sorted = per_sample_losses.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cdf: Vec<(f64, f64)> = sorted
        .iter()
        .enumerate()
        .map(|(k, v)| (*v, (k + 1) as f64 / n as f64))
        .collect();
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let pdf = if hi == lo {
        // Degenerate distribution: all mass in one bin.
        vec![(lo, 1.0)]
    } else {
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for v in &sorted {
            let mut idx = ((v - lo) / width) as usize;
            if idx >= bins {
                idx = bins - 1;
            }
            counts[idx] += 1;
        }
        counts
            .iter()
            .enumerate()
            .map(|(i, c)| (lo + (i as f64 + 0.5) * width, *c as f64 / (n as f64 * width)))
            .collect()
    };
    Ok(Distribution { cdf, pdf })
}

/// Writes one channel of a feature map as an 8-bit PGM, min-max scaled to
/// [0, 255]. A constant channel becomes an all-zero image.
pub fn export_feature_image(record: &FeatureRecord, channel: usize, path: &Path) -> Result<()> {
    let dims = record.feature.dims();
    let (h, w, c) = match dims {
        [h, w, c] => (*h, *w, *c),
        other => {
            return Err(Error::config(format!(
                "feature image export needs an HxWxC feature, got dims {other:?}"
            )))
        }
    };
    if channel >= c {
        return Err(Error::config(format!(
            "channel {channel} out of range for {c}-channel feature"
        )));
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for y in 0..h {
        for x in 0..w {
            let v = record.feature.at3(y, x, channel);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let mut bytes = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let v = record.feature.at3(y, x, channel);
            let b = if hi > lo {
                (((v - lo) as f64 / (hi - lo) as f64) * 255.0).round() as u8
            } else {
                0
            };
            bytes.push(b);
        }
    }
    write_pgm(path, w, h, &bytes)
}

/// Plain binary PGM (P5) writer, maxval 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    if bytes.len() != width * height {
        return Err(Error::config(format!(
            "pgm payload length {} does not match {width}x{height}",
            bytes.len()
        )));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::data(format!("cannot create {}: {e}", parent.display())))?;
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(format!("P5\n{width} {height}\n255\n").as_bytes())
        .and_then(|_| f.write_all(bytes))
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FinalMetrics {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub msle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rmsle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub smape: Option<f64>,
}

/// The single structured document emitted per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: TaskKind,
    pub model: String,
    pub mode: String,
    pub seed: u64,
    pub per_epoch: Vec<EpochRow>,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    pub per_sample_losses: Vec<f64>,
    pub distribution: Distribution,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::data(format!("bad metrics.json: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Writes metrics.json, per_sample_losses.csv, cdf.csv and pdf.csv.
    pub fn write_files(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| Error::data(format!("cannot create {}: {e}", out_dir.display())))?;
        let write = |name: &str, contents: String| -> Result<()> {
            std::fs::write(out_dir.join(name), contents)
                .map_err(|e| Error::data(format!("cannot write {name}: {e}")))
        };
        write("metrics.json", self.to_json())?;
        let mut losses = String::from("index,loss\n");
        for (i, l) in self.per_sample_losses.iter().enumerate() {
            losses.push_str(&format!("{i},{l}\n"));
        }
        write("per_sample_losses.csv", losses)?;
        let mut cdf = String::from("value,fraction\n");
        for (v, f) in &self.distribution.cdf {
            cdf.push_str(&format!("{v},{f}\n"));
        }
        write("cdf.csv", cdf)?;
        let mut pdf = String::from("bin_center,density\n");
        for (c, d) in &self.distribution.pdf {
            pdf.push_str(&format!("{c},{d}\n"));
        }
        write("pdf.csv", pdf)?;
        Ok(())
    }
}
