//! Central-difference verification of the analytic gradients.
//!
//! The check always runs in f64 shadow precision: the model under test is
//! cast up, so a 32-bit model is verified against the same arithmetic at
//! higher precision.

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::model::{backprop, GradientSet, Model};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Central finite differences over every parameter at step `h`.
pub fn numeric_grads(
    model: &Model<f64>,
    batch: &[(Tensor<f64>, Tensor<f64>)],
    loss: LossKind,
    h: f64,
) -> Result<GradientSet<f64>> {
    let mut work = model.clone();
    let keys: Vec<(String, usize)> = model
        .params()
        .into_iter()
        .map(|(k, t)| (k, t.len()))
        .collect();
    let mut grads = GradientSet::default();
    for (key, len) in keys {
        let mut g = vec![0f64; len];
        for i in 0..len {
            let plus = eval_perturbed(&mut work, &key, i, h, batch, loss)?;
            let minus = eval_perturbed(&mut work, &key, i, -h, batch, loss)?;
            g[i] = (plus - minus) / (2.0 * h);
        }
        let dims = lookup_dims(model, &key)?;
        grads.insert(key, Tensor::new(dims, g)?);
    }
    Ok(grads)
}

fn lookup_dims(model: &Model<f64>, key: &str) -> Result<Vec<usize>> {
    model
        .params()
        .into_iter()
        .find(|(k, _)| k == key)
        .map(|(_, t)| t.dims().to_vec())
        .ok_or_else(|| Error::internal(format!("unknown parameter {key}")))
}

fn eval_perturbed(
    model: &mut Model<f64>,
    key: &str,
    index: usize,
    delta: f64,
    batch: &[(Tensor<f64>, Tensor<f64>)],
    loss: LossKind,
) -> Result<f64> {
    set_param(model, key, index, delta)?;
    let mut acc = 0f64;
    for (input, target) in batch {
        let yhat = model.forward(input)?;
        acc += crate::loss::loss_forward(target, &yhat, loss)?;
    }
    set_param(model, key, index, -delta)?;
    Ok(acc / batch.len() as f64)
}

fn set_param(model: &mut Model<f64>, key: &str, index: usize, delta: f64) -> Result<()> {
    for (k, t) in model.params_mut() {
        if k == key {
            t.data_mut()[index] += delta;
            return Ok(());
        }
    }
    Err(Error::internal(format!("unknown parameter {key}")))
}

/// max over elements of |a - n| / max(1e-8, |a| + |n|)
pub fn max_rel_error(analytic: &GradientSet<f64>, numeric: &GradientSet<f64>) -> f64 {
    let mut worst = 0f64;
    for (key, a) in analytic.iter() {
        let n = numeric.get(key).expect("gradient sets cover the same keys");
        for (av, nv) in a.data().iter().zip(n.data()) {
            let denom = (av.abs() + nv.abs()).max(1e-8);
            let err = (av - nv).abs() / denom;
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}

/// Runs the model in f64 shadow precision and returns the worst relative
/// disagreement between analytic and central-difference gradients. The input
/// model is left untouched.
pub fn grad_check<F: Scalar>(
    model: &Model<F>,
    batch: &[(Tensor<F>, Tensor<F>)],
    loss: LossKind,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h <= 1e-1) {
        return Err(Error::config(format!("finite-difference step must be in (0, 1e-1], got {h}")));
    }
    let shadow: Model<f64> = model.cast();
    let batch64: Vec<(Tensor<f64>, Tensor<f64>)> =
        batch.iter().map(|(x, y)| (x.cast(), y.cast())).collect();
    let (_, analytic) = backprop(&shadow, &batch64, loss)?;
    let numeric = numeric_grads(&shadow, &batch64, loss, h)?;
    Ok(max_rel_error(&analytic, &numeric))
}
