//! Loss functions. Values are reduced in f64 and reported as f64.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BinaryCrossentropy,
    Mse,
    Msle,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::BinaryCrossentropy => "binary_crossentropy",
            LossKind::Mse => "mse",
            LossKind::Msle => "msle",
        }
    }
}

fn check_pair<F: Scalar>(y: &Tensor<F>, yhat: &Tensor<F>) -> Result<usize> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(Error::config(format!(
            "loss requires equal nonempty lengths, got {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    Ok(y.len())
}

fn domain_check<F: Scalar>(y: &Tensor<F>, yhat: &Tensor<F>, kind: LossKind) -> Result<()> {
    for (i, (yv, pv)) in y.data().iter().zip(yhat.data()).enumerate() {
        let (yv, pv) = (yv.as_f64(), pv.as_f64());
        match kind {
            LossKind::BinaryCrossentropy => {
                if yv != 0.0 && yv != 1.0 {
                    return Err(Error::data(format!(
                        "binary crossentropy target at index {i} is {yv}, expected 0 or 1"
                    )));
                }
                if !(pv > 0.0 && pv < 1.0) {
                    return Err(Error::data(format!(
                        "binary crossentropy prediction at index {i} is {pv}, expected (0, 1)"
                    )));
                }
            }
            LossKind::Msle => {
                if yv <= -1.0 || pv <= -1.0 {
                    return Err(Error::data(format!(
                        "msle values at index {i} ({yv}, {pv}) must be > -1"
                    )));
                }
            }
            LossKind::Mse => {}
        }
        if !yv.is_finite() || !pv.is_finite() {
            return Err(Error::data(format!("non-finite loss input at index {i}")));
        }
    }
    Ok(())
}

/// Mean loss over the element pairs of `y` and `yhat`.
pub fn loss_forward<F: Scalar>(y: &Tensor<F>, yhat: &Tensor<F>, kind: LossKind) -> Result<f64> {
    let n = check_pair(y, yhat)? as f64;
    domain_check(y, yhat, kind)?;
    let mut acc = 0f64;
    for (yv, pv) in y.data().iter().zip(yhat.data()) {
        let (yv, pv) = (yv.as_f64(), pv.as_f64());
        acc += match kind {
            LossKind::BinaryCrossentropy => -(yv * pv.ln() + (1.0 - yv) * (1.0 - pv).ln()),
            LossKind::Mse => (yv - pv) * (yv - pv),
            LossKind::Msle => {
                let d = (yv + 1.0).ln() - (pv + 1.0).ln();
                d * d
            }
        };
    }
    Ok(acc / n)
}

/// d(loss)/d(yhat), elementwise, for the mean-reduced loss.
pub fn loss_backward<F: Scalar>(
    y: &Tensor<F>,
    yhat: &Tensor<F>,
    kind: LossKind,
) -> Result<Tensor<F>> {
    let n = check_pair(y, yhat)? as f64;
    domain_check(y, yhat, kind)?;
    let data = y
        .data()
        .iter()
        .zip(yhat.data())
        .map(|(yv, pv)| {
            let (yv, pv) = (yv.as_f64(), pv.as_f64());
            let g = match kind {
                LossKind::BinaryCrossentropy => (pv - yv) / (pv * (1.0 - pv)),
                LossKind::Mse => 2.0 * (pv - yv),
                LossKind::Msle => 2.0 * ((pv + 1.0).ln() - (yv + 1.0).ln()) / (pv + 1.0),
            };
            F::of_f64(g / n)
        })
        .collect();
    Tensor::new(yhat.dims().to_vec(), data)
}
