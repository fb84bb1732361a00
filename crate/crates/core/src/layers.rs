//! Forward and backward passes for the individual layer kinds.
//!
//! All reductions accumulate in f64 regardless of the tensor element type and
//! store results back in the element type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Avg,
}

/// Square pooling window applied with stride equal to the window, so the
/// window must divide the input's spatial dims.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolLayer {
    pub window: usize,
    pub mode: PoolMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Sigmoid,
    LeakyRelu { slope: f64 },
}

impl ActivationKind {
    pub fn leaky_relu_default() -> Self {
        ActivationKind::LeakyRelu { slope: 0.01 }
    }
}

/// Valid (no padding) stride-1 square convolution, weights k x k x in x out.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<F> {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Scalar> ConvLayer<F> {
    pub fn new(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Tensor<F>,
        bias: Tensor<F>,
    ) -> Result<Self> {
        let expect = [kernel, kernel, in_channels, out_channels];
        if weights.dims() != expect {
            return Err(Error::config(format!(
                "conv weights dims {:?} do not match {:?}",
                weights.dims(),
                expect
            )));
        }
        if bias.dims() != [out_channels] {
            return Err(Error::config(format!(
                "conv bias dims {:?} do not match [{}]",
                bias.dims(),
                out_channels
            )));
        }
        Ok(ConvLayer { kernel, in_channels, out_channels, weights, bias })
    }
}

/// Fully connected layer, weights in x out.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<F> {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Scalar> DenseLayer<F> {
    pub fn new(
        in_features: usize,
        out_features: usize,
        weights: Tensor<F>,
        bias: Tensor<F>,
    ) -> Result<Self> {
        if weights.dims() != [in_features, out_features] {
            return Err(Error::config(format!(
                "dense weights dims {:?} do not match [{}, {}]",
                weights.dims(),
                in_features,
                out_features
            )));
        }
        if bias.dims() != [out_features] {
            return Err(Error::config(format!(
                "dense bias dims {:?} do not match [{}]",
                bias.dims(),
                out_features
            )));
        }
        Ok(DenseLayer { in_features, out_features, weights, bias })
    }
}

fn expect_hwc<F: Scalar>(input: &Tensor<F>) -> Result<(usize, usize, usize)> {
    match input.dims() {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(Error::config(format!("expected an HxWxC tensor, got dims {other:?}"))),
    }
}

/// out[m,n,o] = sum_{i,j,c} input[m+i, n+j, c] * w[i,j,c,o] + b[o]
pub fn conv2d_forward<F: Scalar>(input: &Tensor<F>, layer: &ConvLayer<F>) -> Result<Tensor<F>> {
    let (h, w, c) = expect_hwc(input)?;
    let k = layer.kernel;
    if c != layer.in_channels {
        return Err(Error::config(format!(
            "conv expects {} input channels, got {}",
            layer.in_channels, c
        )));
    }
    if h < k || w < k {
        return Err(Error::config(format!("conv kernel {k} larger than input {h}x{w}")));
    }
    if !input.all_finite() {
        return Err(Error::data("conv input contains non-finite values".to_string()));
    }
    let (oh, ow, oc) = (h - k + 1, w - k + 1, layer.out_channels);
    let wt = layer.weights.data();
    let mut out = Tensor::zeros(vec![oh, ow, oc]);
    let mut acc = vec![0f64; oc];
    for m in 0..oh {
        for n in 0..ow {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for i in 0..k {
                for j in 0..k {
                    for ci in 0..c {
                        let x = input.at3(m + i, n + j, ci).as_f64();
                        let base = ((i * k + j) * c + ci) * oc;
                        for (o, a) in acc.iter_mut().enumerate() {
                            *a += x * wt[base + o].as_f64();
                        }
                    }
                }
            }
            for o in 0..oc {
                out.set3(m, n, o, F::of_f64(acc[o] + layer.bias.data()[o].as_f64()));
            }
        }
    }
    Ok(out)
}

/// Gradients of the conv op: (d/dweights, d/dbias, d/dinput).
pub fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    layer: &ConvLayer<F>,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (h, w, c) = expect_hwc(input)?;
    let k = layer.kernel;
    let (oh, ow, oc) = (h - k + 1, w - k + 1, layer.out_channels);
    if grad_out.dims() != [oh, ow, oc] {
        return Err(Error::config(format!(
            "conv grad dims {:?} do not match output {:?}",
            grad_out.dims(),
            [oh, ow, oc]
        )));
    }
    let wt = layer.weights.data();
    let mut gw = vec![0f64; wt.len()];
    let mut gb = vec![0f64; oc];
    let mut gin = vec![0f64; input.len()];
    for m in 0..oh {
        for n in 0..ow {
            for o in 0..oc {
                let g = grad_out.at3(m, n, o).as_f64();
                gb[o] += g;
                for i in 0..k {
                    for j in 0..k {
                        for ci in 0..c {
                            let widx = ((i * k + j) * c + ci) * oc + o;
                            gw[widx] += g * input.at3(m + i, n + j, ci).as_f64();
                            gin[((m + i) * w + (n + j)) * c + ci] += g * wt[widx].as_f64();
                        }
                    }
                }
            }
        }
    }
    let gw = Tensor::new(layer.weights.dims().to_vec(), gw.iter().map(|v| F::of_f64(*v)).collect())?;
    let gb = Tensor::new(vec![oc], gb.iter().map(|v| F::of_f64(*v)).collect())?;
    let gin = Tensor::new(input.dims().to_vec(), gin.iter().map(|v| F::of_f64(*v)).collect())?;
    Ok((gw, gb, gin))
}

/// MAX: window maximum. AVG: window sum divided by window area.
pub fn pool2d_forward<F: Scalar>(input: &Tensor<F>, layer: &PoolLayer) -> Result<Tensor<F>> {
    let (h, w, c) = expect_hwc(input)?;
    let s = layer.window;
    if s < 2 {
        return Err(Error::config(format!("pool window must be >= 2, got {s}")));
    }
    if h % s != 0 || w % s != 0 {
        return Err(Error::config(format!("pool window {s} does not divide input {h}x{w}")));
    }
    let (oh, ow) = (h / s, w / s);
    let mut out = Tensor::zeros(vec![oh, ow, c]);
    for m in 0..oh {
        for n in 0..ow {
            for ci in 0..c {
                let v = match layer.mode {
                    PoolMode::Max => {
                        let mut best = input.at3(m * s, n * s, ci);
                        for i in 0..s {
                            for j in 0..s {
                                let x = input.at3(m * s + i, n * s + j, ci);
                                if x > best {
                                    best = x;
                                }
                            }
                        }
                        best
                    }
                    PoolMode::Avg => {
                        let mut acc = 0f64;
                        for i in 0..s {
                            for j in 0..s {
                                acc += input.at3(m * s + i, n * s + j, ci).as_f64();
                            }
                        }
                        F::of_f64(acc / (s * s) as f64)
                    }
                };
                out.set3(m, n, ci, v);
            }
        }
    }
    Ok(out)
}

/// MAX routes the gradient to the first (row-major) maximal element of each
/// window; AVG spreads 1/s^2 of it to every window cell.
pub fn pool2d_backward<F: Scalar>(
    input: &Tensor<F>,
    layer: &PoolLayer,
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    let (h, w, c) = expect_hwc(input)?;
    let s = layer.window;
    let (oh, ow) = (h / s, w / s);
    if grad_out.dims() != [oh, ow, c] {
        return Err(Error::config(format!(
            "pool grad dims {:?} do not match output {:?}",
            grad_out.dims(),
            [oh, ow, c]
        )));
    }
    let mut gin = Tensor::zeros(input.dims().to_vec());
    for m in 0..oh {
        for n in 0..ow {
            for ci in 0..c {
                let g = grad_out.at3(m, n, ci);
                match layer.mode {
                    PoolMode::Max => {
                        let (mut bi, mut bj) = (0, 0);
                        let mut best = input.at3(m * s, n * s, ci);
                        for i in 0..s {
                            for j in 0..s {
                                let x = input.at3(m * s + i, n * s + j, ci);
                                if x > best {
                                    best = x;
                                    bi = i;
                                    bj = j;
                                }
                            }
                        }
                        let cur = gin.at3(m * s + bi, n * s + bj, ci);
                        gin.set3(m * s + bi, n * s + bj, ci, cur + g);
                    }
                    PoolMode::Avg => {
                        let share = F::of_f64(g.as_f64() / (s * s) as f64);
                        for i in 0..s {
                            for j in 0..s {
                                let cur = gin.at3(m * s + i, n * s + j, ci);
                                gin.set3(m * s + i, n * s + j, ci, cur + share);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gin)
}

/// Sigmoid output is clamped into the open interval (0, 1) so downstream
/// log-losses stay finite in 32-bit arithmetic.
fn sigmoid<F: Scalar>(x: F) -> F {
    let one = F::one();
    let s = one / (one + (-x).exp());
    if s <= F::zero() {
        F::min_positive_value()
    } else if s >= one {
        one - F::epsilon() / F::of_f64(2.0)
    } else {
        s
    }
}

pub fn activation_forward<F: Scalar>(input: &Tensor<F>, kind: ActivationKind) -> Tensor<F> {
    let data = match kind {
        ActivationKind::Sigmoid => input.data().iter().map(|x| sigmoid(*x)).collect(),
        ActivationKind::LeakyRelu { slope } => {
            let slope = F::of_f64(slope);
            input
                .data()
                .iter()
                .map(|x| if *x >= F::zero() { *x } else { slope * *x })
                .collect()
        }
    };
    Tensor::new(input.dims().to_vec(), data).expect("activation preserves dims")
}

/// Leaky-relu derivative at exactly 0 is 1.
pub fn activation_backward<F: Scalar>(
    input: &Tensor<F>,
    kind: ActivationKind,
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    if grad_out.dims() != input.dims() {
        return Err(Error::config(format!(
            "activation grad dims {:?} do not match input {:?}",
            grad_out.dims(),
            input.dims()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(x, g)| match kind {
            ActivationKind::Sigmoid => {
                let s = sigmoid(*x);
                s * (F::one() - s) * *g
            }
            ActivationKind::LeakyRelu { slope } => {
                if *x >= F::zero() {
                    *g
                } else {
                    F::of_f64(slope) * *g
                }
            }
        })
        .collect();
    Tensor::new(input.dims().to_vec(), data)
}

/// out = W^T input + b
pub fn dense_forward<F: Scalar>(input: &Tensor<F>, layer: &DenseLayer<F>) -> Result<Tensor<F>> {
    if input.dims() != [layer.in_features] {
        return Err(Error::config(format!(
            "dense expects a flat input of {} features, got dims {:?}",
            layer.in_features,
            input.dims()
        )));
    }
    let wt = layer.weights.data();
    let of = layer.out_features;
    let mut acc = vec![0f64; of];
    for (i, x) in input.data().iter().enumerate() {
        let x = x.as_f64();
        let base = i * of;
        for (o, a) in acc.iter_mut().enumerate() {
            *a += x * wt[base + o].as_f64();
        }
    }
    let data = acc
        .iter()
        .zip(layer.bias.data())
        .map(|(a, b)| F::of_f64(a + b.as_f64()))
        .collect();
    Tensor::new(vec![of], data)
}

/// Gradients of the dense op: (d/dweights, d/dbias, d/dinput).
pub fn dense_backward<F: Scalar>(
    input: &Tensor<F>,
    layer: &DenseLayer<F>,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    if grad_out.dims() != [layer.out_features] {
        return Err(Error::config(format!(
            "dense grad dims {:?} do not match [{}]",
            grad_out.dims(),
            layer.out_features
        )));
    }
    let of = layer.out_features;
    let wt = layer.weights.data();
    let mut gw = vec![F::zero(); wt.len()];
    let mut gin = vec![F::zero(); input.len()];
    for (i, x) in input.data().iter().enumerate() {
        let mut acc = 0f64;
        for (o, g) in grad_out.data().iter().enumerate() {
            gw[i * of + o] = *x * *g;
            acc += g.as_f64() * wt[i * of + o].as_f64();
        }
        gin[i] = F::of_f64(acc);
    }
    let gw = Tensor::new(layer.weights.dims().to_vec(), gw)?;
    let gb = Tensor::new(vec![of], grad_out.data().to_vec())?;
    let gin = Tensor::new(input.dims().to_vec(), gin)?;
    Ok((gw, gb, gin))
}
