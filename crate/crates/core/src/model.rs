//! Layer sequences: forward passes with caching, reverse-mode gradients and
//! plain SGD.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layers::{
    activation_backward, activation_forward, conv2d_backward, conv2d_forward, dense_backward,
    dense_forward, pool2d_backward, pool2d_forward, ActivationKind, ConvLayer, DenseLayer,
    PoolLayer,
};
use crate::loss::{loss_backward, loss_forward, LossKind};
use crate::rng::XorShift64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<F> {
    Conv(ConvLayer<F>),
    Pool(PoolLayer),
    Act(ActivationKind),
    Flatten,
    Dense(DenseLayer<F>),
}

impl<F: Scalar> Layer<F> {
    fn forward(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        match self {
            Layer::Conv(l) => conv2d_forward(input, l),
            Layer::Pool(l) => pool2d_forward(input, l),
            Layer::Act(kind) => Ok(activation_forward(input, *kind)),
            Layer::Flatten => Ok(input.flattened()),
            Layer::Dense(l) => dense_forward(input, l),
        }
    }
}

/// Gradients keyed by parameter identifier (`L03.w`, `L03.b`). Keys cover
/// exactly the trainable parameters of the model they were computed for.
#[derive(Debug, Clone, Default)]
pub struct GradientSet<F> {
    grads: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> GradientSet<F> {
    pub fn get(&self, key: &str) -> Option<&Tensor<F>> {
        self.grads.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor<F>> {
        self.grads.get_mut(key)
    }

    pub fn insert(&mut self, key: String, grad: Tensor<F>) {
        self.grads.insert(key, grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

pub fn param_key(layer_index: usize, which: char) -> String {
    format!("L{layer_index:03}.{which}")
}

/// An ordered stack of materialized layers (a whole model or one side of a
/// split).
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub layers: Vec<Layer<F>>,
}

impl<F: Scalar> Model<F> {
    pub fn new(layers: Vec<Layer<F>>) -> Self {
        Model { layers }
    }

    /// An empty model is the identity function.
    pub fn identity() -> Self {
        Model { layers: Vec::new() }
    }

    pub fn forward(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        let mut cur = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer
                .forward(&cur)
                .map_err(|e| Error::config(format!("layer {i}: {e}")))?;
        }
        Ok(cur)
    }

    /// Forward pass keeping every layer input for the backward pass.
    pub fn forward_cached(&self, input: &Tensor<F>) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
        let mut cache = Vec::with_capacity(self.layers.len());
        let mut cur = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cache.push(cur.clone());
            cur = layer
                .forward(&cur)
                .map_err(|e| Error::config(format!("layer {i}: {e}")))?;
        }
        Ok((cur, cache))
    }

    /// Walks the layers in reverse, accumulating parameter gradients in f64
    /// into `acc` and returning the gradient w.r.t. the model input.
    fn backward_into(
        &self,
        cache: &[Tensor<F>],
        grad_out: Tensor<F>,
        acc: &mut BTreeMap<String, Vec<f64>>,
    ) -> Result<Tensor<F>> {
        let mut grad = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache[i];
            grad = match layer {
                Layer::Conv(l) => {
                    let (gw, gb, gin) = conv2d_backward(input, l, &grad)?;
                    accumulate(acc, param_key(i, 'w'), &gw);
                    accumulate(acc, param_key(i, 'b'), &gb);
                    gin
                }
                Layer::Pool(l) => pool2d_backward(input, l, &grad)?,
                Layer::Act(kind) => activation_backward(input, *kind, &grad)?,
                Layer::Flatten => grad.reshaped(input.dims().to_vec())?,
                Layer::Dense(l) => {
                    let (gw, gb, gin) = dense_backward(input, l, &grad)?;
                    accumulate(acc, param_key(i, 'w'), &gw);
                    accumulate(acc, param_key(i, 'b'), &gb);
                    gin
                }
            };
        }
        Ok(grad)
    }

    /// Trainable parameters in layer order.
    pub fn params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(l) => {
                    out.push((param_key(i, 'w'), &l.weights));
                    out.push((param_key(i, 'b'), &l.bias));
                }
                Layer::Dense(l) => {
                    out.push((param_key(i, 'w'), &l.weights));
                    out.push((param_key(i, 'b'), &l.bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv(l) => {
                    out.push((param_key(i, 'w'), &mut l.weights));
                    out.push((param_key(i, 'b'), &mut l.bias));
                }
                Layer::Dense(l) => {
                    out.push((param_key(i, 'w'), &mut l.weights));
                    out.push((param_key(i, 'b'), &mut l.bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv(l) => Layer::Conv(ConvLayer {
                    kernel: l.kernel,
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    weights: l.weights.cast(),
                    bias: l.bias.cast(),
                }),
                Layer::Pool(l) => Layer::Pool(*l),
                Layer::Act(k) => Layer::Act(*k),
                Layer::Flatten => Layer::Flatten,
                Layer::Dense(l) => Layer::Dense(DenseLayer {
                    in_features: l.in_features,
                    out_features: l.out_features,
                    weights: l.weights.cast(),
                    bias: l.bias.cast(),
                }),
            })
            .collect();
        Model { layers }
    }

    /// theta <- theta - alpha * grad for every parameter at layer index >=
    /// `first_trainable` (0 trains everything; a positive value freezes a
    /// leading prefix, as for a frozen privacy layer).
    pub fn sgd_step_from(
        &mut self,
        grads: &GradientSet<F>,
        alpha: f64,
        first_trainable: usize,
    ) -> Result<()> {
        if alpha <= 0.0 {
            return Err(Error::config(format!("learning rate must be > 0, got {alpha}")));
        }
        let a = F::of_f64(alpha);
        for (key, param) in self.params_mut() {
            let idx: usize = key[1..4].parse().expect("param key layout");
            if idx < first_trainable {
                continue;
            }
            let grad = grads
                .get(&key)
                .ok_or_else(|| Error::internal(format!("missing gradient for parameter {key}")))?;
            if grad.dims() != param.dims() {
                return Err(Error::internal(format!(
                    "gradient dims {:?} do not match parameter {key} dims {:?}",
                    grad.dims(),
                    param.dims()
                )));
            }
            for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
                *p = *p - a * *g;
            }
        }
        Ok(())
    }

    pub fn sgd_step(&mut self, grads: &GradientSet<F>, alpha: f64) -> Result<()> {
        self.sgd_step_from(grads, alpha, 0)
    }
}

fn accumulate<F: Scalar>(acc: &mut BTreeMap<String, Vec<f64>>, key: String, grad: &Tensor<F>) {
    let slot = acc.entry(key).or_insert_with(|| vec![0f64; grad.len()]);
    for (a, g) in slot.iter_mut().zip(grad.data()) {
        *a += g.as_f64();
    }
}

/// Outcome of one batch: mean loss, mean gradients, per-sample predictions
/// (first output element, used for accuracy bookkeeping).
pub struct BatchOutcome<F> {
    pub loss: f64,
    pub grads: GradientSet<F>,
    pub predictions: Vec<f64>,
}

/// Mean-of-batch loss and gradients over `batch` of (input, target) pairs.
pub fn batch_backward<F: Scalar>(
    model: &Model<F>,
    batch: &[(Tensor<F>, Tensor<F>)],
    loss: LossKind,
) -> Result<BatchOutcome<F>> {
    if batch.is_empty() {
        return Err(Error::config("backprop requires a nonempty batch".to_string()));
    }
    let n = batch.len() as f64;
    let mut loss_acc = 0f64;
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut predictions = Vec::with_capacity(batch.len());
    for (input, target) in batch {
        let (yhat, cache) = model.forward_cached(input)?;
        loss_acc += loss_forward(target, &yhat, loss)?;
        predictions.push(yhat.data()[0].as_f64());
        let grad_yhat = loss_backward(target, &yhat, loss)?;
        model.backward_into(&cache, grad_yhat, &mut acc)?;
    }
    let mut grads = GradientSet::default();
    for (key, sum) in acc {
        let dims = model
            .params()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, t)| t.dims().to_vec())
            .ok_or_else(|| Error::internal(format!("gradient for unknown parameter {key}")))?;
        let data = sum.iter().map(|v| F::of_f64(v / n)).collect();
        grads.insert(key, Tensor::new(dims, data)?);
    }
    Ok(BatchOutcome { loss: loss_acc / n, grads, predictions })
}

/// Mean batch loss and gradients for every trainable parameter.
pub fn backprop<F: Scalar>(
    model: &Model<F>,
    batch: &[(Tensor<F>, Tensor<F>)],
    loss: LossKind,
) -> Result<(f64, GradientSet<F>)> {
    let out = batch_backward(model, batch, loss)?;
    Ok((out.loss, out.grads))
}

#[derive(Debug, Clone)]
pub struct TrainCfg {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    pub shuffle_seed: u64,
    /// Track thresholded accuracy per epoch (classification tasks).
    pub classification: bool,
    /// Number of leading layers excluded from updates.
    pub freeze_layers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Epoch/batch SGD over `data`; the shuffle stream is seeded once so the
/// whole trajectory is a function of (data order, config).
pub fn fit<F: Scalar>(
    model: &mut Model<F>,
    data: &[(Tensor<F>, Tensor<F>)],
    cfg: &TrainCfg,
) -> Result<Vec<EpochMetrics>> {
    if data.is_empty() {
        return Err(Error::config("training requires a nonempty dataset".to_string()));
    }
    if cfg.batch == 0 {
        return Err(Error::config("batch size must be positive".to_string()));
    }
    let mut rng = XorShift64::new(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<(Tensor<F>, Tensor<F>)> =
                chunk.iter().map(|&i| data[i].clone()).collect();
            let out = batch_backward(model, &batch, cfg.loss)?;
            loss_sum += out.loss * batch.len() as f64;
            if cfg.classification {
                for (&i, pred) in chunk.iter().zip(&out.predictions) {
                    let label = data[i].1.data()[0].as_f64();
                    let predicted = if *pred >= 0.5 { 1.0 } else { 0.0 };
                    if predicted == label {
                        correct += 1;
                    }
                }
            }
            if cfg.learning_rate > 0.0 {
                model.sgd_step_from(&out.grads, cfg.learning_rate, cfg.freeze_layers)?;
            }
        }
        let accuracy = cfg
            .classification
            .then(|| 100.0 * correct as f64 / data.len() as f64);
        log.push(EpochMetrics { epoch: epoch + 1, loss: loss_sum / data.len() as f64, accuracy });
    }
    Ok(log)
}
