//! Declarative model descriptions, the three study architectures at
//! configurable scale, and the client/server split.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{ActivationKind, ConvLayer, DenseLayer, PoolLayer, PoolMode};
use crate::loss::LossKind;
use crate::model::{Layer, Model};
use crate::rng::{derive_seed, XorShift64};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Layer descriptor. Input channel/feature counts are inferred while walking
/// the shape chain, so descriptors only carry what the builder chose.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerDesc {
    Conv { kernel: usize, out_channels: usize },
    Pool { window: usize, mode: PoolMode },
    Act(ActivationKind),
    Flatten,
    Dense { out_features: usize },
}

impl LayerDesc {
    fn canonical(&self) -> String {
        match self {
            LayerDesc::Conv { kernel, out_channels } => format!("conv(k={kernel},out={out_channels})"),
            LayerDesc::Pool { window, mode } => {
                let m = match mode {
                    PoolMode::Max => "max",
                    PoolMode::Avg => "avg",
                };
                format!("pool({m},w={window})")
            }
            LayerDesc::Act(ActivationKind::Sigmoid) => "act(sigmoid)".to_string(),
            LayerDesc::Act(ActivationKind::LeakyRelu { slope }) => {
                format!("act(leaky_relu,slope={slope})")
            }
            LayerDesc::Flatten => "flatten".to_string(),
            LayerDesc::Dense { out_features } => format!("dense(out={out_features})"),
        }
    }
}

/// Table-4 training defaults attached to each built model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainDefaults {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

/// Ordered layer descriptors plus the split point. `block_ends[i]` is one
/// past the last layer of hidden block i; layers after the final block end
/// form the head and always stay on the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerDesc>,
    pub block_ends: Vec<usize>,
    pub split_index: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub defaults: TrainDefaults,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    CovidCnn,
    Vgg19Lite,
    CholesterolMlp,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "covid_cnn" => Ok(ModelKind::CovidCnn),
            "vgg19_lite" => Ok(ModelKind::Vgg19Lite),
            "cholesterol_mlp" => Ok(ModelKind::CholesterolMlp),
            other => Err(Error::config(format!(
                "unknown model kind {other:?} (expected covid_cnn, vgg19_lite or cholesterol_mlp)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::CovidCnn => "covid_cnn",
            ModelKind::Vgg19Lite => "vgg19_lite",
            ModelKind::CholesterolMlp => "cholesterol_mlp",
        }
    }
}

/// Model scale as a rational; only 1, 1/2, 1/4 and 1/8 are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub num: u32,
    pub den: u32,
}

impl Scale {
    pub const ONE: Scale = Scale { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        let s = Scale { num, den };
        match (num, den) {
            (1, 1) | (1, 2) | (1, 4) | (1, 8) => Ok(s),
            _ => Err(Error::config(format!("scale must be one of 1, 1/2, 1/4, 1/8; got {num}/{den}"))),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if let Some((n, d)) = t.split_once('/') {
            let num = n.trim().parse::<u32>().map_err(|_| Error::config(format!("bad scale {t:?}")))?;
            let den = d.trim().parse::<u32>().map_err(|_| Error::config(format!("bad scale {t:?}")))?;
            Scale::new(num, den)
        } else if t == "1" {
            Ok(Scale::ONE)
        } else {
            Err(Error::config(format!("bad scale {t:?}")))
        }
    }

    pub fn apply_dim(&self, dim: usize) -> Result<usize> {
        let scaled = dim * self.num as usize;
        if scaled % self.den as usize != 0 {
            return Err(Error::config(format!(
                "scale {}/{} does not divide input dim {dim}",
                self.num, self.den
            )));
        }
        Ok(scaled / self.den as usize)
    }

    /// Channel/width scaling with a floor of 4.
    pub fn apply_channels(&self, ch: usize) -> usize {
        ((ch * self.num as usize) / self.den as usize).max(4)
    }

    pub fn text(&self) -> String {
        if self.den == 1 {
            format!("{}", self.num)
        } else {
            format!("{}/{}", self.num, self.den)
        }
    }
}

fn step_shape(dims: &[usize], desc: &LayerDesc, index: usize) -> Result<Vec<usize>> {
    match desc {
        LayerDesc::Conv { kernel, out_channels } => match dims {
            [h, w, _c] if *h >= *kernel && *w >= *kernel => {
                Ok(vec![h - kernel + 1, w - kernel + 1, *out_channels])
            }
            other => Err(Error::config(format!(
                "layer {index}: conv k={kernel} cannot apply to shape {other:?}"
            ))),
        },
        LayerDesc::Pool { window, .. } => match dims {
            [h, w, c] if h % window == 0 && w % window == 0 => {
                Ok(vec![h / window, w / window, *c])
            }
            other => Err(Error::config(format!(
                "layer {index}: pool window {window} cannot apply to shape {other:?}"
            ))),
        },
        LayerDesc::Act(_) => Ok(dims.to_vec()),
        LayerDesc::Flatten => Ok(vec![dims.iter().product()]),
        LayerDesc::Dense { out_features } => match dims {
            [_n] => Ok(vec![*out_features]),
            other => Err(Error::config(format!(
                "layer {index}: dense needs a flat input, got shape {other:?}"
            ))),
        },
    }
}

impl ModelSpec {
    /// Shapes entering each layer plus the final output shape
    /// (length = layers + 1).
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>> {
        let mut chain = vec![self.input_shape.clone()];
        for (i, desc) in self.layers.iter().enumerate() {
            let next = step_shape(chain.last().unwrap(), desc, i)?;
            chain.push(next);
        }
        Ok(chain)
    }

    /// Validates the shape chain, block structure and split index; returns
    /// the output shape.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let chain = self.shape_chain()?;
        let mut prev = 0;
        for &end in &self.block_ends {
            if end <= prev || end > self.layers.len() {
                return Err(Error::config(format!(
                    "block ends {:?} are not increasing within {} layers",
                    self.block_ends,
                    self.layers.len()
                )));
            }
            prev = end;
        }
        if self.split_index > self.block_ends.len() {
            return Err(Error::config(format!(
                "split index {} exceeds {} hidden blocks",
                self.split_index,
                self.block_ends.len()
            )));
        }
        Ok(chain.last().unwrap().clone())
    }

    pub fn hidden_blocks(&self) -> usize {
        self.block_ends.len()
    }

    /// Number of leading layers assigned to the client for the current
    /// split index.
    pub fn split_layer_count(&self) -> usize {
        if self.split_index == 0 {
            0
        } else {
            self.block_ends[self.split_index - 1]
        }
    }

    /// Deterministic structured-text form with sorted keys; the basis of the
    /// config hash and the weights-file header.
    pub fn canonical_text(&self) -> String {
        let layers: Vec<String> = self.layers.iter().map(|l| l.canonical()).collect();
        let block_ends: Vec<String> = self.block_ends.iter().map(|v| v.to_string()).collect();
        let shape: Vec<String> = self.input_shape.iter().map(|v| v.to_string()).collect();
        format!(
            "block_ends = [{}]\n\
             defaults.batch = {}\n\
             defaults.epochs = {}\n\
             defaults.learning_rate = {}\n\
             input_shape = [{}]\n\
             layers = [{}]\n\
             loss = {}\n\
             name = {}\n\
             seed = {}\n\
             split_index = {}\n",
            block_ends.join(","),
            self.defaults.batch,
            self.defaults.epochs,
            self.defaults.learning_rate,
            shape.join(","),
            layers.join(";"),
            self.loss.name(),
            self.name,
            self.seed,
            self.split_index,
        )
    }

    /// FNV-1a 64 digest of the canonical text.
    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }

    /// Builds the runnable model with seed-derived initial weights: uniform
    /// in +-sqrt(6 / (fan_in + fan_out)), biases zero, drawn in layer order
    /// from one xorshift stream. Weights are drawn in f64 and narrowed, so
    /// every scalar type sees the same underlying values.
    pub fn materialize<F: Scalar>(&self) -> Result<Model<F>> {
        let chain = self.shape_chain()?;
        let mut rng = XorShift64::new(derive_seed(self.seed, "weights-init", &[]));
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, desc) in self.layers.iter().enumerate() {
            let input = &chain[i];
            let layer = match desc {
                LayerDesc::Conv { kernel, out_channels } => {
                    let in_channels = input[2];
                    let fan_in = kernel * kernel * in_channels;
                    let fan_out = kernel * kernel * out_channels;
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let n = kernel * kernel * in_channels * out_channels;
                    let data: Vec<F> =
                        (0..n).map(|_| F::of_f64(rng.uniform(-limit, limit))).collect();
                    Layer::Conv(ConvLayer::new(
                        *kernel,
                        in_channels,
                        *out_channels,
                        Tensor::new(vec![*kernel, *kernel, in_channels, *out_channels], data)?,
                        Tensor::zeros(vec![*out_channels]),
                    )?)
                }
                LayerDesc::Pool { window, mode } => {
                    Layer::Pool(PoolLayer { window: *window, mode: *mode })
                }
                LayerDesc::Act(kind) => Layer::Act(*kind),
                LayerDesc::Flatten => Layer::Flatten,
                LayerDesc::Dense { out_features } => {
                    let in_features = input[0];
                    let limit = (6.0 / (in_features + out_features) as f64).sqrt();
                    let n = in_features * out_features;
                    let data: Vec<F> =
                        (0..n).map(|_| F::of_f64(rng.uniform(-limit, limit))).collect();
                    Layer::Dense(DenseLayer::new(
                        in_features,
                        *out_features,
                        Tensor::new(vec![in_features, *out_features], data)?,
                        Tensor::zeros(vec![*out_features]),
                    )?)
                }
            };
            layers.push(layer);
        }
        Ok(Model::new(layers))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// The two fragments of a split model plus the digest both sides of a
/// session must agree on (computed over the full, unsplit spec).
#[derive(Debug, Clone, PartialEq)]
pub struct SplitModel {
    pub client_part: ModelSpec,
    pub server_part: ModelSpec,
    pub config_hash: u64,
}

/// Splits the spec at its split index: the first `split_index` hidden blocks
/// form the client part, everything else (including the head) stays on the
/// server.
pub fn split_model(spec: &ModelSpec) -> Result<SplitModel> {
    spec.validate()?;
    let cut = spec.split_layer_count();
    let chain = spec.shape_chain()?;
    let client_part = ModelSpec {
        name: format!("{}/client", spec.name),
        input_shape: spec.input_shape.clone(),
        layers: spec.layers[..cut].to_vec(),
        block_ends: spec.block_ends[..spec.split_index].to_vec(),
        split_index: spec.split_index,
        loss: spec.loss,
        seed: spec.seed,
        defaults: spec.defaults,
    };
    let server_part = ModelSpec {
        name: format!("{}/server", spec.name),
        input_shape: chain[cut].clone(),
        layers: spec.layers[cut..].to_vec(),
        block_ends: spec.block_ends[spec.split_index..].iter().map(|e| e - cut).collect(),
        split_index: 0,
        loss: spec.loss,
        seed: spec.seed,
        defaults: spec.defaults,
    };
    Ok(SplitModel { client_part, server_part, config_hash: spec.config_hash() })
}

/// Materializes the full model once and slices it, so both sides share the
/// seed-derived initial weights no matter where the split falls.
pub fn materialize_split<F: Scalar>(spec: &ModelSpec) -> Result<(Model<F>, Model<F>)> {
    let full: Model<F> = spec.materialize()?;
    let cut = spec.split_layer_count();
    let mut layers = full.layers;
    let server = layers.split_off(cut);
    Ok((Model::new(layers), Model::new(server)))
}

/// Builds one of the three study architectures at the given scale.
pub fn build_model(kind: ModelKind, scale: Scale, seed: u64) -> Result<ModelSpec> {
    let spec = match kind {
        ModelKind::CovidCnn => build_covid_cnn(scale, seed)?,
        ModelKind::Vgg19Lite => build_vgg19_lite(scale, seed)?,
        ModelKind::CholesterolMlp => build_cholesterol_mlp(scale, seed)?,
    };
    spec.validate()?;
    Ok(spec)
}

/// Appends one conv block (conv + activation + pool-where-divisible) and
/// returns the updated spatial size. Kernels drop to 1x1 once the spatial
/// extent is too small for 3x3.
fn push_conv_block(
    layers: &mut Vec<LayerDesc>,
    block_ends: &mut Vec<usize>,
    spatial: usize,
    out_channels: usize,
    act: ActivationKind,
    pool: bool,
) -> usize {
    let kernel = if spatial >= 3 { 3 } else { 1 };
    let after_conv = spatial - kernel + 1;
    layers.push(LayerDesc::Conv { kernel, out_channels });
    layers.push(LayerDesc::Act(act));
    let out = if pool && after_conv % 2 == 0 && after_conv >= 2 {
        layers.push(LayerDesc::Pool { window: 2, mode: PoolMode::Max });
        after_conv / 2
    } else {
        after_conv
    };
    block_ends.push(layers.len());
    out
}

fn build_covid_cnn(scale: Scale, seed: u64) -> Result<ModelSpec> {
    let side = scale.apply_dim(64)?;
    let mut layers = Vec::new();
    let mut block_ends = Vec::new();
    let mut spatial = side;
    // Hidden blocks activate with leaky-relu; the study's sigmoid is the
    // classification head that binary crossentropy requires.
    for base in [16usize, 32, 64, 128, 256] {
        spatial = push_conv_block(
            &mut layers,
            &mut block_ends,
            spatial,
            scale.apply_channels(base),
            ActivationKind::leaky_relu_default(),
            true,
        );
    }
    layers.push(LayerDesc::Flatten);
    layers.push(LayerDesc::Dense { out_features: 1 });
    layers.push(LayerDesc::Act(ActivationKind::Sigmoid));
    Ok(ModelSpec {
        name: format!("covid_cnn@{}", scale.text()),
        input_shape: vec![side, side, 1],
        layers,
        block_ends,
        split_index: 1,
        loss: LossKind::BinaryCrossentropy,
        seed,
        defaults: TrainDefaults { epochs: 100, batch: 64, learning_rate: 0.1 },
    })
}

fn build_vgg19_lite(scale: Scale, seed: u64) -> Result<ModelSpec> {
    let side = scale.apply_dim(224)?;
    let mut layers = Vec::new();
    let mut block_ends = Vec::new();
    let mut spatial = side;
    // 2+2+4+4+5 = 17 conv layers in VGG-style groups, pooling after each
    // group wherever the spatial size allows it.
    let groups: [(usize, usize); 5] = [(2, 64), (2, 128), (4, 256), (4, 512), (5, 512)];
    for (convs, base) in groups {
        let ch = scale.apply_channels(base);
        for i in 0..convs {
            let pool = i == convs - 1;
            spatial = push_conv_block(
                &mut layers,
                &mut block_ends,
                spatial,
                ch,
                ActivationKind::leaky_relu_default(),
                pool,
            );
        }
    }
    layers.push(LayerDesc::Flatten);
    layers.push(LayerDesc::Dense { out_features: 1 });
    layers.push(LayerDesc::Act(ActivationKind::Sigmoid));
    Ok(ModelSpec {
        name: format!("vgg19_lite@{}", scale.text()),
        input_shape: vec![side, side, 1],
        layers,
        block_ends,
        split_index: 1,
        loss: LossKind::BinaryCrossentropy,
        seed,
        defaults: TrainDefaults { epochs: 50, batch: 128, learning_rate: 0.1 },
    })
}

fn build_cholesterol_mlp(scale: Scale, seed: u64) -> Result<ModelSpec> {
    let mut layers = Vec::new();
    let mut block_ends = Vec::new();
    for width in [64usize, 32] {
        layers.push(LayerDesc::Dense { out_features: scale.apply_channels(width) });
        layers.push(LayerDesc::Act(ActivationKind::leaky_relu_default()));
        block_ends.push(layers.len());
    }
    // Unbounded regression head: no output activation.
    layers.push(LayerDesc::Dense { out_features: 1 });
    Ok(ModelSpec {
        name: format!("cholesterol_mlp@{}", scale.text()),
        input_shape: vec![7],
        layers,
        block_ends,
        split_index: 1,
        loss: LossKind::Mse,
        seed,
        defaults: TrainDefaults { epochs: 200, batch: 2048, learning_rate: 1e-3 },
    })
}

/// Writes the canonical header plus every parameter as flat 32-bit
/// little-endian payloads, in parameter order.
pub fn save_weights(path: &Path, spec: &ModelSpec, model: &Model<f32>) -> Result<()> {
    let params = model.params();
    let mut head = String::new();
    head.push_str("SPLITSTREAM-WEIGHTS v1\n");
    head.push_str(&spec.canonical_text());
    head.push_str(&format!("params = {}\n", params.len()));
    for (key, tensor) in &params {
        head.push_str(&format!("param {key} {}\n", tensor.len()));
    }
    head.push_str("binary\n");
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(head.as_bytes())
        .and_then(|_| {
            for (_, tensor) in &params {
                for v in tensor.data() {
                    file.write_all(&v.to_le_bytes())?;
                }
            }
            Ok(())
        })
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

/// Reads back a weights file: (header text, parameters in file order).
pub fn load_weights(path: &Path) -> Result<(String, Vec<(String, Vec<f32>)>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let marker = b"binary\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::data(format!("{}: missing binary marker", path.display())))?;
    let header = String::from_utf8(bytes[..split + marker.len()].to_vec())
        .map_err(|_| Error::data(format!("{}: header is not UTF-8", path.display())))?;
    if !header.starts_with("SPLITSTREAM-WEIGHTS v1\n") {
        return Err(Error::data(format!("{}: not a weights file", path.display())));
    }
    let mut params = Vec::new();
    for line in header.lines() {
        if let Some(rest) = line.strip_prefix("param ") {
            let mut it = rest.split_whitespace();
            let key = it.next().ok_or_else(|| Error::data("malformed param line".to_string()))?;
            let len: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::data("malformed param line".to_string()))?;
            params.push((key.to_string(), len));
        }
    }
    let mut offset = split + marker.len();
    let mut out = Vec::with_capacity(params.len());
    for (key, len) in params {
        let need = len * 4;
        if offset + need > bytes.len() {
            return Err(Error::data(format!("{}: truncated payload for {key}", path.display())));
        }
        let vals: Vec<f32> = bytes[offset..offset + need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        offset += need;
        out.push((key, vals));
    }
    Ok((header, out))
}
