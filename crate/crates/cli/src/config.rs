//! Experiment configuration: a TOML file whose unset fields fall back to the
//! model's study defaults. Every field's default is documented in the README.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use splitstream_core::{Error, LossKind, ModelKind, Result, Scale, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    SpatioTemporal,
    SingleClient { fraction: f64 },
    FedAvgLite { rounds: usize, local_epochs: usize },
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::SpatioTemporal => "spatio_temporal",
            Mode::SingleClient { .. } => "single_client",
            Mode::FedAvgLite { .. } => "fedavg_lite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    InProcess,
    Tcp,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: String,
    #[serde(default = "default_scale")]
    scale: String,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_split_index")]
    split_index: usize,
    #[serde(default = "default_mode")]
    mode: String,
    #[serde(default = "default_transport")]
    transport: String,
    data: PathBuf,
    out: PathBuf,
    epochs: Option<usize>,
    batch: Option<usize>,
    learning_rate: Option<f64>,
    loss: Option<String>,
    #[serde(default = "default_ratios")]
    client_ratios: Vec<f64>,
    #[serde(default = "default_fraction")]
    val_fraction: f64,
    #[serde(default = "default_fraction")]
    test_fraction: f64,
    #[serde(default = "default_single_fraction")]
    single_fraction: f64,
    #[serde(default = "default_fedavg_rounds")]
    fedavg_rounds: usize,
    #[serde(default = "default_fedavg_local_epochs")]
    fedavg_local_epochs: usize,
    #[serde(default)]
    noise_sigma: f64,
    #[serde(default = "default_positive_class")]
    positive_class: String,
    #[serde(default = "default_queue_capacity")]
    queue_capacity: usize,
    #[serde(default = "default_tcp_addr")]
    tcp_addr: String,
}

fn default_scale() -> String {
    "1".to_string()
}
fn default_split_index() -> usize {
    1
}
fn default_mode() -> String {
    "spatio_temporal".to_string()
}
fn default_transport() -> String {
    "in_process".to_string()
}
fn default_ratios() -> Vec<f64> {
    vec![0.7, 0.2, 0.1]
}
fn default_fraction() -> f64 {
    0.1
}
fn default_single_fraction() -> f64 {
    0.1
}
fn default_fedavg_rounds() -> usize {
    5
}
fn default_fedavg_local_epochs() -> usize {
    2
}
fn default_positive_class() -> String {
    "pos".to_string()
}
fn default_queue_capacity() -> usize {
    splitstream_runtime::DEFAULT_CAPACITY
}
fn default_tcp_addr() -> String {
    "127.0.0.1:0".to_string()
}

/// Fully resolved experiment description; determines a run completely
/// together with the dataset bytes.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub scale: Scale,
    pub seed: u64,
    pub split_index: usize,
    pub mode: Mode,
    pub transport: Transport,
    pub data: PathBuf,
    pub out: PathBuf,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    pub client_ratios: Vec<f64>,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub noise_sigma: f64,
    pub positive_class: String,
    pub queue_capacity: usize,
    pub tcp_addr: String,
}

fn parse_loss(s: &str) -> Result<LossKind> {
    match s {
        "binary_crossentropy" => Ok(LossKind::BinaryCrossentropy),
        "mse" => Ok(LossKind::Mse),
        "msle" => Ok(LossKind::Msle),
        other => Err(Error::config(format!("unknown loss {other:?}"))),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("bad config: {e}")))?;
        let model = ModelKind::parse(&raw.model)?;
        let scale = Scale::parse(&raw.scale)?;
        let spec = splitstream_core::build_model(model, scale, raw.seed)?;
        let mode = match raw.mode.as_str() {
            "spatio_temporal" => Mode::SpatioTemporal,
            "single_client" => Mode::SingleClient { fraction: raw.single_fraction },
            "fedavg_lite" => Mode::FedAvgLite {
                rounds: raw.fedavg_rounds,
                local_epochs: raw.fedavg_local_epochs,
            },
            other => return Err(Error::config(format!("unknown mode {other:?}"))),
        };
        let transport = match raw.transport.as_str() {
            "in_process" => Transport::InProcess,
            "tcp" => Transport::Tcp,
            other => return Err(Error::config(format!("unknown transport {other:?}"))),
        };
        let out = match std::env::var_os("SPLITSTREAM_OUT") {
            Some(root) if raw.out.is_relative() => PathBuf::from(root).join(&raw.out),
            _ => raw.out.clone(),
        };
        let cfg = ExperimentConfig {
            model,
            scale,
            seed: raw.seed,
            split_index: raw.split_index,
            mode,
            transport,
            data: raw.data,
            out,
            epochs: raw.epochs.unwrap_or(spec.defaults.epochs),
            batch: raw.batch.unwrap_or(spec.defaults.batch),
            learning_rate: raw.learning_rate.unwrap_or(spec.defaults.learning_rate),
            loss: raw.loss.as_deref().map(parse_loss).transpose()?.unwrap_or(spec.loss),
            client_ratios: raw.client_ratios,
            val_fraction: raw.val_fraction,
            test_fraction: raw.test_fraction,
            noise_sigma: raw.noise_sigma,
            positive_class: raw.positive_class,
            queue_capacity: raw.queue_capacity,
            tcp_addr: raw.tcp_addr,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config(format!("val_fraction {} not in (0,1)", self.val_fraction)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config(format!(
                "test_fraction {} not in (0,1)",
                self.test_fraction
            )));
        }
        if self.val_fraction + self.test_fraction >= 1.0 {
            return Err(Error::config("val_fraction + test_fraction must be < 1".to_string()));
        }
        if self.client_ratios.is_empty() || self.client_ratios.iter().any(|r| *r <= 0.0) {
            return Err(Error::config("client_ratios must be positive".to_string()));
        }
        let sum: f64 = self.client_ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("client_ratios sum to {sum}, expected 1")));
        }
        if let Mode::SingleClient { fraction } = self.mode {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::config(format!("single_fraction {fraction} not in (0,1]")));
            }
        }
        if let Mode::FedAvgLite { rounds, local_epochs } = self.mode {
            if rounds == 0 || local_epochs == 0 {
                return Err(Error::config("fedavg rounds and local epochs must be > 0".to_string()));
            }
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::config(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::config("epochs and batch must be > 0".to_string()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn task(&self) -> TaskKind {
        match self.loss {
            LossKind::BinaryCrossentropy => TaskKind::Classification,
            LossKind::Mse | LossKind::Msle => TaskKind::Regression,
        }
    }

    /// The model spec for this run (split index applied).
    pub fn model_spec(&self) -> Result<splitstream_core::ModelSpec> {
        let mut spec = splitstream_core::build_model(self.model, self.scale, self.seed)?;
        spec.split_index = self.split_index;
        spec.loss = self.loss;
        spec.validate()?;
        Ok(spec)
    }
}
