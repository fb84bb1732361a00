//! Neural-network engine, model zoo and metrics for splitstream.
//!
//! The engine is generic over the scalar type: the production pipeline and
//! everything that touches the wire runs `f32`, while gradient verification
//! re-runs models at `f64` shadow precision. All reductions accumulate in
//! f64 regardless of element type.

pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod record;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, max_rel_error, numeric_grads};
pub use layers::{
    activation_forward, conv2d_forward, dense_forward, pool2d_forward, ActivationKind, ConvLayer,
    DenseLayer, PoolLayer, PoolMode,
};
pub use loss::{loss_forward, LossKind};
pub use metrics::{
    classification_metrics, distribution_export, export_feature_image, regression_metrics,
    MetricsReport, TaskKind,
};
pub use model::{backprop, fit, EpochMetrics, GradientSet, Layer, Model, TrainCfg};
pub use record::FeatureRecord;
pub use rng::{derive_seed, XorShift64};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use zoo::{
    build_model, materialize_split, split_model, LayerDesc, ModelKind, ModelSpec, Scale,
    SplitModel, TrainDefaults,
};

/// Production-precision tensor: what flows through the pipeline and the wire.
pub type Tensor32 = Tensor<f32>;
/// Shadow-precision tensor for numerical verification.
pub type Tensor64 = Tensor<f64>;
/// Production-precision model.
pub type Model32 = Model<f32>;
/// Shadow-precision model.
pub type Model64 = Model<f64>;
