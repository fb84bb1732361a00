//! The one value that crosses the client/server boundary.

use crate::tensor::Tensor;

/// One sample's post-privacy-layer feature map plus its label and
/// identifiers. Raw sample data never leaves the client; only these records
/// do.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub client_id: u32,
    pub sample_id: u64,
    pub feature: Tensor<f32>,
    pub label: f32,
    pub noise_applied: bool,
}
