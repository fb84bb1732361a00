//! Experiment harness: configuration, data partitioning, the
//! spatio-temporal / single-client / FedAvg-lite run modes and report
//! comparison.

pub mod compare;
pub mod config;
pub mod experiment;
pub mod fedavg;
pub mod partition;

pub use compare::{compare_reports, run_compare, Comparison};
pub use config::{ExperimentConfig, Mode, Transport};
pub use experiment::{load_samples, run_centralized_reference, run_experiment, RunArtifacts};
pub use fedavg::{run_fedavg, weighted_average};
pub use partition::{split_dataset, DataPartition};
