//! Client and server runtimes: dataset ingestion, the frozen privacy layer,
//! the bounded feature queue and server-side training/evaluation.

pub mod client;
pub mod data;
pub mod queue;
pub mod server;
pub mod synth;

pub use client::{ClientCfg, ClientRuntime, ClientSummary};
pub use data::{
    load_image_dataset, load_pgm, load_png, load_tabular_csv, resize_bilinear, Sample,
    TabularStats,
};
pub use queue::{FeatureQueue, PopOutcome, QueueStats, DEFAULT_CAPACITY};
pub use server::{
    assemble_dataset, collect_records, evaluate, train_server_model, AssembledDataset,
    EvalOutcome, IngestServer,
};
