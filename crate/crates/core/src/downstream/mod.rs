//! Frozen-embedding evaluation: labeled datasets, random-forest regression,
//! metrics and repeated cross-validation.

mod cv;
mod dataset;
mod embed;
mod forest;
mod metrics;

use thiserror::Error;

pub use cv::{build_split_plan, records_from_csv, records_to_csv, run_repeated_cv, MetricRecord};
pub use dataset::{CensorDirection, CensorRule, DatasetConfig, LabeledDataset, Transform};
pub use embed::embed_dataset;
pub use forest::{fit_forest, ForestConfig, ForestModel, Node, Tree};
pub use metrics::{compute_metrics, MetricName, Metrics};

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error("row {row}: {msg}")]
    BadRow { row: usize, msg: String },
    #[error("row {row}: `{smiles}` contains characters outside the vocabulary")]
    TokenizationFailure { row: usize, smiles: String },
    #[error("{0}")]
    Shape(String),
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("dataset config: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Encoder(#[from] crate::encoder::EncoderError),
    #[error(transparent)]
    Chemspace(#[from] crate::chemspace::ChemspaceError),
}
