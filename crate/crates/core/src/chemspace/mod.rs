//! Fingerprint-space clustering, proportional subset selection and
//! cluster-aware cross-validation plans.

mod cluster;
mod split;
mod subset;

use thiserror::Error;

pub use cluster::{butina_cluster, leader_cluster, neighbor_lists, ClusterMethod, Clustering};
pub use split::{butina_split_plan, dataset_hash, random_split_plan, Cell, SplitPlan, SplitPolicy};
pub use subset::{proportional_subset, SubsetSelection};

/// Default Tanimoto similarity threshold (distance 0.4).
pub const DEFAULT_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChemspaceError {
    #[error("fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("need at least 2 folds, got {0}")]
    InvalidFolds(usize),
    #[error("need at least 1 repeat, got {0}")]
    InvalidRepeats(usize),
    #[error("{0} clusters cannot fill {1} folds")]
    TooFewClusters(usize, usize),
    #[error("{0} rows cannot fill {1} folds")]
    TooFewRows(usize, usize),
}
