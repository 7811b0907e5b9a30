//! Significance testing over per-cell metric tables: paired t-tests,
//! repeated-measures ANOVA and Tukey HSD on the ANOVA-RM error term.

mod anova;
mod report;
pub mod special;
mod table;
mod ttest;
mod tukey;

use thiserror::Error;

pub use anova::{anova_rm, RmAnovaResult};
pub use report::{significance_report, stars, AnovaSummary, Direction, PairwiseEntry, SignificanceReport};
pub use table::{CellKey, MetricTable};
pub use ttest::{paired_t, PairedSample, Tail, TTest};
pub use tukey::{ptukey, qtukey, tukey_hsd_rm, TukeyPair, TukeyTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("differences have zero variance; the t statistic is undefined")]
    ZeroVarianceDifferences,
    #[error("need at least {need} observations, got {got}")]
    TooFewObservations { need: usize, got: usize },
    #[error("incomplete table: {0}")]
    IncompleteTable(String),
    #[error("samples are not aligned: {0}")]
    Misaligned(String),
    #[error("{0}")]
    InvalidArgument(String),
}
