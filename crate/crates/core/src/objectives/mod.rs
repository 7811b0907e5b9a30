//! Self-supervised objectives (masked language modeling, descriptor
//! regression, contrastive SMILES pairs) and the loops that train them.

mod data;
mod losses;
mod masking;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{build_triples, descriptor_targets, TripleBatch};
pub use losses::{
    cl_head_loss, cl_loss, cl_margin_rate, contrastive_terms, mlm_accuracy, mlm_head_loss, mlm_loss, mtr_head_loss, mtr_loss,
    ClVariant, HeadGrad, Step,
};
pub use masking::{apply_masking, MaskedBatch, MaskingConfig};
pub use train::{domain_adapt, evaluate_loss, pretrain, resume, StepLog, TrainConfig};

use crate::encoder::EncoderError;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("batch has no masked tokens")]
    NoMaskedTokens,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("zero-norm embedding in row {0}")]
    ZeroVector(usize),
    #[error("domain corpus is empty")]
    EmptyDomainCorpus,
    #[error("corpus row {row}: {msg}")]
    BadRow { row: usize, msg: String },
    #[error("contrastive training needs at least two distinct molecules")]
    NoNegatives,
    #[error("non-finite loss at step {0}")]
    NonFinite(u64),
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Features(#[from] crate::features::FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mlm,
    Mtr,
    Cl,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Mlm => "mlm",
            Objective::Mtr => "mtr",
            Objective::Cl => "cl",
        })
    }
}

impl std::str::FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mlm" => Ok(Objective::Mlm),
            "mtr" => Ok(Objective::Mtr),
            "cl" => Ok(Objective::Cl),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}
