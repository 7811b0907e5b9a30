use ndarray::Array2;
use rand::Rng;

use super::ObjectiveError;
use crate::features::{compute_descriptor_set, DescriptorSet, ScalerStats};
use crate::molgraph::{enumerate_smiles, Molecule};
use crate::seed;
use crate::tokenizer::{encode_batch, TokenizedBatch, Vocabulary};

/// `K` (canonical, enumerated, negative) triples tokenized as one batch:
/// rows `0..K` canonical, `K..2K` enumerated, `2K..3K` negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleBatch {
    pub tokens: TokenizedBatch,
    pub canonical: Vec<String>,
    pub enumerated: Vec<String>,
    pub negative: Vec<String>,
}

impl TripleBatch {
    pub fn from_strings(
        canonical: &[String],
        enumerated: &[String],
        negative: &[String],
        vocab: &Vocabulary,
        max_len: usize,
    ) -> TripleBatch {
        assert!(canonical.len() == enumerated.len() && canonical.len() == negative.len());
        let all: Vec<&String> = canonical.iter().chain(enumerated).chain(negative).collect();
        TripleBatch {
            tokens: encode_batch(&all, vocab, max_len).trimmed(),
            canonical: canonical.to_vec(),
            enumerated: enumerated.to_vec(),
            negative: negative.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.canonical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }
}

/// Triples for the anchors `rows`: the canonical SMILES, a seeded random
/// enumeration of the same molecule, and the canonical SMILES of a uniformly
/// drawn molecule whose canonical form differs from the anchor's.
pub fn build_triples(
    molecules: &[Molecule],
    canonical: &[String],
    rows: &[usize],
    seed: u64,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TripleBatch, ObjectiveError> {
    let first = canonical.first().ok_or(ObjectiveError::EmptyDomainCorpus)?;
    if canonical.iter().all(|c| c == first) {
        return Err(ObjectiveError::NoNegatives);
    }
    let mut c = Vec::with_capacity(rows.len());
    let mut e = Vec::with_capacity(rows.len());
    let mut n = Vec::with_capacity(rows.len());
    for (slot, &i) in rows.iter().enumerate() {
        c.push(canonical[i].clone());
        e.push(enumerate_smiles(&molecules[i], seed::derive(seed, "enumerate", slot as u64)));
        let mut rng = seed::rng(seed, "negative", slot as u64);
        let j = loop {
            let j = rng.random_range(0..canonical.len());
            if canonical[j] != canonical[i] {
                break j;
            }
        };
        n.push(canonical[j].clone());
    }
    Ok(TripleBatch::from_strings(&c, &e, &n, vocab, max_len))
}

/// Descriptor matrix of `molecules`, standardized by `scaler` (fit on the
/// same molecules when `None`). Zero-variance columns are dropped.
pub fn descriptor_targets(
    molecules: &[Molecule],
    set: &DescriptorSet,
    scaler: Option<&ScalerStats>,
) -> Result<(ScalerStats, Array2<f64>), ObjectiveError> {
    let raw: Vec<Vec<f64>> = molecules
        .iter()
        .map(|m| compute_descriptor_set(m, set).values)
        .collect();
    let scaler = match scaler {
        Some(s) => s.clone(),
        None => ScalerStats::fit(&set.names(), &raw)?,
    };
    let d = scaler.output_dim();
    let mut out = Array2::zeros((raw.len(), d));
    for (i, row) in raw.iter().enumerate() {
        let z = scaler.apply(row)?;
        if let Some(j) = z.iter().position(|v| !v.is_finite()) {
            return Err(ObjectiveError::BadRow {
                row: i,
                msg: format!("non-finite standardized descriptor {j}"),
            });
        }
        out.row_mut(i).assign(&ndarray::Array1::from(z));
    }
    Ok((scaler, out))
}
