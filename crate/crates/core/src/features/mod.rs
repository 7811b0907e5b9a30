//! Descriptor vectors, standardization and Morgan fingerprints.

mod descriptors;
mod fingerprint;
mod scaler;

use thiserror::Error;

pub use descriptors::{compute_descriptor_set, compute_descriptors, Descriptor, DescriptorSet, DescriptorVector};
pub use fingerprint::{morgan_fingerprint, tanimoto, Fingerprint, DEFAULT_NBITS, DEFAULT_RADIUS};
pub use scaler::ScalerStats;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
    #[error("at least 2 rows are required to fit a scaler, got {0}")]
    InsufficientData(usize),
    #[error("width mismatch: expected {0}, got {1}")]
    WidthMismatch(usize, usize),
}

/// Writes a descriptor matrix as CSV with the descriptor names as header.
pub fn write_descriptor_csv<W: std::io::Write>(
    out: W,
    names: &[String],
    rows: &[Vec<f64>],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(names)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
