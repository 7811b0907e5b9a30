use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Per-column standardization statistics. Columns whose population standard
/// deviation is at most `ZERO_VARIANCE` are dropped; `kept` records which.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub kept: Vec<bool>,
}

const ZERO_VARIANCE: f64 = 1e-12;

impl ScalerStats {
    /// Population mean and standard deviation per column.
    pub fn fit(names: &[String], rows: &[Vec<f64>]) -> Result<ScalerStats, FeatureError> {
        if rows.len() < 2 {
            return Err(FeatureError::InsufficientData(rows.len()));
        }
        let d = names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(FeatureError::WidthMismatch(d, r.len()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                let e = r[j] - mean[j];
                var[j] += e * e;
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        let kept = std.iter().map(|&s| s > ZERO_VARIANCE).collect();
        Ok(ScalerStats {
            names: names.to_vec(),
            mean,
            std,
            kept,
        })
    }

    pub fn kept_names(&self) -> Vec<String> {
        self.names
            .iter()
            .zip(&self.kept)
            .filter(|(_, &k)| k)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Indices of dropped (zero-variance) columns.
    pub fn dropped(&self) -> Vec<usize> {
        (0..self.kept.len()).filter(|&j| !self.kept[j]).collect()
    }

    pub fn output_dim(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    /// Standardizes one row, keeping only retained columns.
    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if row.len() != self.names.len() {
            return Err(FeatureError::WidthMismatch(self.names.len(), row.len()));
        }
        Ok((0..row.len())
            .filter(|&j| self.kept[j])
            .map(|j| (row[j] - self.mean[j]) / self.std[j])
            .collect())
    }
}
