use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Forward, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Hidden state at position 0.
    Cls,
    /// Average over positions with attention mask 1.
    Mean,
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Cls => "cls",
            Pooling::Mean => "mean",
        })
    }
}

impl std::str::FromStr for Pooling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cls" => Ok(Pooling::Cls),
            "mean" => Ok(Pooling::Mean),
            other => Err(format!("unknown pooling `{other}`")),
        }
    }
}

/// One vector per sequence, `(batch, hidden_dim)`.
pub fn pool<F: Real>(fwd: &Forward<F>, strategy: Pooling) -> Array2<F> {
    let d = fwd.hidden.ncols();
    let t = fwd.width;
    let mask = fwd.attention_mask();
    let mut out = Array2::zeros((fwd.batch, d));
    for (b, mut o) in out.rows_mut().into_iter().enumerate() {
        match strategy {
            Pooling::Cls => o.assign(&fwd.hidden.row(b * t)),
            Pooling::Mean => {
                let mut count = 0usize;
                for j in 0..t {
                    if mask[[b, j]] == 1 {
                        o += &fwd.hidden.row(b * t + j);
                        count += 1;
                    }
                }
                o /= F::of(count.max(1) as f64);
            }
        }
    }
    out
}

/// Gradient with respect to the hidden states given one w.r.t. the pooled
/// output.
pub fn pool_backward<F: Real>(fwd: &Forward<F>, d_pooled: &Array2<F>, strategy: Pooling) -> Array2<F> {
    let t = fwd.width;
    let mask = fwd.attention_mask();
    let mut dh = Array2::zeros(fwd.hidden.raw_dim());
    for (b, g) in d_pooled.rows().into_iter().enumerate() {
        match strategy {
            Pooling::Cls => dh.row_mut(b * t).assign(&g),
            Pooling::Mean => {
                let count = mask.row(b).iter().filter(|&&m| m == 1).count().max(1);
                let share = &g / F::of(count as f64);
                for j in 0..t {
                    if mask[[b, j]] == 1 {
                        dh.row_mut(b * t + j).assign(&share);
                    }
                }
            }
        }
    }
    dh
}
