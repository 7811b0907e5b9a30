use serde::{Deserialize, Serialize};

use super::special::f_sf;
use super::StatsError;

/// One-factor repeated-measures ANOVA; subjects are CV cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmAnovaResult {
    pub f: f64,
    pub df_treatment: usize,
    pub df_error: usize,
    pub ms_error: f64,
    pub p: f64,
    pub means: Vec<f64>,
    pub subjects: usize,
    pub ss_total: f64,
    pub ss_subjects: f64,
    pub ss_treatment: f64,
    pub ss_error: f64,
}

/// `values[model][subject]`, a complete table of at least 2 × 2.
pub fn anova_rm(values: &[Vec<f64>]) -> Result<RmAnovaResult, StatsError> {
    let m = values.len();
    if m < 2 {
        return Err(StatsError::TooFewObservations { need: 2, got: m });
    }
    let s = values[0].len();
    if let Some(bad) = values.iter().position(|v| v.len() != s) {
        return Err(StatsError::IncompleteTable(format!(
            "model {bad} has {} subjects, expected {s}",
            values[bad].len()
        )));
    }
    if s < 2 {
        return Err(StatsError::TooFewObservations { need: 2, got: s });
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::IncompleteTable("non-finite value".into()));
    }
    let n = (m * s) as f64;
    let grand = values.iter().flatten().sum::<f64>() / n;
    let means: Vec<f64> = values.iter().map(|v| v.iter().sum::<f64>() / s as f64).collect();
    let subj: Vec<f64> = (0..s).map(|j| values.iter().map(|v| v[j]).sum::<f64>() / m as f64).collect();

    let sq = |x: f64| x * x;
    let ss_total: f64 = values.iter().flatten().map(|&x| sq(x - grand)).sum();
    let ss_treatment = s as f64 * means.iter().map(|&mu| sq(mu - grand)).sum::<f64>();
    let ss_subjects = m as f64 * subj.iter().map(|&mu| sq(mu - grand)).sum::<f64>();
    let mut ss_error = 0.0;
    for (i, row) in values.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            ss_error += sq(x - means[i] - subj[j] + grand);
        }
    }

    let df_treatment = m - 1;
    let df_error = (m - 1) * (s - 1);
    let ms_treatment = ss_treatment / df_treatment as f64;
    let ms_error = ss_error / df_error as f64;
    // Residuals within rounding of zero mean the table is exactly additive.
    let tiny = 1e-12 * ss_total;
    let (f, p) = if ss_treatment <= tiny {
        (0.0, 1.0)
    } else if ss_error <= tiny * 1e-3 {
        (f64::INFINITY, 0.0)
    } else {
        let f = ms_treatment / ms_error;
        (f, f_sf(f, df_treatment as f64, df_error as f64))
    };
    Ok(RmAnovaResult {
        f,
        df_treatment,
        df_error,
        ms_error,
        p,
        means,
        subjects: s,
        ss_total,
        ss_subjects,
        ss_treatment,
        ss_error,
    })
}
