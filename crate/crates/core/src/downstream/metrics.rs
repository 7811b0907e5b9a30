use serde::{Deserialize, Serialize};

use super::DownstreamError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricName {
    #[serde(rename = "MAE")]
    Mae,
    #[serde(rename = "RMSE")]
    Rmse,
    #[serde(rename = "R2")]
    R2,
    Pearson,
    Spearman,
}

impl MetricName {
    pub const ALL: [MetricName; 5] = [
        MetricName::Mae,
        MetricName::Rmse,
        MetricName::R2,
        MetricName::Pearson,
        MetricName::Spearman,
    ];

    pub fn lower_is_better(self) -> bool {
        matches!(self, MetricName::Mae | MetricName::Rmse)
    }
}

impl std::fmt::Display for MetricName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricName::Mae => "MAE",
            MetricName::Rmse => "RMSE",
            MetricName::R2 => "R2",
            MetricName::Pearson => "Pearson",
            MetricName::Spearman => "Spearman",
        })
    }
}

impl std::str::FromStr for MetricName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricName::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

/// Regression metrics. Correlations and R² are `None` when a variance they
/// divide by is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

impl Metrics {
    pub fn get(&self, m: MetricName) -> Option<f64> {
        match m {
            MetricName::Mae => Some(self.mae),
            MetricName::Rmse => Some(self.rmse),
            MetricName::R2 => self.r2,
            MetricName::Pearson => self.pearson,
            MetricName::Spearman => self.spearman,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing their average rank.
pub(crate) fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn compute_metrics(y: &[f64], pred: &[f64]) -> Result<Metrics, DownstreamError> {
    if y.len() != pred.len() {
        return Err(DownstreamError::Shape(format!("{} targets vs {} predictions", y.len(), pred.len())));
    }
    if y.len() < 2 {
        return Err(DownstreamError::TooFewRows { need: 2, got: y.len() });
    }
    let n = y.len() as f64;
    let mae = y.iter().zip(pred).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    let my = mean(y);
    let sst: f64 = y.iter().map(|a| (a - my) * (a - my)).sum();
    Ok(Metrics {
        mae,
        rmse: (sse / n).sqrt(),
        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
        pearson: pearson(y, pred),
        spearman: pearson(&average_ranks(y), &average_ranks(pred)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_mean_predictor() {
        let y = [1.0, 3.0, 2.0, 7.0];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!((m.mae, m.rmse, m.r2), (0.0, 0.0, Some(1.0)));
        assert!((m.pearson.unwrap() - 1.0).abs() < 1e-12 && (m.spearman.unwrap() - 1.0).abs() < 1e-12);
        let mu = [3.25; 4];
        assert_eq!(compute_metrics(&y, &mu).unwrap().r2, Some(0.0));
    }

    #[test]
    fn swapped_pair_has_r2_minus_three() {
        let m = compute_metrics(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((m.r2.unwrap() + 3.0).abs() < 1e-12);
        assert!((m.pearson.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_target_leaves_correlations_missing() {
        let m = compute_metrics(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.r2, m.pearson, m.spearman), (None, None, None));
        assert!((m.mae - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
        assert_eq!("r2".parse::<MetricName>().unwrap(), MetricName::R2);
    }

    proptest! {
        #[test]
        fn metric_identities(v in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..40)) {
            let (y, p): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let m = compute_metrics(&y, &p).unwrap();
            prop_assert!(m.rmse >= m.mae - 1e-12);
            if let Some(r2) = m.r2 { prop_assert!(r2 <= 1.0); }
            for c in [m.pearson, m.spearman].into_iter().flatten() {
                prop_assert!((-1.0..=1.0).contains(&c));
            }
        }
    }
}
