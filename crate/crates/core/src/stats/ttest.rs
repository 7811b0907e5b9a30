use serde::{Deserialize, Serialize};

use super::special::{t_cdf, t_sf};
use super::{MetricTable, StatsError};
use crate::downstream::{MetricName, MetricRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    Two,
    /// Alternative: mean(a - b) > 0.
    Greater,
    /// Alternative: mean(a - b) < 0.
    Less,
}

/// Values of two models on the same cells, in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedSample {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self, StatsError> {
        if a.len() != b.len() {
            return Err(StatsError::Misaligned(format!("{} vs {} values", a.len(), b.len())));
        }
        if a.len() < 3 {
            return Err(StatsError::TooFewObservations { need: 3, got: a.len() });
        }
        Ok(PairedSample { a, b })
    }

    pub fn from_records(records: &[MetricRecord], a: &str, b: &str, metric: MetricName) -> Result<Self, StatsError> {
        let t = MetricTable::from_records(records, &[a.to_string(), b.to_string()], metric)?;
        let [va, vb]: [Vec<f64>; 2] = t.values.try_into().expect("two models");
        Self::new(va, vb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Paired t-test on the differences `a - b`.
pub fn paired_t(sample: &PairedSample, tail: Tail) -> Result<TTest, StatsError> {
    let d: Vec<f64> = sample.a.iter().zip(&sample.b).map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    // Differences equal up to rounding count as constant.
    let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if var.sqrt() <= 1e-12 * scale || var == 0.0 {
        return Err(StatsError::ZeroVarianceDifferences);
    }
    let t = mean / (var / n).sqrt();
    let df = n - 1.0;
    let p = match tail {
        Tail::Two => 2.0 * t_sf(t.abs(), df),
        Tail::Greater => t_sf(t, df),
        Tail::Less => t_cdf(t, df),
    };
    Ok(TTest { t, df, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_two_three() {
        let s = PairedSample::new(vec![1.0, 2.0, 3.0], vec![0.0; 3]).unwrap();
        let r = paired_t(&s, Tail::Two).unwrap();
        assert!((r.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.df, 2.0);
        // With 2 df the t CDF is closed-form: 1/2 + t / (2 sqrt(2 + t^2)).
        let oracle = 1.0 - r.t / (2.0 + r.t * r.t).sqrt();
        assert!((r.p - oracle).abs() < 1e-12);
        assert!((r.p - 0.0742).abs() < 1e-4);
        let g = paired_t(&s, Tail::Greater).unwrap();
        let l = paired_t(&s, Tail::Less).unwrap();
        assert!((g.p - r.p / 2.0).abs() < 1e-12 && (g.p + l.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_shift_is_an_error() {
        let b = vec![0.3, 1.7, 2.2, 9.1];
        let a: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
        let s = PairedSample::new(a, b).unwrap();
        assert_eq!(paired_t(&s, Tail::Two), Err(StatsError::ZeroVarianceDifferences));
        assert!(PairedSample::new(vec![1.0, 2.0], vec![1.0, 2.0]).is_err());
        assert!(PairedSample::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn swapping_negates_t(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..30)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let fwd = paired_t(&PairedSample::new(a.clone(), b.clone()).unwrap(), Tail::Two);
            let rev = paired_t(&PairedSample::new(b, a).unwrap(), Tail::Two);
            if let (Ok(f), Ok(r)) = (fwd, rev) {
                prop_assert!((f.t + r.t).abs() < 1e-9 * f.t.abs().max(1.0));
                prop_assert!((f.p - r.p).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&f.p));
            }
        }
    }
}
