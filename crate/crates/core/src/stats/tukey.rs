use serde::{Deserialize, Serialize};

use super::special::{integrate, invert_increasing, ln_gamma, normal_cdf};
use super::{RmAnovaResult, StatsError};

// Quadrature layout: 16-point Gauss–Legendre on every panel. The inner
// integral over the normal kernel covers z in [-8.5, 8.5] with 20 panels;
// the outer integral over the scaled chi density uses 32 panels.
const Z_LIMIT: f64 = 8.5;
const INNER_PANELS: usize = 20;
const OUTER_PANELS: usize = 32;

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

// Phi(z) - Phi(z - w) without cancellation in the upper tail.
fn normal_mass(z: f64, w: f64) -> f64 {
    if z > 0.5 * w {
        normal_cdf(w - z) - normal_cdf(-z)
    } else {
        normal_cdf(z) - normal_cdf(z - w)
    }
}

/// CDF of the range of `k` independent standard normals.
fn range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let e = (k - 1) as i32;
    let v = k as f64 * integrate(|z| phi(z) * normal_mass(z, w).powi(e), -Z_LIMIT, Z_LIMIT, INNER_PANELS);
    v.min(1.0)
}

/// `P(Q <= q)` for the studentized range of `k` means with `df` error
/// degrees of freedom; `df = inf` means a known scale.
pub fn ptukey(q: f64, k: usize, df: f64) -> f64 {
    assert!(k >= 2, "studentized range needs k >= 2");
    if q <= 0.0 {
        return 0.0;
    }
    if q.is_infinite() {
        return 1.0;
    }
    if df.is_infinite() {
        return range_cdf(q, k);
    }
    // Density of s = sqrt(chi2_df / df).
    let ln_c = 0.5 * df * df.ln() - ln_gamma(0.5 * df) - (0.5 * df - 1.0) * std::f64::consts::LN_2;
    let dens = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        (ln_c + (df - 1.0) * s.ln() - 0.5 * df * s * s).exp()
    };
    let spread = 10.0 / df.sqrt();
    let lo = (1.0 - spread).max(0.0);
    let hi = 1.0 + spread;
    integrate(|s| dens(s) * range_cdf(q * s, k), lo, hi, OUTER_PANELS).clamp(0.0, 1.0)
}

/// Upper `alpha` critical value of the studentized range.
pub fn qtukey(alpha: f64, k: usize, df: f64) -> f64 {
    invert_increasing(|q| ptukey(q, k, df), 1.0 - alpha, 1.0, 5.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyPair {
    pub i: usize,
    pub j: usize,
    /// `mean_i - mean_j`.
    pub diff: f64,
    pub q: f64,
    pub p: f64,
    pub ci: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyTable {
    pub alpha: f64,
    /// Standard error of a model mean, `sqrt(MS_error / s)`.
    pub se: f64,
    pub q_crit: f64,
    /// Pairs with `i < j`.
    pub pairs: Vec<TukeyPair>,
}

impl TukeyTable {
    /// Entry for `(i, j)` in either order; the difference follows the
    /// order asked for.
    pub fn get(&self, i: usize, j: usize) -> Option<TukeyPair> {
        let (a, b) = (i.min(j), i.max(j));
        let p = self.pairs.iter().find(|p| p.i == a && p.j == b)?;
        if i <= j {
            return Some(p.clone());
        }
        Some(TukeyPair {
            i,
            j,
            diff: -p.diff,
            ci: [-p.ci[1], -p.ci[0]],
            ..p.clone()
        })
    }
}

/// All-pairs Tukey HSD with the standard error taken from the ANOVA-RM
/// error mean square.
pub fn tukey_hsd_rm(result: &RmAnovaResult, alpha: f64) -> Result<TukeyTable, StatsError> {
    let k = result.means.len();
    if k < 2 || result.subjects < 2 {
        return Err(StatsError::TooFewObservations { need: 2, got: k.min(result.subjects) });
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(StatsError::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let df = result.df_error as f64;
    let se = (result.ms_error / result.subjects as f64).sqrt();
    let q_crit = qtukey(alpha, k, df);
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let diff = result.means[i] - result.means[j];
            let q = if diff == 0.0 { 0.0 } else { diff.abs() / se };
            let p = if q == 0.0 { 1.0 } else { 1.0 - ptukey(q, k, df) };
            let half = q_crit * se;
            pairs.push(TukeyPair {
                i,
                j,
                diff,
                q,
                p: p.clamp(0.0, 1.0),
                ci: [diff - half, diff + half],
            });
        }
    }
    Ok(TukeyTable { alpha, se, q_crit, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::anova_rm;
    use crate::stats::special::t_sf;

    #[test]
    fn two_groups_reduce_to_t() {
        // Q for k = 2 is sqrt(2) |T|.
        for df in [1.0, 2.0, 5.0, 12.0, 40.0, 400.0, 1e5] {
            for q in [0.5, 2.0, 3.5, 6.0] {
                let want = 1.0 - 2.0 * t_sf(q / 2f64.sqrt(), df);
                assert!((ptukey(q, 2, df) - want).abs() < 1e-9, "df {df} q {q}: {}", ptukey(q, 2, df) - want);
            }
        }
    }

    #[test]
    fn published_critical_values() {
        // Upper 5% and 1% points from standard studentized-range tables.
        for &(alpha, k, df, q) in &[
            (0.05, 3, 12.0, 3.773),
            (0.05, 2, 5.0, 3.635),
            (0.05, 4, 20.0, 3.958),
            (0.05, 5, 60.0, 3.977),
            (0.01, 3, 12.0, 5.046),
            (0.05, 3, f64::INFINITY, 3.314),
        ] {
            let got = qtukey(alpha, k, df);
            assert!((got - q).abs() < 1.5e-3, "alpha {alpha} k {k} df {df}: {got}");
        }
        assert!((1.0 - ptukey(3.77, 3, 12.0) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn p_decreases_in_q() {
        let mut last = 1.0;
        for i in 1..40 {
            let p = 1.0 - ptukey(i as f64 * 0.2, 4, 9.0);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn hsd_table() {
        let r = anova_rm(&[
            vec![45.0, 42.0, 36.0, 39.0, 51.0],
            vec![50.0, 42.0, 41.0, 35.0, 55.0],
            vec![55.0, 45.0, 43.0, 40.0, 59.0],
        ])
        .unwrap();
        let t = tukey_hsd_rm(&r, 0.05).unwrap();
        assert_eq!(t.pairs.len(), 3);
        assert!((t.se - (5.15f64 / 5.0).sqrt()).abs() < 1e-12);
        for p in &t.pairs {
            let back = t.get(p.j, p.i).unwrap();
            assert_eq!((back.q, back.p, back.diff), (p.q, p.p, -p.diff));
            assert!((p.ci[1] - p.ci[0] - 2.0 * t.q_crit * t.se).abs() < 1e-9);
        }
        let same = anova_rm(&[vec![1.0, 2.0, 4.0], vec![1.0, 2.0, 4.0]]).unwrap();
        let t = tukey_hsd_rm(&same, 0.05).unwrap();
        assert_eq!((t.pairs[0].q, t.pairs[0].p), (0.0, 1.0));
    }
}
