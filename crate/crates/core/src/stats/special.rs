//! Special functions behind the test distributions.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::OnceLock;

const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 10_000;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    beta_reg_xy(a, b, x, 1.0 - x)
}

/// `I_x(a, b)` with `y = 1 - x` supplied by the caller, which keeps
/// precision when `x` is close to 1.
pub fn beta_reg_xy(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * y.ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, y) / b
    }
}

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let guard = |v: f64| if v.abs() < CF_TINY { CF_TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// `P(T > |t|)` for Student's t with `df` degrees of freedom.
fn t_tail(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    0.5 * beta_reg_xy(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))
}

pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t > 0.0 {
        1.0 - t_tail(t, df)
    } else {
        t_tail(t, df)
    }
}

/// Upper tail `P(T > t)`.
pub fn t_sf(t: f64, df: f64) -> f64 {
    t_cdf(-t, df)
}

pub fn t_quantile(p: f64, df: f64) -> f64 {
    invert_increasing(|t| t_cdf(t, df), p, -1.0, 1.0)
}

/// Upper tail `P(F > f)` of the F distribution.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    let den = d2 + d1 * f;
    beta_reg_xy(d2 / 2.0, d1 / 2.0, d2 / den, d1 * f / den)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Solves `f(x) = target` for increasing `f` by the Illinois variant of
/// regula falsi, widening the initial bracket `[lo, hi]` as needed.
pub(crate) fn invert_increasing(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = |x: f64| f(x) - target;
    let (mut glo, mut ghi) = (g(lo), g(hi));
    while glo > 0.0 {
        (hi, ghi) = (lo, glo);
        lo -= 2.0 * (hi - lo).max(1.0);
        glo = g(lo);
    }
    while ghi < 0.0 {
        (lo, glo) = (hi, ghi);
        hi += 2.0 * (hi - lo).max(1.0);
        ghi = g(hi);
    }
    let mut side = 0;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let mut next = (lo * ghi - hi * glo) / (ghi - glo);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - x).abs() <= 1e-13 * next.abs().max(1.0);
        x = next;
        let gx = g(x);
        if gx == 0.0 || done {
            break;
        }
        if gx < 0.0 {
            (lo, glo) = (x, gx);
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            (hi, ghi) = (x, gx);
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    x
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(z) and its derivative.
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

pub(crate) fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GL.get_or_init(|| gauss_legendre(16))
}

/// Composite 16-point Gauss–Legendre over `panels` equal panels.
pub(crate) fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let (x, w) = gl16();
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(w) {
            s += wi * f(mid + 0.5 * h * xi);
        }
        total += 0.5 * h * s;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

    // Density of Student's t, integrated by composite Simpson as an
    // independent oracle for the CDF.
    fn t_cdf_oracle(t: f64, df: f64) -> f64 {
        let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
        let dens = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        let n = 20_000;
        let h = t.abs() / n as f64;
        let mut s = dens(0.0) + dens(t.abs());
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * dens(i as f64 * h);
        }
        let half = s * h / 3.0;
        0.5 + half.copysign(t)
    }

    #[test]
    fn t_cdf_matches_numeric_integration() {
        for df in 1..=30 {
            for i in -20..=20 {
                let t = i as f64 * 0.5;
                let (a, b) = (t_cdf(t, df as f64), t_cdf_oracle(t, df as f64));
                assert!((a - b).abs() < 1e-8, "df {df} t {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn incomplete_beta_against_statrs() {
        for &(a, b) in &[(0.5, 0.5), (1.0, 3.0), (2.5, 0.5), (10.0, 7.0), (50.0, 0.5), (0.3, 40.0)] {
            for i in 0..=50 {
                let x = i as f64 / 50.0;
                let want = statrs::function::beta::beta_reg(a, b, x);
                assert!((beta_reg(a, b, x) - want).abs() < 1e-10, "a {a} b {b} x {x}");
            }
        }
        assert_eq!(beta_reg(2.0, 3.0, 0.0), 0.0);
        assert_eq!(beta_reg(2.0, 3.0, 1.0), 1.0);
        // I_x(1, 1) = x and I_x(a, 1) = x^a.
        assert!((beta_reg(1.0, 1.0, 0.37) - 0.37).abs() < 1e-15);
        assert!((beta_reg(3.0, 1.0, 0.5) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn distributions_against_statrs() {
        for df in [1.0, 2.0, 5.0, 12.0, 48.0] {
            let st = StudentsT::new(0.0, 1.0, df).unwrap();
            for t in [-7.5, -2.0, -0.1, 0.0, 0.4, 3.0, 12.0] {
                assert!((t_cdf(t, df) - st.cdf(t)).abs() < 1e-10);
            }
            for p in [0.025, 0.5, 0.975] {
                assert!((t_quantile(p, df) - st.inverse_cdf(p)).abs() < 1e-7);
            }
            let fd = FisherSnedecor::new(2.0, df).unwrap();
            for f in [0.1, 1.0, 3.5, 20.0] {
                assert!((f_sf(f, 2.0, df) - fd.sf(f)).abs() < 1e-10);
            }
        }
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
    }

    #[test]
    fn quadrature_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(16);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // Exact up to degree 31.
        let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((m - 2.0 / 31.0).abs() < 1e-14);
        assert!((integrate(|t| t.exp(), 0.0, 1.0, 3) - (1f64.exp() - 1.0)).abs() < 1e-14);
    }
}
