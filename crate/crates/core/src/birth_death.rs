//! Closed forms for the birth-death chain with absolute-error distortion.
//!
//! With `x = -K/2 = 1 + (1-beta)/(2 beta p)` and `m = acosh(x)`, the occupation
//! kernel, `D^(k)` and `N^(k)` are ratios of hyperbolic functions in `k m`.
//! They are evaluated as log-sinh differences so that `k m` in the hundreds
//! does not overflow.

use serde::Serialize;

use crate::check_beta;
use crate::error::{Error, Result};
use crate::K_GUARD;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BDParams {
    pub p: f64,
    pub beta: f64,
    pub k_beta: f64,
    pub m_beta: f64,
}

impl BDParams {
    pub fn new(p: f64, beta: f64) -> Result<Self> {
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::domain(format!(
                "birth-death probability must lie in (0, 1/2), got {p}"
            )));
        }
        check_beta(beta, true)?;
        // acosh(1 + t) = log1p(t + sqrt(t (t + 2))) keeps full relative
        // accuracy as t -> 0.
        let t = (1.0 - beta) / (2.0 * beta * p);
        Ok(Self {
            p,
            beta,
            k_beta: -2.0 - (1.0 - beta) / (beta * p),
            m_beta: (t + (t * (t + 2.0)).sqrt()).ln_1p(),
        })
    }

    fn is_average(&self) -> bool {
        self.beta == 1.0
    }
}

/// `ln(sinh(x))` for `x > 0`, finite for any finite `x`.
pub(crate) fn ln_sinh(x: f64) -> f64 {
    if x < 20.0 {
        x.sinh().ln()
    } else {
        x - std::f64::consts::LN_2 + (-(-2.0 * x).exp()).ln_1p()
    }
}

/// `[Q^(k)_beta]_{ij}` for `i, j` in `S^(k)`.
pub fn q_entry(params: &BDParams, k: usize, i: i64, j: i64) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("q_entry needs k >= 1"));
    }
    let r = k as i64 - 1;
    if i.abs() > r || j.abs() > r {
        return Err(Error::domain(format!("indices ({i}, {j}) outside S^({k})")));
    }
    let kf = k as f64;
    if params.is_average() {
        let hi = i.max(j) as f64;
        let lo = i.min(j) as f64;
        return Ok((kf - hi) * (kf + lo) / (2.0 * params.p * kf));
    }
    // cosh(a m) - cosh(b m) = 2 sinh(u m) sinh(v m) with u = (a+b)/2, v = (a-b)/2.
    let m = params.m_beta;
    let a = 2.0 * kf - (i - j).abs() as f64;
    let b = (i + j) as f64;
    let (u, v) = (0.5 * (a + b), 0.5 * (a - b));
    let ln = ln_sinh(u * m) + ln_sinh(v * m) - (params.beta * params.p).ln() - ln_sinh(m) - ln_sinh(2.0 * kf * m);
    Ok(ln.exp())
}

/// `(D^(k), N^(k))`.
pub fn bd_metrics(params: &BDParams, k: usize) -> (f64, f64) {
    if k == 0 {
        return (0.0, 1.0);
    }
    let kf = k as f64;
    if params.is_average() {
        return ((kf * kf - 1.0) / (3.0 * kf), 2.0 * params.p / (kf * kf));
    }
    let m = params.m_beta;
    let km = kf * m;
    // S^(1) = {0} and d(0) = 0; the closed form would leave rounding residue.
    let d = if k == 1 {
        0.0
    } else if km < 1.0 {
        d_series(kf, m)
    } else {
        d_closed(kf, m)
    };
    // 2 beta p sinh^2(m/2) cosh(km) / sinh^2(km/2) - (1 - beta), with the
    // constant absorbed using 4 beta p sinh^2(m/2) = 1 - beta.
    let n = ((2.0 * params.beta * params.p).ln() + 2.0 * (ln_sinh(0.5 * m) - ln_sinh(0.5 * km))).exp();
    (d, n)
}

/// `[sinh(km) - k sinh(m)] / [2 sinh^2(km/2) sinh(m)]` with the numerator
/// summed as its odd power series; the direct difference cancels for small `km`.
fn d_series(kf: f64, m: f64) -> f64 {
    let km = kf * m;
    let (mut a, mut b) = (km, m);
    let mut num = 0.0;
    let mut n = 1.0;
    loop {
        a *= km * km / ((n + 1.0) * (n + 2.0));
        b *= m * m / ((n + 1.0) * (n + 2.0));
        n += 2.0;
        let term = a - kf * b;
        num += term;
        if term.abs() <= 1e-18 * num.abs() || n > 80.0 {
            break;
        }
    }
    let s = (0.5 * km).sinh();
    num / (2.0 * s * s * m.sinh())
}

/// Same quantity as `coth(km/2)/sinh(m) - k/(2 sinh^2(km/2))`.
fn d_closed(kf: f64, m: f64) -> f64 {
    let half = 0.5 * kf * m;
    let coth = 1.0 / half.tanh();
    coth / m.sinh() - kf / 2.0 * (-2.0 * ln_sinh(half)).exp()
}

/// `lambda^(k)_1 = k(k+1)(k^2+k+1) / (6p(2k+1))`.
pub fn bd_lambda_avg(p: f64, k: usize) -> f64 {
    let k = k as f64;
    k * (k + 1.0) * (k * k + k + 1.0) / (6.0 * p * (2.0 * k + 1.0))
}

/// Largest `k` with `N^(k) >= alpha` (0 when only `N^(0) = 1` qualifies).
pub fn bd_kstar(params: &BDParams, alpha: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n_of = |k: usize| bd_metrics(params, k).1;
    if params.is_average() {
        let mut k = (2.0 * params.p / alpha).sqrt().floor() as usize;
        while n_of(k + 1) >= alpha {
            k += 1;
        }
        while k > 0 && n_of(k) < alpha {
            k -= 1;
        }
        return Ok(k);
    }
    let mut k = 0;
    while n_of(k + 1) >= alpha {
        k += 1;
        if k > K_GUARD {
            return Err(Error::KMaxInsufficient {
                k_max: K_GUARD,
                detail: format!("N^(k) stays above alpha = {alpha}"),
            });
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params() {
        let bp = BDParams::new(0.3, 1.0).unwrap();
        assert_eq!(bp.m_beta, 0.0);
        assert_eq!(bp.k_beta, -2.0);
        let bp = BDParams::new(0.3, 0.9).unwrap();
        assert!(((-bp.k_beta / 2.0).acosh() - bp.m_beta).abs() < 1e-15);
        assert!(BDParams::new(0.5, 0.9).is_err());
        assert!(BDParams::new(0.3, 0.0).is_err());
    }

    #[test]
    fn q_entries_average() {
        let bp = BDParams::new(0.3, 1.0).unwrap();
        assert!((q_entry(&bp, 2, 0, 0).unwrap() - 10.0 / 3.0).abs() < 1e-14);
        assert!((q_entry(&bp, 3, 0, 1).unwrap() - 10.0 / 3.0).abs() < 1e-14);
        assert!(q_entry(&bp, 3, 0, 3).is_err());
    }

    #[test]
    fn q_entries_discounted_symmetry() {
        let bp = BDParams::new(0.3, 0.9).unwrap();
        for (i, j) in [(0, 2), (-1, 3), (2, -4)] {
            let a = q_entry(&bp, 5, i, j).unwrap();
            assert!((a - q_entry(&bp, 5, j, i).unwrap()).abs() < 1e-14 * a);
            assert!((a - q_entry(&bp, 5, -i, -j).unwrap()).abs() < 1e-14 * a);
        }
    }

    #[test]
    fn metrics_table_cells() {
        let bp = BDParams::new(0.3, 0.95).unwrap();
        let (d, n) = bd_metrics(&bp, 4);
        assert!((d - 1.1218).abs() < 5e-5 && (n - 0.0288).abs() < 5e-5, "{d} {n}");
        let bp = BDParams::new(0.3, 1.0).unwrap();
        assert_eq!(bd_metrics(&bp, 5), (24.0 / 15.0, 0.6 / 25.0));
        let bp = BDParams::new(0.3, 0.9).unwrap();
        let (d, n) = bd_metrics(&bp, 10);
        assert!((d - 1.5298).abs() < 5e-5 && (n - 0.0005).abs() < 5e-5, "{d} {n}");
        assert_eq!(bd_metrics(&bp, 0), (0.0, 1.0));
    }

    #[test]
    fn series_and_closed_branch_meet() {
        for m in [1e-4_f64, 0.01, 0.3] {
            for km in [0.5, 0.9, 1.0, 1.5, 2.0] {
                let kf = (km / m).round().max(2.0);
                let (a, b) = (d_series(kf, m), d_closed(kf, m));
                assert!((a - b).abs() < 1e-11 * a, "m={m} k={kf}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn lambda_avg_values() {
        assert!((bd_lambda_avg(0.3, 1) - 1.1111).abs() < 5e-5);
        assert!((bd_lambda_avg(0.3, 4) - 25.9259).abs() < 5e-5);
        assert_eq!(bd_lambda_avg(0.3, 0), 0.0);
    }

    #[test]
    fn kstar_examples() {
        assert_eq!(bd_kstar(&BDParams::new(0.3, 1.0).unwrap(), 0.15).unwrap(), 2);
        assert_eq!(bd_kstar(&BDParams::new(0.3, 0.9).unwrap(), 0.5).unwrap(), 1);
        // N^(3)_1 = 0.0666..., which prints as 0.0667 but lies below it.
        assert_eq!(bd_kstar(&BDParams::new(0.3, 1.0).unwrap(), 0.0667).unwrap(), 2);
        assert_eq!(bd_kstar(&BDParams::new(0.3, 1.0).unwrap(), 0.6 / 9.0).unwrap(), 3);
        assert_eq!(bd_kstar(&BDParams::new(0.3, 1.0).unwrap(), 0.9).unwrap(), 0);
        assert!(bd_kstar(&BDParams::new(0.3, 1.0).unwrap(), 1.0).is_err());
    }

    #[test]
    fn large_km_finite() {
        let bp = BDParams::new(0.45, 0.5).unwrap();
        for k in [50, 500, 5000] {
            let (d, n) = bd_metrics(&bp, k);
            assert!(d.is_finite() && n.is_finite() && n >= 0.0);
            let q = q_entry(&bp, k, 0, 0).unwrap();
            assert!(q.is_finite() && q > 0.0);
        }
    }
}
