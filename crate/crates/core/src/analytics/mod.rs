//! Exact performance of threshold strategies.
//!
//! For `k >= 1` the error chain started at 0 runs inside `S^(k) = {-(k-1), ..., k-1}`
//! until it first leaves, which is when `f^(k)` transmits. Row 0 of
//! `Q = (I - beta P^(k))^-1` gives the discounted occupation of each state
//! before that exit; `L` and `M` are its inner products with `d^(k)` and `1`.

mod montecarlo;

pub use montecarlo::{lm_montecarlo, lm_montecarlo_with, LmEstimate, DEFAULT_EPISODE_CAP};

use serde::Serialize;

use crate::banded::{residual_inf, solve_checked, SymBanded};
use crate::check_beta;
use crate::error::{Error, Result};
use crate::source::{DistortionSpec, MarkovSource};

/// `f^(k)`: transmit exactly when `|e| >= k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ThresholdPolicy {
    pub k: usize,
}

impl ThresholdPolicy {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    #[inline]
    pub fn transmits(&self, e: i64) -> bool {
        e.unsigned_abs() >= self.k as u64
    }
}

/// Performance of `f^(k)` from state 0.
///
/// For `k = 0` there is no exit time; `(L, M)` is stored as `(0, 1/(2 - beta))`,
/// the only pair for which the `k >= 1` identities give `D = 0` and `N = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyMetrics {
    pub k: usize,
    pub beta: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "N")]
    pub n: f64,
}

impl PolicyMetrics {
    fn always_transmit(beta: f64) -> Self {
        Self {
            k: 0,
            beta,
            l: 0.0,
            m: 1.0 / (2.0 - beta),
            d: 0.0,
            n: 1.0,
        }
    }

    /// `C^(k)(0; lambda) = D + lambda N`.
    pub fn cost_at(&self, lambda: f64) -> f64 {
        self.d + lambda * self.n
    }
}

/// `P^(k)`: transitions among `S^(k)`, index `i` standing for state `i - (k-1)`.
pub fn submatrix(source: &MarkovSource, k: usize) -> Result<SymBanded> {
    if k == 0 {
        return Err(Error::domain("S^(0) is empty; the submatrix needs k >= 1"));
    }
    let n = 2 * k - 1;
    Ok(SymBanded::from_fn(n, source.matrix_band(), |i, j| source.p(i - j)))
}

fn system_matrix(source: &MarkovSource, k: usize, beta: f64) -> SymBanded {
    let n = 2 * k - 1;
    SymBanded::from_fn(n, source.matrix_band(), |i, j| {
        let a = -beta * source.p(i - j);
        if i == j {
            1.0 + a
        } else {
            a
        }
    })
}

fn unit(n: usize, at: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[at] = 1.0;
    v
}

/// Row 0 of `(I - beta P^(k))^-1`, by one solve with the transposed matrix
/// (which is the matrix itself, `P^(k)` being symmetric).
pub fn q_row_zero(source: &MarkovSource, k: usize, beta: f64) -> Result<Vec<f64>> {
    check_beta(beta, true)?;
    if k == 0 {
        return Err(Error::domain("q_row_zero needs k >= 1"));
    }
    let a = system_matrix(source, k, beta);
    let fac = a.cholesky()?;
    let y = solve_checked(&a, &fac, &unit(2 * k - 1, k - 1))?;
    check_positive(&y)?;
    Ok(y)
}

/// `||(I - beta P^(k))ᵀ y - e_0||_inf` for a candidate row `y`.
pub fn q_row_residual(source: &MarkovSource, k: usize, beta: f64, y: &[f64]) -> f64 {
    let a = system_matrix(source, k, beta);
    residual_inf(&a, y, &unit(2 * k - 1, k - 1))
}

fn check_positive(y: &[f64]) -> Result<()> {
    if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Numerical {
            detail: format!("occupation entry {i} is not positive ({v:e})"),
            residual: f64::NAN,
        });
    }
    Ok(())
}

/// Two-sided probability of leaving `S^(k)` in one step from state `s`.
pub(crate) fn leak(source: &MarkovSource, k: usize, s: i64) -> f64 {
    let k = k as i64;
    source.tail_sum_from((k - s) as usize) + source.tail_sum_from((k + s) as usize)
}

/// Everything the analytic modules need about one threshold.
#[derive(Debug, Clone)]
pub(crate) struct ThresholdSolve {
    pub metrics: PolicyMetrics,
    /// Row 0 of `Q^(k)`.
    pub y: Vec<f64>,
    /// `[Q^(k) 1]` and `[Q^(k) d^(k)]` at the outermost states `-(k-1)` and `k-1`.
    pub edge_ones: [f64; 2],
    pub edge_dist: [f64; 2],
}

pub(crate) fn threshold_solve(
    source: &MarkovSource,
    d: &DistortionSpec,
    k: usize,
    beta: f64,
) -> Result<ThresholdSolve> {
    debug_assert!(k >= 1);
    let n = 2 * k - 1;
    let a = system_matrix(source, k, beta);
    let fac = a.cholesky()?;
    let y = solve_checked(&a, &fac, &unit(n, k - 1))?;
    check_positive(&y)?;
    let dv = d.restricted(k);
    let ones = vec![1.0; n];
    let x1 = solve_checked(&a, &fac, &ones)?;
    let xd = solve_checked(&a, &fac, &dv)?;

    let m: f64 = y.iter().sum();
    let l: f64 = y.iter().zip(&dv).map(|(a, b)| a * b).sum();
    // 1/M - (1 - beta) rewritten as beta <y, leak> / M, which does not cancel
    // when M approaches 1/(1 - beta).
    let off = k as i64 - 1;
    let exit: f64 = y
        .iter()
        .enumerate()
        .map(|(i, yi)| yi * leak(source, k, i as i64 - off))
        .sum();
    let nval = beta * exit / m;
    let metrics = PolicyMetrics {
        k,
        beta,
        l,
        m,
        d: l / m,
        n: nval,
    };
    Ok(ThresholdSolve {
        metrics,
        y,
        edge_ones: [x1[0], x1[n - 1]],
        edge_dist: [xd[0], xd[n - 1]],
    })
}

/// `(L^(k), M^(k))` for `k >= 1`.
pub fn lm_values(source: &MarkovSource, d: &DistortionSpec, k: usize, beta: f64) -> Result<(f64, f64)> {
    check_beta(beta, true)?;
    if k == 0 {
        return Err(Error::domain("L and M are defined for k >= 1"));
    }
    let s = threshold_solve(source, d, k, beta)?;
    Ok((s.metrics.l, s.metrics.m))
}

pub fn policy_metrics(source: &MarkovSource, d: &DistortionSpec, k: usize, beta: f64) -> Result<PolicyMetrics> {
    check_beta(beta, true)?;
    if k == 0 {
        return Ok(PolicyMetrics::always_transmit(beta));
    }
    Ok(threshold_solve(source, d, k, beta)?.metrics)
}

/// Metrics for `k = 0..=k_max`.
pub fn metrics_range(source: &MarkovSource, d: &DistortionSpec, k_max: usize, beta: f64) -> Result<Vec<PolicyMetrics>> {
    (0..=k_max).map(|k| policy_metrics(source, d, k, beta)).collect()
}
