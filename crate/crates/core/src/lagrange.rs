//! Calibration multipliers and the optimal Lagrangian cost curve.
//!
//! `lambda^(k)` is the multiplier at which `f^(k)` and `f^(k+1)` cost the same
//! from state 0. When the sequence increases, `f^(k+1)` is optimal on
//! `(lambda^(k), lambda^(k+1)]` and the optimal cost is the lower envelope of
//! the lines `D^(k) + lambda N^(k)`.

use serde::Serialize;

use crate::analytics::{threshold_solve, PolicyMetrics, ThresholdPolicy, ThresholdSolve};
use crate::check_beta;
use crate::error::{Error, Result};
use crate::source::{DistortionSpec, MarkovSource};
use crate::{DEFAULT_K_MAX, K_GUARD};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A4Report {
    pub ok: bool,
    /// First index `k` with `lambda^(k) <= lambda^(k-1)`.
    pub first_violation: Option<usize>,
    pub checked: usize,
}

pub fn check_a4(lambdas: &[f64]) -> A4Report {
    let first_violation = lambdas.windows(2).position(|w| !(w[1] > w[0])).map(|i| i + 1);
    A4Report {
        ok: first_violation.is_none(),
        first_violation,
        checked: lambdas.len(),
    }
}

/// `beta * sum_s y_s P_{s,e}` for `e = -k, +k`: discounted probability that the
/// first exit from `S^(k)` lands on `e`.
fn landing(source: &MarkovSource, s: &ThresholdSolve, beta: f64) -> [f64; 2] {
    let k = s.metrics.k as i64;
    let off = k - 1;
    let mut h = [0.0; 2];
    for (slot, e) in [-k, k].into_iter().enumerate() {
        h[slot] = beta
            * s.y
                .iter()
                .enumerate()
                .map(|(i, yi)| yi * source.p((e - (i as i64 - off)).unsigned_abs() as usize))
                .sum::<f64>();
    }
    h
}

/// `lambda^(k)` from the solves at `k` and `k + 1` (`k >= 1`).
///
/// `M^(k+1) - M^(k)` and `L^(k+1) - L^(k)` are formed from first-passage terms
/// at the two new states rather than by subtraction.
fn lambda_between(source: &MarkovSource, beta: f64, lo: &ThresholdSolve, hi: &ThresholdSolve) -> Result<f64> {
    let h = landing(source, lo, beta);
    let dm = h[0] * hi.edge_ones[0] + h[1] * hi.edge_ones[1];
    let dl = h[0] * hi.edge_dist[0] + h[1] * hi.edge_dist[1];
    if !(dm > 0.0) || !dm.is_finite() {
        return Err(Error::Consistency(format!(
            "M^({}) - M^({}) = {dm:e} is not positive",
            hi.metrics.k, lo.metrics.k
        )));
    }
    Ok(dl * lo.metrics.m / dm - lo.metrics.l)
}

fn lambda_zero(first: &PolicyMetrics) -> Result<f64> {
    let den = 1.0 - first.n;
    if !(den > 0.0) {
        return Err(Error::Consistency(format!("N^(1) = {} is not below 1", first.n)));
    }
    Ok(first.d / den)
}

struct Sweep {
    metrics: Vec<PolicyMetrics>,
    lambdas: Vec<f64>,
}

fn sweep(source: &MarkovSource, d: &DistortionSpec, beta: f64, k_max: usize) -> Result<Sweep> {
    check_beta(beta, true)?;
    if k_max < 1 {
        return Err(Error::domain("k_max must be at least 1"));
    }
    let mut metrics = vec![crate::analytics::policy_metrics(source, d, 0, beta)?];
    let mut lambdas = Vec::with_capacity(k_max + 1);
    let mut prev = threshold_solve(source, d, 1, beta)?;
    metrics.push(prev.metrics);
    lambdas.push(lambda_zero(&prev.metrics)?);
    for k in 1..=k_max {
        let next = threshold_solve(source, d, k + 1, beta)?;
        lambdas.push(lambda_between(source, beta, &prev, &next)?);
        metrics.push(next.metrics);
        prev = next;
    }
    Ok(Sweep { metrics, lambdas })
}

/// `lambda^(0..=k_max)`.
pub fn lambda_sequence(source: &MarkovSource, d: &DistortionSpec, beta: f64, k_max: usize) -> Result<Vec<f64>> {
    Ok(sweep(source, d, beta, k_max)?.lambdas)
}

/// A single `lambda^(k)`.
pub fn lambda_at(source: &MarkovSource, d: &DistortionSpec, beta: f64, k: usize) -> Result<f64> {
    check_beta(beta, true)?;
    let first = threshold_solve(source, d, k.max(1), beta)?;
    if k == 0 {
        return lambda_zero(&first.metrics);
    }
    let next = threshold_solve(source, d, k + 1, beta)?;
    lambda_between(source, beta, &first, &next)
}

/// One affine piece `C(lambda) = intercept + slope * lambda` on `(lo, hi]`
/// (closed at 0 for the first piece).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub threshold: usize,
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl Segment {
    pub fn eval(&self, lambda: f64) -> f64 {
        self.intercept + self.slope * lambda
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LagrangeCurve {
    pub beta: f64,
    pub k_max: usize,
    /// `lambda^(0..=k_max)`.
    pub breakpoints: Vec<f64>,
    pub segments: Vec<Segment>,
    /// `PolicyMetrics` for `k = 0..=k_max + 1`.
    pub metrics: Vec<PolicyMetrics>,
}

impl LagrangeCurve {
    pub fn last_breakpoint(&self) -> f64 {
        *self.breakpoints.last().expect("non-empty")
    }

    pub fn covers(&self, lambda: f64) -> bool {
        lambda >= 0.0 && lambda <= self.last_breakpoint()
    }

    /// Optimal threshold at `lambda`, following the half-open intervals
    /// `(lambda^(k), lambda^(k+1)] -> k + 1`. At `lambda = 0` with
    /// `lambda^(0) = 0` the empty first interval is skipped and 1 is returned.
    pub fn threshold_at(&self, lambda: f64) -> Result<usize> {
        if !(lambda >= 0.0) {
            return Err(Error::domain(format!("lambda must be non-negative, got {lambda}")));
        }
        if !self.covers(lambda) {
            return Err(Error::KMaxInsufficient {
                k_max: self.k_max,
                detail: format!(
                    "lambda = {lambda} exceeds the last breakpoint {}; increase k_max",
                    self.last_breakpoint()
                ),
            });
        }
        let b = &self.breakpoints;
        if b[0] > 0.0 && lambda <= b[0] {
            return Ok(0);
        }
        Ok(1 + b[1..].partition_point(|&x| x < lambda))
    }

    pub fn eval(&self, lambda: f64) -> Result<f64> {
        let k = self.threshold_at(lambda)?;
        Ok(self.metrics[k].cost_at(lambda))
    }

    pub fn segment_for(&self, threshold: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.threshold == threshold)
    }
}

pub fn cstar_curve(source: &MarkovSource, d: &DistortionSpec, beta: f64, k_max: usize) -> Result<LagrangeCurve> {
    let Sweep { metrics, lambdas } = sweep(source, d, beta, k_max)?;
    let report = check_a4(&lambdas);
    if !report.ok {
        return Err(Error::A4Violation(report));
    }
    let mut segments = Vec::with_capacity(k_max + 1);
    if lambdas[0] > 0.0 {
        segments.push(Segment {
            threshold: 0,
            lo: 0.0,
            hi: lambdas[0],
            slope: metrics[0].n,
            intercept: metrics[0].d,
        });
    }
    for k in 1..=k_max {
        segments.push(Segment {
            threshold: k,
            lo: lambdas[k - 1],
            hi: lambdas[k],
            slope: metrics[k].n,
            intercept: metrics[k].d,
        });
    }
    Ok(LagrangeCurve {
        beta,
        k_max,
        breakpoints: lambdas,
        segments,
        metrics,
    })
}

/// Curve with `k_max` doubled from the default until `lambda` is covered.
pub fn cstar_curve_covering(
    source: &MarkovSource,
    d: &DistortionSpec,
    beta: f64,
    lambda: f64,
) -> Result<LagrangeCurve> {
    let mut k_max = DEFAULT_K_MAX;
    loop {
        let curve = cstar_curve(source, d, beta, k_max)?;
        if curve.covers(lambda) || !(lambda >= 0.0) {
            return Ok(curve);
        }
        if k_max >= K_GUARD {
            return Err(Error::KMaxInsufficient {
                k_max,
                detail: format!("lambda = {lambda} not covered below the guard"),
            });
        }
        k_max = (2 * k_max).min(K_GUARD);
    }
}

pub fn optimal_threshold_for_lambda(curve: &LagrangeCurve, lambda: f64) -> Result<ThresholdPolicy> {
    curve.threshold_at(lambda).map(ThresholdPolicy::new)
}
