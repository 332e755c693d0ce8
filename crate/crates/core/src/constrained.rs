//! The constrained problem: minimum distortion subject to a transmission rate.
//!
//! `k* = sup{k : N^(k) >= alpha}` and the mixing weight `theta*` place `alpha`
//! on the segment between the vertices `(N^(k*), D^(k*))` and
//! `(N^(k*+1), D^(k*+1))` of the distortion-transmission function.

use serde::Serialize;

use crate::analytics::{leak, policy_metrics, PolicyMetrics};
use crate::banded::{solve_checked, SymBanded};
use crate::check_beta;
use crate::error::{Error, Result};
use crate::lagrange::lambda_at;
use crate::source::{DistortionSpec, MarkovSource};
use crate::K_GUARD;

/// Relative distance under which `alpha` is treated as the vertex `N^(k)`.
pub const VERTEX_SNAP: f64 = 1e-12;

/// `alpha_c = N^(1) = beta (1 - p_0)`.
pub fn critical_alpha(source: &MarkovSource, beta: f64) -> f64 {
    beta * (1.0 - source.p0())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

struct Bracket {
    k: usize,
    theta: f64,
    lo: PolicyMetrics,
    hi: PolicyMetrics,
}

fn bracket(source: &MarkovSource, d: &DistortionSpec, beta: f64, alpha: f64) -> Result<Bracket> {
    check_beta(beta, true)?;
    check_alpha(alpha)?;
    let mut lo = policy_metrics(source, d, 1, beta)?;
    let mut hi = policy_metrics(source, d, 2, beta)?;
    if alpha >= lo.n * (1.0 - VERTEX_SNAP) {
        return Ok(Bracket {
            k: 1,
            theta: 1.0,
            lo,
            hi,
        });
    }
    let mut k = 1;
    while hi.n >= alpha * (1.0 - VERTEX_SNAP) {
        k += 1;
        if k > K_GUARD {
            return Err(Error::KMaxInsufficient {
                k_max: K_GUARD,
                detail: format!("N^(k) stays above alpha = {alpha}"),
            });
        }
        lo = hi;
        hi = policy_metrics(source, d, k + 1, beta)?;
    }
    let theta = if (lo.n - alpha).abs() <= VERTEX_SNAP * alpha {
        1.0
    } else {
        ((alpha - hi.n) / (lo.n - hi.n)).clamp(0.0, 1.0)
    };
    Ok(Bracket { k, theta, lo, hi })
}

/// `(k*, theta*)`. For `alpha >= alpha_c` this is `(1, 1)`: the deterministic
/// `f^(1)` already meets the constraint with zero distortion.
pub fn kstar_thetastar(source: &MarkovSource, d: &DistortionSpec, beta: f64, alpha: f64) -> Result<(usize, f64)> {
    let b = bracket(source, d, beta, alpha)?;
    Ok((b.k, b.theta))
}

/// Optimal strategy for the constrained problem.
///
/// `theta` is the weight of `f^(k*)` in the mixture that meets the constraint.
/// `stage_probability` is the per-stage transmission probability at
/// `|e| = k*` that makes the stationary randomized rule transmit at rate
/// exactly `alpha`; the two coincide only when `theta` is 0 or 1 or `k* = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RandomizedThresholdPolicy {
    pub alpha: f64,
    pub beta: f64,
    pub k_star: usize,
    pub theta: f64,
    pub stage_probability: f64,
    /// `lambda^(k*)`.
    pub lambda_certificate: f64,
    /// `D*(alpha)`.
    pub distortion: f64,
}

impl RandomizedThresholdPolicy {
    /// Probability of transmitting at error `e`.
    pub fn transmit_probability(&self, e: i64) -> f64 {
        let a = e.unsigned_abs() as usize;
        if a > self.k_star {
            1.0
        } else if a < self.k_star {
            0.0
        } else {
            self.stage_probability
        }
    }
}

/// Exact `(D, N)` of the stationary rule that transmits when `|e| > k`, never
/// when `|e| < k`, and with probability `q` when `|e| = k`.
///
/// Writing `c_e` for the probability of staying silent, the occupation row
/// solves `(I - beta P_S C) y = e_0` on `S = {-k, ..., k}`. With `w = C y` this
/// becomes the symmetric system `(C^-1 - beta P_S) w = e_0`.
pub fn randomized_metrics(
    source: &MarkovSource,
    d: &DistortionSpec,
    beta: f64,
    k: usize,
    q: f64,
) -> Result<(f64, f64)> {
    check_beta(beta, true)?;
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!("probability must lie in [0, 1], got {q}")));
    }
    if k == 0 {
        let (a, b) = (policy_metrics(source, d, 0, beta)?, policy_metrics(source, d, 1, beta)?);
        return Ok((q * a.d + (1.0 - q) * b.d, q * a.n + (1.0 - q) * b.n));
    }
    if q == 1.0 {
        let pm = policy_metrics(source, d, k, beta)?;
        return Ok((pm.d, pm.n));
    }
    let n = 2 * k + 1;
    let off = k as i64;
    let silent = |i: usize| if i == 0 || i == n - 1 { 1.0 - q } else { 1.0 };
    let a = SymBanded::from_fn(n, source.matrix_band(), |i, j| {
        let v = -beta * source.p(i - j);
        if i == j {
            1.0 / silent(i) + v
        } else {
            v
        }
    });
    let mut e0 = vec![0.0; n];
    e0[k] = 1.0;
    let w = solve_checked(&a, &a.cholesky()?, &e0)?;
    let mut m = 0.0;
    let mut l = 0.0;
    let mut out = 0.0;
    for (i, wi) in w.iter().enumerate() {
        let s = i as i64 - off;
        let c = silent(i);
        m += wi;
        l += wi * d.eval(s);
        // Transmission events: chosen at |e| = k, or forced after a jump past k.
        out += wi * ((1.0 - c) / c + beta * leak(source, k + 1, s));
    }
    Ok((l / m, out / m))
}

fn stage_probability(source: &MarkovSource, d: &DistortionSpec, beta: f64, b: &Bracket, alpha: f64) -> Result<f64> {
    if b.theta == 1.0 || b.theta == 0.0 || b.k == 0 {
        return Ok(b.theta);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if randomized_metrics(source, d, beta, b.k, mid)?.1 < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn optimal_strategy(
    source: &MarkovSource,
    d: &DistortionSpec,
    beta: f64,
    alpha: f64,
) -> Result<RandomizedThresholdPolicy> {
    let b = bracket(source, d, beta, alpha)?;
    let distortion = mix(&b);
    Ok(RandomizedThresholdPolicy {
        alpha,
        beta,
        k_star: b.k,
        theta: b.theta,
        stage_probability: stage_probability(source, d, beta, &b, alpha)?,
        lambda_certificate: lambda_at(source, d, beta, b.k)?,
        distortion,
    })
}

/// `D*(alpha) = theta* D^(k*) + (1 - theta*) D^(k*+1)`.
pub fn dt_value(source: &MarkovSource, d: &DistortionSpec, beta: f64, alpha: f64) -> Result<f64> {
    Ok(mix(&bracket(source, d, beta, alpha)?))
}

fn mix(b: &Bracket) -> f64 {
    if b.theta == 1.0 {
        b.lo.d
    } else {
        b.theta * b.lo.d + (1.0 - b.theta) * b.hi.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Vertex {
    pub k: usize,
    pub alpha: f64,
    pub dist: f64,
}

/// Vertices of `D*(alpha)` in order of increasing `alpha`.
#[derive(Debug, Clone, Serialize)]
pub struct TradeoffCurve {
    pub beta: f64,
    pub alpha_c: f64,
    pub vertices: Vec<Vertex>,
}

impl TradeoffCurve {
    pub fn min_alpha(&self) -> f64 {
        self.vertices[0].alpha
    }

    /// Linear interpolation between adjacent vertices.
    pub fn eval(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::domain(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        if alpha < self.min_alpha() {
            let k_max = self.vertices[0].k;
            return Err(Error::KMaxInsufficient {
                k_max,
                detail: format!("alpha = {alpha} is below N^({k_max}) = {}", self.min_alpha()),
            });
        }
        let v = &self.vertices;
        let i = v.partition_point(|x| x.alpha < alpha);
        if v[i].alpha == alpha {
            return Ok(v[i].dist);
        }
        let (lo, hi) = (v[i - 1], v[i]);
        // lo is the larger threshold; theta weights the smaller one (hi).
        let theta = (alpha - lo.alpha) / (hi.alpha - lo.alpha);
        Ok(theta * hi.dist + (1.0 - theta) * lo.dist)
    }
}

pub fn dt_curve(source: &MarkovSource, d: &DistortionSpec, beta: f64, k_max: usize) -> Result<TradeoffCurve> {
    check_beta(beta, true)?;
    if k_max < 1 {
        return Err(Error::domain("k_max must be at least 1"));
    }
    let mut vertices = Vec::with_capacity(k_max + 1);
    for k in (0..=k_max).rev() {
        let pm = policy_metrics(source, d, k, beta)?;
        vertices.push(Vertex {
            k,
            alpha: pm.n,
            dist: pm.d,
        });
    }
    Ok(TradeoffCurve {
        beta,
        alpha_c: critical_alpha(source, beta),
        vertices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bd3() -> MarkovSource {
        MarkovSource::birth_death(0.3).unwrap()
    }

    #[test]
    fn worked_example() {
        let s = bd3();
        let d = DistortionSpec::Absolute;
        let (k, th) = kstar_thetastar(&s, &d, 0.9, 0.5).unwrap();
        assert_eq!(k, 1);
        assert!((th - 0.9039).abs() < 5e-5, "{th}");
        assert!((dt_value(&s, &d, 0.9, 0.5).unwrap() - 0.044).abs() < 5e-4);
    }

    #[test]
    fn vertex_alpha() {
        let s = bd3();
        let d = DistortionSpec::Absolute;
        assert_eq!(kstar_thetastar(&s, &d, 1.0, 0.15).unwrap(), (2, 1.0));
        assert!((dt_value(&s, &d, 1.0, 0.15).unwrap() - 0.5).abs() < 1e-12);
        let n3 = policy_metrics(&s, &d, 3, 0.9).unwrap().n;
        assert_eq!(kstar_thetastar(&s, &d, 0.9, n3).unwrap(), (3, 1.0));
    }

    #[test]
    fn above_critical() {
        let s = bd3();
        let d = DistortionSpec::Absolute;
        assert!((critical_alpha(&s, 0.9) - 0.54).abs() < 1e-15);
        assert_eq!(dt_value(&s, &d, 0.9, 0.7).unwrap(), 0.0);
        assert_eq!(kstar_thetastar(&s, &d, 1.0, 0.6).unwrap(), (1, 1.0));
        let pol = optimal_strategy(&s, &d, 0.9, 0.54).unwrap();
        assert_eq!((pol.k_star, pol.theta, pol.distortion), (1, 1.0, 0.0));
        assert!(kstar_thetastar(&s, &d, 0.9, 1.0).is_err());
        assert!(kstar_thetastar(&s, &d, 0.9, 0.0).is_err());
    }

    #[test]
    fn mixture_identity() {
        let s = bd3();
        let d = DistortionSpec::Absolute;
        for alpha in [0.011, 0.07, 0.2, 0.49] {
            let (k, th) = kstar_thetastar(&s, &d, 0.95, alpha).unwrap();
            let nk = policy_metrics(&s, &d, k, 0.95).unwrap().n;
            let nk1 = policy_metrics(&s, &d, k + 1, 0.95).unwrap().n;
            assert!((th * nk + (1.0 - th) * nk1 - alpha).abs() < 1e-12);
        }
    }

    #[test]
    fn randomized_endpoints() {
        let s = MarkovSource::banded(&[0.4, 0.2, 0.1]).unwrap();
        let d = DistortionSpec::Absolute;
        for beta in [0.9, 1.0] {
            for k in 1..4 {
                let (d0, n0) = randomized_metrics(&s, &d, beta, k, 0.0).unwrap();
                let pm = policy_metrics(&s, &d, k + 1, beta).unwrap();
                assert!((d0 - pm.d).abs() < 1e-12 && (n0 - pm.n).abs() < 1e-12);
                let (d1, n1) = randomized_metrics(&s, &d, beta, k, 1.0 - 1e-13).unwrap();
                let pm = policy_metrics(&s, &d, k, beta).unwrap();
                assert!((d1 - pm.d).abs() < 1e-9 && (n1 - pm.n).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn stage_probability_meets_alpha_on_frontier() {
        let s = bd3();
        let d = DistortionSpec::Absolute;
        for (beta, alpha) in [(1.0, 0.5), (0.9, 0.5), (0.95, 0.1)] {
            let pol = optimal_strategy(&s, &d, beta, alpha).unwrap();
            let (dq, nq) = randomized_metrics(&s, &d, beta, pol.k_star, pol.stage_probability).unwrap();
            assert!((nq - alpha).abs() < 1e-12, "{pol:?} {nq}");
            assert!((dq - pol.distortion).abs() < 1e-10, "{pol:?} {dq}");
        }
    }

    #[test]
    fn curve_matches_value() {
        let s = bd3();
        let d = DistortionSpec::Absolute;
        let c = dt_curve(&s, &d, 0.95, 10).unwrap();
        assert!(c.vertices.windows(2).all(|w| w[0].alpha < w[1].alpha));
        assert_eq!(c.vertices.last().unwrap().alpha, 1.0);
        for alpha in [0.002, 0.05, 0.3, 0.56, 0.8] {
            let a = c.eval(alpha).unwrap();
            let b = dt_value(&s, &d, 0.95, alpha).unwrap();
            assert!((a - b).abs() < 1e-12, "{alpha}: {a} vs {b}");
        }
        let has = |a: f64, b: f64| {
            c.vertices
                .iter()
                .any(|v| (v.alpha - a).abs() < 5e-5 && (v.dist - b).abs() < 5e-5)
        };
        assert!(has(0.1365, 0.4790) && has(0.0565, 0.8282));
    }
}
