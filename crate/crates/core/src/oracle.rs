//! Brute-force dynamic programming on a truncated error chain.
//!
//! These solvers share nothing with the analytic path beyond the source and
//! distortion definitions, and serve as its independent check.

use serde::Serialize;

use crate::check_beta;
use crate::error::{Error, Result};
use crate::source::{DistortionSpec, MarkovSource};

pub const DEFAULT_E_MAX: usize = 500;
pub const DEFAULT_MARGIN: usize = 10;

/// Tail mass below which a geometric tail is cut in the truncated chain.
const CHAIN_TAIL_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryRule {
    /// Drop jumps past `±E_max` and rescale the row to sum to 1.
    #[default]
    Renormalize,
    /// Send jumps past `±E_max` to the boundary state.
    Absorb,
}

/// The error chain restricted to `{-E_max, ..., E_max}`.
#[derive(Debug, Clone)]
pub struct TruncatedChain {
    pub radius: usize,
    pub boundary: BoundaryRule,
    tail: Vec<f64>,
    // Renormalization factor per |e|.
    scale: Vec<f64>,
}

impl TruncatedChain {
    pub fn new(source: &MarkovSource, radius: usize, boundary: BoundaryRule) -> Result<Self> {
        if radius == 0 {
            return Err(Error::domain("truncation radius must be positive"));
        }
        let band = source.effective_radius(CHAIN_TAIL_EPS);
        let tail: Vec<f64> = (0..=band).map(|n| source.p(n)).collect();
        let mut chain = Self {
            radius,
            boundary,
            tail,
            scale: vec![1.0; radius + 1],
        };
        if boundary == BoundaryRule::Renormalize {
            for a in 0..=radius {
                let e = a as i64;
                let mass = chain.expect_with(e, |_| 1.0, true);
                chain.scale[a] = 1.0 / mass;
            }
        }
        Ok(chain)
    }

    pub fn states(&self) -> usize {
        2 * self.radius + 1
    }

    #[inline]
    pub fn index(&self, e: i64) -> usize {
        (e + self.radius as i64) as usize
    }

    #[inline]
    pub fn state(&self, i: usize) -> i64 {
        i as i64 - self.radius as i64
    }

    /// `sum_j p_j (f(e + j) + f(e - j))` with out-of-range terms handled by the
    /// boundary rule. Pairing `+j` with `-j` makes the result for `-e` use the
    /// same operands as for `e`, so even inputs give bit-even outputs.
    #[inline]
    fn expect_with(&self, e: i64, f: impl Fn(i64) -> f64, raw: bool) -> f64 {
        let r = self.radius as i64;
        let mut acc = self.tail[0] * f(e);
        for (j, pj) in self.tail.iter().enumerate().skip(1) {
            let j = j as i64;
            let (up, dn) = (e + j, e - j);
            let pair = match self.boundary {
                BoundaryRule::Absorb => f(up.min(r)) + f(dn.max(-r)),
                BoundaryRule::Renormalize => {
                    let a = if up <= r { f(up) } else { 0.0 };
                    let b = if dn >= -r { f(dn) } else { 0.0 };
                    a + b
                }
            };
            acc += pj * pair;
        }
        if raw {
            acc
        } else {
            acc * self.scale[e.unsigned_abs() as usize]
        }
    }

    /// `E[v(E_{t+1}) | E_t = e]` for `v` indexed like the state space.
    #[inline]
    pub fn expect(&self, v: &[f64], e: i64) -> f64 {
        self.expect_with(e, |x| v[self.index(x)], false)
    }

    /// Row of effective transition probabilities from `e` (for inspection).
    pub fn row(&self, e: i64) -> Vec<f64> {
        let mut row = vec![0.0; self.states()];
        for target in 0..self.states() {
            let x = self.state(target);
            row[target] = self.expect_with(e, |y| if y == x { 1.0 } else { 0.0 }, false);
        }
        row
    }
}

/// Values and decision rule over `{-E_max, ..., E_max}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueTable {
    pub radius: usize,
    pub values: Vec<f64>,
    pub transmit: Vec<bool>,
    /// `min |e|` over transmitting states, when the rule is threshold-shaped.
    pub threshold: Option<usize>,
    pub iterations: usize,
    /// `|T V - V|_inf`, recomputed after the loop.
    pub bellman_residual: f64,
}

impl ValueTable {
    pub fn at(&self, e: i64) -> f64 {
        self.values[(e + self.radius as i64) as usize]
    }

    pub fn transmits(&self, e: i64) -> bool {
        self.transmit[(e + self.radius as i64) as usize]
    }
}

/// Threshold implied by a rule: `Some(k)` when it transmits exactly at `|e| >= k`
/// for all `|e| <= limit`.
fn implied_threshold(transmit: &[bool], radius: usize, limit: usize) -> Option<usize> {
    let r = radius as i64;
    let at = |e: i64| transmit[(e + r) as usize];
    let k = (0..=limit as i64)
        .find(|&a| at(a) || at(-a))
        .map(|a| a as usize)
        .unwrap_or(limit + 1);
    let ok = (-(limit as i64)..=limit as i64).all(|e| at(e) == (e.unsigned_abs() as usize >= k));
    ok.then_some(k)
}

struct Bellman<'a> {
    chain: &'a TruncatedChain,
    dist: Vec<f64>,
    lambda: f64,
    beta: f64,
}

impl Bellman<'_> {
    /// One application of `T`; ties go to transmitting.
    fn apply(&self, v: &[f64], out: &mut [f64], act: &mut [bool]) {
        let c = self.chain;
        let from_zero = c.expect(v, 0);
        let send = (1.0 - self.beta) * self.lambda + self.beta * from_zero;
        for i in 0..c.states() {
            let e = c.state(i);
            let stay = (1.0 - self.beta) * self.dist[i] + self.beta * c.expect(v, e);
            act[i] = send <= stay;
            out[i] = if act[i] { send } else { stay };
        }
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Discounted value iteration from `V = 0`, stopping when successive iterates
/// differ by less than `tol (1 - beta) / (2 beta)`; the returned `V` is then
/// within `tol / 2` of the fixed point.
pub fn value_iteration(
    chain: &TruncatedChain,
    d: &DistortionSpec,
    lambda: f64,
    beta: f64,
    tol: f64,
    max_iters: usize,
) -> Result<ValueTable> {
    check_beta(beta, false)?;
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::domain(format!("lambda must be non-negative, got {lambda}")));
    }
    let n = chain.states();
    let op = Bellman {
        chain,
        dist: (0..n).map(|i| d.eval(chain.state(i))).collect(),
        lambda,
        beta,
    };
    let stop = tol * (1.0 - beta) / (2.0 * beta);
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut act = vec![false; n];
    let mut delta = f64::INFINITY;
    for it in 1..=max_iters {
        op.apply(&v, &mut next, &mut act);
        delta = sup_diff(&v, &next);
        std::mem::swap(&mut v, &mut next);
        if delta < stop {
            let mut tv = vec![0.0; n];
            op.apply(&v, &mut tv, &mut act);
            let bellman_residual = sup_diff(&v, &tv);
            let limit = chain.radius.saturating_sub(DEFAULT_MARGIN);
            return Ok(ValueTable {
                radius: chain.radius,
                threshold: implied_threshold(&act, chain.radius, limit),
                values: v,
                transmit: act,
                iterations: it,
                bellman_residual,
            });
        }
    }
    Err(Error::Convergence {
        iterations: max_iters,
        residual: delta,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteHorizon {
    /// `V_0, ..., V_T`.
    pub stages: Vec<ValueTable>,
    /// `C*_T(lambda) = V_0(0)`.
    pub cost: f64,
}

impl FiniteHorizon {
    pub fn thresholds(&self) -> Vec<Option<usize>> {
        self.stages.iter().map(|s| s.threshold).collect()
    }
}

/// Backward induction `V_t = min{lambda + E_0 V_{t+1}, d(e) + E_e V_{t+1}}`,
/// `V_{T+1} = 0`.
pub fn finite_horizon_dp(
    chain: &TruncatedChain,
    d: &DistortionSpec,
    lambda: f64,
    horizon: usize,
) -> Result<FiniteHorizon> {
    if !(lambda >= 0.0) {
        return Err(Error::domain(format!("lambda must be non-negative, got {lambda}")));
    }
    let n = chain.states();
    let dist: Vec<f64> = (0..n).map(|i| d.eval(chain.state(i))).collect();
    let limit = chain.radius.saturating_sub(DEFAULT_MARGIN);
    let mut next = vec![0.0; n];
    let mut stages = Vec::with_capacity(horizon + 1);
    for _ in 0..=horizon {
        let send = lambda + chain.expect(&next, 0);
        let mut v = vec![0.0; n];
        let mut act = vec![false; n];
        for i in 0..n {
            let stay = dist[i] + chain.expect(&next, chain.state(i));
            act[i] = send <= stay;
            v[i] = if act[i] { send } else { stay };
        }
        stages.push(ValueTable {
            radius: chain.radius,
            threshold: implied_threshold(&act, chain.radius, limit),
            values: v.clone(),
            transmit: act,
            iterations: 0,
            bellman_residual: 0.0,
        });
        next = v;
    }
    stages.reverse();
    let cost = stages[0].at(0);
    Ok(FiniteHorizon { stages, cost })
}

#[derive(Debug, Clone, Serialize)]
pub struct DnTables {
    pub k: usize,
    pub d_table: Vec<f64>,
    pub n_table: Vec<f64>,
    pub d0: f64,
    pub n0: f64,
    pub iterations: usize,
}

/// Fixed points of
/// `D(e) = (1-beta) d(e) + beta E_e D` and `N(e) = beta E_e N` for `|e| < k`,
/// `D(e) = beta E_0 D` and `N(e) = (1-beta) + beta E_0 N` otherwise,
/// by Jacobi iteration (a `beta`-contraction).
pub fn fixed_point_dn(chain: &TruncatedChain, d: &DistortionSpec, k: usize, beta: f64) -> Result<DnTables> {
    fixed_point_dn_with(chain, d, k, beta, 1e-14, 1_000_000)
}

pub fn fixed_point_dn_with(
    chain: &TruncatedChain,
    d: &DistortionSpec,
    k: usize,
    beta: f64,
    tol: f64,
    max_iters: usize,
) -> Result<DnTables> {
    check_beta(beta, false)?;
    let n = chain.states();
    let dist: Vec<f64> = (0..n).map(|i| d.eval(chain.state(i))).collect();
    let inside: Vec<bool> = (0..n).map(|i| (chain.state(i).unsigned_abs() as usize) < k).collect();
    let mut dv = vec![0.0; n];
    let mut nv = vec![0.0; n];
    let mut dn = vec![0.0; n];
    let mut nn = vec![0.0; n];
    let stop = tol * (1.0 - beta) / beta;
    for it in 1..=max_iters {
        let d0 = chain.expect(&dv, 0);
        let n0 = chain.expect(&nv, 0);
        for i in 0..n {
            if inside[i] {
                let e = chain.state(i);
                dn[i] = (1.0 - beta) * dist[i] + beta * chain.expect(&dv, e);
                nn[i] = beta * chain.expect(&nv, e);
            } else {
                dn[i] = beta * d0;
                nn[i] = (1.0 - beta) + beta * n0;
            }
        }
        let delta = sup_diff(&dv, &dn).max(sup_diff(&nv, &nn));
        std::mem::swap(&mut dv, &mut dn);
        std::mem::swap(&mut nv, &mut nn);
        if delta < stop {
            let c = chain.index(0);
            return Ok(DnTables {
                k,
                d0: dv[c],
                n0: nv[c],
                d_table: dv,
                n_table: nv,
                iterations: it,
            });
        }
    }
    Err(Error::Convergence {
        iterations: max_iters,
        residual: f64::NAN,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StructureReport {
    pub even: bool,
    pub increasing: bool,
    pub threshold_shaped: bool,
    pub implied_threshold: Option<usize>,
    pub violations: Vec<String>,
}

impl StructureReport {
    pub fn ok(&self) -> bool {
        self.even && self.increasing && self.threshold_shaped
    }
}

pub fn verify_structure(table: &ValueTable) -> StructureReport {
    verify_structure_with_margin(table, DEFAULT_MARGIN)
}

/// Evenness is checked bit-exactly on all states; monotonicity and the
/// threshold shape on `|e| <= E_max - margin`.
pub fn verify_structure_with_margin(table: &ValueTable, margin: usize) -> StructureReport {
    let r = table.radius as i64;
    let limit = table.radius.saturating_sub(margin) as i64;
    let mut rep = StructureReport {
        even: true,
        increasing: true,
        ..Default::default()
    };
    for e in 1..=r {
        if table.at(e).to_bits() != table.at(-e).to_bits() {
            rep.even = false;
            rep.violations
                .push(format!("V({e}) = {} but V(-{e}) = {}", table.at(e), table.at(-e)));
            break;
        }
    }
    for e in 0..limit {
        if table.at(e + 1) < table.at(e) {
            rep.increasing = false;
            rep.violations.push(format!("V decreases from e={e} to e={}", e + 1));
            break;
        }
    }
    rep.implied_threshold = implied_threshold(&table.transmit, table.radius, limit as usize);
    rep.threshold_shaped = rep.implied_threshold.is_some();
    if !rep.threshold_shaped {
        rep.violations.push("decision rule is not of threshold form".into());
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(p: f64, r: usize) -> TruncatedChain {
        TruncatedChain::new(&MarkovSource::birth_death(p).unwrap(), r, BoundaryRule::Renormalize).unwrap()
    }

    #[test]
    fn rows_are_stochastic_and_symmetric() {
        let s = MarkovSource::banded(&[0.4, 0.2, 0.1]).unwrap();
        for rule in [BoundaryRule::Renormalize, BoundaryRule::Absorb] {
            let c = TruncatedChain::new(&s, 6, rule).unwrap();
            for e in -6..=6 {
                let row = c.row(e);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15, "{rule:?} {e}");
                let mirror = c.row(-e);
                for (i, v) in row.iter().enumerate() {
                    assert_eq!(*v, mirror[c.states() - 1 - i]);
                }
            }
        }
    }

    #[test]
    fn one_stage_problem() {
        let c = chain(0.3, 30);
        let fh = finite_horizon_dp(&c, &DistortionSpec::Absolute, 2.5, 0).unwrap();
        for e in -30..=30 {
            assert_eq!(fh.stages[0].at(e), (e.abs() as f64).min(2.5));
        }
    }

    #[test]
    fn free_transmission() {
        let c = chain(0.3, 40);
        let fh = finite_horizon_dp(&c, &DistortionSpec::Absolute, 0.0, 10).unwrap();
        assert!(fh.stages.iter().all(|s| s.at(0) == 0.0 && s.threshold == Some(0)));
        let vt = value_iteration(&c, &DistortionSpec::Absolute, 0.0, 0.9, 1e-10, 1000).unwrap();
        assert!(vt.values.iter().all(|v| *v == 0.0));
        assert_eq!(vt.threshold, Some(0));
    }

    #[test]
    fn dn_base_cases() {
        let c = chain(0.3, 100);
        let t = fixed_point_dn(&c, &DistortionSpec::Absolute, 0, 0.9).unwrap();
        assert!(t.d_table.iter().all(|v| *v == 0.0));
        assert!(t.n_table.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let t = fixed_point_dn(&c, &DistortionSpec::Absolute, 1, 0.9).unwrap();
        assert!((t.n0 - 0.9 * 0.6).abs() < 1e-9);
    }

    #[test]
    fn structure_violations() {
        let mut t = ValueTable {
            radius: 3,
            values: vec![3.0, 2.0, 1.0, 0.0, 1.0, 2.0, 3.0],
            transmit: vec![true, false, false, false, false, false, true],
            threshold: None,
            iterations: 0,
            bellman_residual: 0.0,
        };
        let r = verify_structure_with_margin(&t, 0);
        assert!(r.ok(), "{r:?}");
        assert_eq!(r.implied_threshold, Some(3));
        t.values[0] = 3.5;
        assert!(!verify_structure_with_margin(&t, 0).even);
        t.values[0] = 3.0;
        t.transmit = vec![false, true, false, true, false, true, false];
        let r = verify_structure_with_margin(&t, 0);
        assert!(!r.threshold_shaped && r.violations.iter().any(|v| v.contains("threshold")));
    }

    #[test]
    fn value_iteration_even_and_threshold() {
        let c = chain(0.3, 120);
        let vt = value_iteration(&c, &DistortionSpec::Absolute, 2.0, 0.9, 1e-9, 100_000).unwrap();
        let r = verify_structure(&vt);
        assert!(r.ok(), "{r:?}");
        assert_eq!(vt.threshold, Some(2));
        assert!(vt.bellman_residual < 1e-9);
    }
}
