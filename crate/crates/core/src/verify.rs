//! Cross-module agreement checks behind the `verify` command.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::policy_metrics;
use crate::birth_death::{bd_metrics, BDParams};
use crate::error::Result;
use crate::lagrange::{check_a4, cstar_curve};
use crate::oracle::{fixed_point_dn, value_iteration, BoundaryRule, TruncatedChain};
use crate::source::{DistortionSpec, MarkovSource};

/// Absolute tolerance floor for relative comparisons.
pub const ABS_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyGrid {
    pub p_values: Vec<f64>,
    pub betas: Vec<f64>,
    pub k_max: usize,
    /// Largest threshold compared against the DP fixed point.
    pub dp_k_max: usize,
    pub e_max: usize,
    /// Breakpoint intervals probed by value iteration.
    pub lambda_intervals: usize,
    pub a4_k_max: usize,
}

impl Default for VerifyGrid {
    fn default() -> Self {
        Self {
            p_values: vec![0.1, 0.3, 0.45],
            betas: vec![0.9, 0.95, 0.99, 1.0],
            k_max: 20,
            dp_k_max: 8,
            e_max: 300,
            lambda_intervals: 5,
            a4_k_max: 50,
        }
    }
}

/// Test hook: shift the analytic side of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub suite: String,
    pub cell: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub suite: &'static str,
    pub label: String,
    pub expected: f64,
    pub actual: f64,
    pub delta: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub cells: usize,
    pub failures: Vec<CellResult>,
    /// Largest delta per suite.
    pub worst: Vec<CellResult>,
    pub warnings: Vec<String>,
}

fn cell(suite: &'static str, label: String, expected: f64, actual: f64, tol: f64) -> CellResult {
    let delta = (actual - expected).abs();
    CellResult {
        suite,
        label,
        expected,
        actual,
        delta,
        tol,
        pass: delta <= tol,
    }
}

/// Relative tolerance with an absolute floor of `ABS_FLOOR` for values that are exactly 0.
fn rel_cell(suite: &'static str, label: String, expected: f64, actual: f64, rel: f64) -> CellResult {
    cell(suite, label, expected, actual, (rel * expected.abs()).max(ABS_FLOOR))
}

fn closed_form(p: f64, beta: f64, k_max: usize) -> Result<Vec<CellResult>> {
    let s = MarkovSource::birth_death(p)?;
    let bp = BDParams::new(p, beta)?;
    let mut out = Vec::new();
    for k in 1..=k_max {
        let g = policy_metrics(&s, &DistortionSpec::Absolute, k, beta)?;
        let (d, n) = bd_metrics(&bp, k);
        let tag = format!("p={p} beta={beta} k={k}");
        out.push(rel_cell("closed-form", format!("D {tag}"), g.d, d, 1e-9));
        out.push(rel_cell("closed-form", format!("N {tag}"), g.n, n, 1e-9));
    }
    Ok(out)
}

fn a4(p: f64, beta: f64, k_max: usize) -> Result<Vec<CellResult>> {
    let s = MarkovSource::birth_death(p)?;
    let lambdas = crate::lagrange::lambda_sequence(&s, &DistortionSpec::Absolute, beta, k_max)?;
    let rep = check_a4(&lambdas);
    let first = rep.first_violation.map(|v| v as f64).unwrap_or(-1.0);
    Ok(vec![cell(
        "a4",
        format!("first violation p={p} beta={beta} k<={k_max}"),
        -1.0,
        first,
        0.0,
    )])
}

fn dp_fixed_point(p: f64, beta: f64, k_max: usize, e_max: usize) -> Result<Vec<CellResult>> {
    let s = MarkovSource::birth_death(p)?;
    let chain = TruncatedChain::new(&s, e_max, BoundaryRule::Renormalize)?;
    let mut out = Vec::new();
    for k in 0..=k_max {
        let g = policy_metrics(&s, &DistortionSpec::Absolute, k, beta)?;
        let t = fixed_point_dn(&chain, &DistortionSpec::Absolute, k, beta)?;
        let tag = format!("p={p} beta={beta} k={k} E_max={e_max}");
        out.push(cell("dp-fixed-point", format!("D {tag}"), g.d, t.d0, 1e-6));
        out.push(cell("dp-fixed-point", format!("N {tag}"), g.n, t.n0, 1e-6));
    }
    Ok(out)
}

fn dp_value(p: f64, beta: f64, intervals: usize, e_max: usize) -> Result<Vec<CellResult>> {
    let s = MarkovSource::birth_death(p)?;
    let d = DistortionSpec::Absolute;
    let curve = cstar_curve(&s, &d, beta, intervals.max(1) + 1)?;
    let chain = TruncatedChain::new(&s, e_max, BoundaryRule::Renormalize)?;
    let mut out = Vec::new();
    for j in 0..intervals {
        let lambda = 0.5 * (curve.breakpoints[j] + curve.breakpoints[j + 1]);
        let vt = value_iteration(&chain, &d, lambda, beta, 1e-8, 1_000_000)?;
        let tag = format!("p={p} beta={beta} lambda={lambda:.6}");
        out.push(cell(
            "value-iteration",
            format!("V(0) {tag}"),
            curve.eval(lambda)?,
            vt.at(0),
            1e-5,
        ));
        let expected = curve.threshold_at(lambda)? as f64;
        let got = vt.threshold.map(|k| k as f64).unwrap_or(f64::NAN);
        out.push(cell("value-iteration", format!("threshold {tag}"), expected, got, 0.0));
    }
    Ok(out)
}

pub fn run_verification(grid: &VerifyGrid, perturb: Option<&Perturbation>) -> Result<VerifyReport> {
    let mut warnings = Vec::new();
    if grid.p_values.is_empty() || grid.betas.is_empty() {
        warnings.push("empty grid: no cells were checked".to_string());
    }
    let combos: Vec<(f64, f64)> = grid
        .p_values
        .iter()
        .flat_map(|&p| grid.betas.iter().map(move |&b| (p, b)))
        .collect();
    let per: Vec<Result<Vec<CellResult>>> = combos
        .par_iter()
        .map(|&(p, beta)| {
            let mut v = closed_form(p, beta, grid.k_max)?;
            v.extend(a4(p, beta, grid.a4_k_max)?);
            if beta < 1.0 {
                v.extend(dp_fixed_point(p, beta, grid.dp_k_max, grid.e_max)?);
                v.extend(dp_value(p, beta, grid.lambda_intervals, grid.e_max)?);
            }
            Ok(v)
        })
        .collect();
    let mut cells = Vec::new();
    for r in per {
        cells.extend(r?);
    }
    if let Some(pt) = perturb {
        match cells.iter_mut().filter(|c| c.suite == pt.suite).nth(pt.cell) {
            Some(c) => {
                *c = cell(
                    c.suite,
                    format!("{} [perturbed]", c.label),
                    c.expected + pt.delta,
                    c.actual,
                    c.tol,
                )
            }
            None => warnings.push(format!("perturbation target {}#{} does not exist", pt.suite, pt.cell)),
        }
    }
    let mut worst: Vec<CellResult> = Vec::new();
    for c in &cells {
        match worst.iter_mut().find(|w| w.suite == c.suite) {
            Some(w) if c.delta > w.delta => *w = c.clone(),
            Some(_) => {}
            None => worst.push(c.clone()),
        }
    }
    let failures: Vec<CellResult> = cells.iter().filter(|c| !c.pass).cloned().collect();
    Ok(VerifyReport {
        passed: failures.is_empty(),
        cells: cells.len(),
        failures,
        worst,
        warnings,
    })
}
