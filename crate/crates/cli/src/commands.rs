//! One function per subcommand; each returns a [`Document`].

use std::fs;

use dtfn_core::analytics::metrics_range;
use dtfn_core::lagrange::cstar_curve_covering;
use dtfn_core::sim::{
    make_steering, make_timesharing_with, periodic_schedule, simulate_with, CycleBoundary, SimConfig, SimReport,
    SimStrategy,
};
use dtfn_core::verify::run_verification;
use dtfn_core::{
    check_a4, cstar_curve, dt_curve, lambda_sequence, optimal_strategy, policy_metrics, Error,
    RandomizedThresholdPolicy,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{Resolved, StrategyConfig};
use crate::output::{Cell, Document, Table};
use crate::{Command, Failure};

/// Longest period tried when matching a time-sharing schedule.
pub const MAX_SCHEDULE_PERIOD: u64 = 100;

pub fn dispatch(cmd: Command, run: &Resolved) -> Result<Document, Failure> {
    let mut doc = match cmd {
        Command::Table => table(run),
        Command::Curve => curve(run),
        Command::Solve => solve(run),
        Command::Lagrange => lagrange(run),
        Command::Simulate => simulate(run),
        Command::Verify => verify(run),
    }?;
    if !run.assumptions.all_ok() {
        let mut notes = run.assumptions.notes.clone();
        notes.insert(0, "model assumptions not satisfied; results may not be optimal".into());
        doc.warnings.splice(0..0, notes);
    }
    Ok(doc)
}

#[derive(Serialize)]
struct TableRow {
    k: usize,
    #[serde(rename = "D")]
    d: f64,
    #[serde(rename = "N")]
    n: f64,
    lambda: f64,
}

/// `(k, D, N, lambda^(k))` for `k_min..=k_max` (default 0..=10) at each beta.
pub fn table(run: &Resolved) -> Result<Document, Failure> {
    let c = &run.config;
    let k_max = c.k_max.unwrap_or(10);
    let mut t = Table::new("table", &["beta", "k", "D", "N", "lambda"]);
    let mut blocks = Vec::new();
    let mut warnings = Vec::new();
    for &beta in &c.beta {
        let metrics = metrics_range(&run.source, &run.distortion, k_max, beta)?;
        let lambdas = lambda_sequence(&run.source, &run.distortion, beta, k_max)?;
        let a4 = check_a4(&lambdas);
        if let Some(k) = a4.first_violation {
            warnings.push(format!("beta={beta}: lambda^(k) is not increasing at k={k}"));
        }
        let mut rows = Vec::new();
        for k in c.k_min..=k_max {
            let m = &metrics[k];
            t.push(vec![beta.into(), k.into(), m.d.into(), m.n.into(), lambdas[k].into()]);
            rows.push(TableRow {
                k,
                d: m.d,
                n: m.n,
                lambda: lambdas[k],
            });
        }
        blocks.push(json!({ "beta": beta, "rows": rows }));
    }
    let mut doc = Document::new("table", blocks);
    doc.tables.push(t);
    doc.warnings = warnings;
    Ok(doc)
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Vertices and samples of `D*(alpha)`, and breakpoints and samples of `C*(lambda)`.
pub fn curve(run: &Resolved) -> Result<Document, Failure> {
    let c = &run.config;
    let k_max = c.k_max.unwrap_or(20).max(1);
    let mut vt = Table::new("dt_vertices", &["beta", "k", "alpha", "D"]);
    let mut ds = Table::new("dt_samples", &["beta", "alpha", "D"]);
    let mut bt = Table::new("cstar_breakpoints", &["beta", "k", "lambda", "left", "right", "gap"]);
    let mut cs = Table::new("cstar_samples", &["beta", "lambda", "threshold", "C"]);
    let mut blocks = Vec::new();
    let mut warnings = Vec::new();
    for &beta in &c.beta {
        let dt = dt_curve(&run.source, &run.distortion, beta, k_max)?;
        for v in &dt.vertices {
            vt.push(vec![beta.into(), v.k.into(), v.alpha.into(), v.dist.into()]);
        }
        let mut alphas = log_grid(dt.min_alpha(), 1.0, c.samples);
        alphas.extend(dt.vertices.iter().map(|v| v.alpha));
        alphas.sort_by(f64::total_cmp);
        alphas.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
        for a in alphas {
            ds.push(vec![beta.into(), a.into(), dt.eval(a)?.into()]);
        }
        let cstar = match cstar_curve(&run.source, &run.distortion, beta, k_max) {
            Ok(curve) => Some(curve),
            Err(Error::A4Violation(rep)) => {
                warnings.push(format!(
                    "beta={beta}: lambda^(k) not increasing at k={:?}; C*(lambda) omitted",
                    rep.first_violation
                ));
                None
            }
            Err(e) => return Err(e.into()),
        };
        if let Some(curve) = &cstar {
            for (k, &lam) in curve.breakpoints.iter().enumerate() {
                let left = curve.metrics[k].cost_at(lam);
                let right = curve.metrics[k + 1].cost_at(lam);
                let gap = (left - right).abs();
                if gap > 1e-9 * left.abs().max(1.0) {
                    warnings.push(format!("beta={beta}: C* discontinuous at lambda^({k}) by {gap:e}"));
                }
                bt.push(vec![
                    beta.into(),
                    k.into(),
                    lam.into(),
                    left.into(),
                    right.into(),
                    gap.into(),
                ]);
            }
            let hi = curve.last_breakpoint();
            let n = c.samples.max(2);
            for i in 0..n {
                let lam = (hi * i as f64 / (n - 1) as f64).min(hi);
                let k = curve.threshold_at(lam)?;
                cs.push(vec![
                    beta.into(),
                    lam.into(),
                    k.into(),
                    curve.metrics[k].cost_at(lam).into(),
                ]);
            }
        }
        blocks.push(json!({ "beta": beta, "tradeoff": dt, "lagrange": cstar }));
    }
    let mut doc = Document::new("curve", blocks);
    doc.tables = vec![vt, ds, bt, cs];
    doc.warnings = warnings;
    Ok(doc)
}

fn need_alpha(run: &Resolved, cmd: &str) -> Result<f64, Failure> {
    run.config
        .alpha
        .ok_or_else(|| Failure::Config(format!("{cmd} needs alpha (--alpha or `alpha = ...`)")))
}

/// Constrained solution at `alpha` for each beta.
pub fn solve(run: &Resolved) -> Result<Document, Failure> {
    let alpha = need_alpha(run, "solve")?;
    let mut t = Table::new(
        "solution",
        &[
            "beta",
            "alpha",
            "alpha_c",
            "k_star",
            "theta",
            "stage_probability",
            "D_star",
            "lambda_certificate",
        ],
    );
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for &beta in &run.config.beta {
        let pol = optimal_strategy(&run.source, &run.distortion, beta, alpha)?;
        let alpha_c = dtfn_core::critical_alpha(&run.source, beta);
        if alpha >= alpha_c {
            warnings.push(format!(
                "beta={beta}: alpha >= alpha_c = {alpha_c}; zero distortion is achievable"
            ));
        }
        t.push(vec![
            beta.into(),
            alpha.into(),
            alpha_c.into(),
            pol.k_star.into(),
            pol.theta.into(),
            pol.stage_probability.into(),
            pol.distortion.into(),
            pol.lambda_certificate.into(),
        ]);
        out.push(json!({ "alpha_c": alpha_c, "policy": pol }));
    }
    let mut doc = Document::new("solve", out);
    doc.tables.push(t);
    doc.warnings = warnings;
    Ok(doc)
}

/// Optimal threshold and `C*(lambda)` for each beta.
pub fn lagrange(run: &Resolved) -> Result<Document, Failure> {
    let lambda = run
        .config
        .lambda
        .ok_or_else(|| Failure::Config("lagrange needs lambda (--lambda or `lambda = ...`)".into()))?;
    let mut t = Table::new(
        "lagrange",
        &[
            "beta",
            "lambda",
            "threshold",
            "C",
            "D",
            "N",
            "interval_lo",
            "interval_hi",
        ],
    );
    let mut out = Vec::new();
    for &beta in &run.config.beta {
        let curve = cstar_curve_covering(&run.source, &run.distortion, beta, lambda)?;
        let k = curve.threshold_at(lambda)?;
        let m = curve.metrics[k];
        let (lo, hi) = match k {
            0 => (0.0, curve.breakpoints[0]),
            _ => (curve.breakpoints[k - 1], curve.breakpoints[k]),
        };
        t.push(vec![
            beta.into(),
            lambda.into(),
            k.into(),
            m.cost_at(lambda).into(),
            m.d.into(),
            m.n.into(),
            lo.into(),
            hi.into(),
        ]);
        out.push(json!({
            "beta": beta, "lambda": lambda, "threshold": k, "cost": m.cost_at(lambda),
            "metrics": m, "interval": [lo, hi],
        }));
    }
    let mut doc = Document::new("lagrange", out);
    doc.tables.push(t);
    Ok(doc)
}

/// Simulation strategy with the reference values it should reproduce.
#[derive(Debug, Clone, Serialize)]
pub struct PlannedStrategy {
    pub strategy: SimStrategy,
    /// Analytic `(D, N)` when known.
    pub reference: Option<(f64, f64)>,
    pub policy: Option<RandomizedThresholdPolicy>,
}

/// Schedule `(a, b)` whose long-run mix of `f^(k*)` and `f^(k*+1)` cycles
/// matches the constrained solution: `a / (a + b) ~ theta* N^(k*) / alpha`.
pub fn matched_schedule(run: &Resolved, pol: &RandomizedThresholdPolicy) -> Result<(u64, u64), Failure> {
    let n_k = policy_metrics(&run.source, &run.distortion, pol.k_star, pol.beta)?.n;
    let ratio = (pol.theta * n_k / pol.alpha).clamp(0.0, 1.0);
    Ok(periodic_schedule(ratio, MAX_SCHEDULE_PERIOD)?)
}

pub fn plan_strategy(run: &Resolved, beta: f64) -> Result<PlannedStrategy, Failure> {
    let solution = |cmd: &str| -> Result<RandomizedThresholdPolicy, Failure> {
        let alpha = need_alpha(run, cmd)?;
        Ok(optimal_strategy(&run.source, &run.distortion, beta, alpha)?)
    };
    let planned = match &run.config.strategy {
        StrategyConfig::Threshold { k } => {
            let m = policy_metrics(&run.source, &run.distortion, *k, beta)?;
            PlannedStrategy {
                strategy: SimStrategy::threshold(*k),
                reference: Some((m.d, m.n)),
                policy: None,
            }
        }
        StrategyConfig::Bernoulli { k: Some(k), q: Some(q) } => PlannedStrategy {
            strategy: SimStrategy::bernoulli(*k, *q)?,
            reference: Some(dtfn_core::constrained::randomized_metrics(
                &run.source,
                &run.distortion,
                beta,
                *k,
                *q,
            )?),
            policy: None,
        },
        StrategyConfig::Steering {
            k: Some(k),
            target: Some(t),
        } => PlannedStrategy {
            strategy: make_steering(*k, *t)?,
            reference: None,
            policy: None,
        },
        StrategyConfig::TimeSharing {
            k: Some(k),
            schedule: Some(s),
            zero_visit_cycles,
        } => PlannedStrategy {
            strategy: make_timesharing_with(*k, s.clone(), boundary(*zero_visit_cycles))?,
            reference: None,
            policy: None,
        },
        StrategyConfig::Bernoulli { .. } => {
            let pol = solution("bernoulli simulation")?;
            PlannedStrategy {
                strategy: SimStrategy::from_policy(&pol),
                reference: Some((pol.distortion, pol.alpha)),
                policy: Some(pol),
            }
        }
        StrategyConfig::Steering { .. } => {
            let pol = solution("steering simulation")?;
            PlannedStrategy {
                strategy: make_steering(pol.k_star, pol.stage_probability)?,
                reference: Some((pol.distortion, pol.alpha)),
                policy: Some(pol),
            }
        }
        StrategyConfig::TimeSharing { zero_visit_cycles, .. } => {
            let pol = solution("time-sharing simulation")?;
            let s = matched_schedule(run, &pol)?;
            PlannedStrategy {
                strategy: make_timesharing_with(pol.k_star, vec![s], boundary(*zero_visit_cycles))?,
                reference: Some((pol.distortion, pol.alpha)),
                policy: Some(pol),
            }
        }
    };
    Ok(planned)
}

fn boundary(zero_visit: bool) -> CycleBoundary {
    if zero_visit {
        CycleBoundary::ZeroVisit
    } else {
        CycleBoundary::Transmission
    }
}

fn strategy_label(s: &SimStrategy) -> String {
    match s {
        SimStrategy::Threshold { k } => format!("threshold({k})"),
        SimStrategy::Bernoulli { k, q } => format!("bernoulli({k},{q:.6})"),
        SimStrategy::Steering { k, target } => format!("steering({k},{target:.6})"),
        SimStrategy::TimeSharing { k, schedule, .. } => {
            let s: Vec<String> = schedule.iter().map(|(a, b)| format!("{a}/{b}")).collect();
            format!("time-sharing({k},{})", s.join(";"))
        }
    }
}

fn write_trajectory(path: &std::path::Path, run: &Resolved, report: &SimReport) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &report.trajectory {
        w.serialize(row)?;
    }
    let body = format!(
        "# dtfn {} simulate config={} beta={} seed={}\n{}",
        env!("CARGO_PKG_VERSION"),
        run.hash,
        report.beta,
        report.seed,
        String::from_utf8(w.into_inner()?)?
    );
    fs::write(path, body)?;
    Ok(())
}

pub fn simulate(run: &Resolved) -> Result<Document, Failure> {
    let c = &run.config;
    let mut t = Table::new(
        "simulation",
        &[
            "beta",
            "strategy",
            "D_hat",
            "D_se",
            "N_hat",
            "N_se",
            "D_ref",
            "N_ref",
            "boundary_transmit_fraction",
        ],
    );
    let mut out = Vec::new();
    for (i, &beta) in c.beta.iter().enumerate() {
        let plan = plan_strategy(run, beta)?;
        let mut cfg = SimConfig::new(beta, c.horizon, c.replicates, c.seed);
        if i == 0 && c.trajectory.is_some() {
            cfg.trajectory_steps = c.trajectory_steps;
        }
        let report = simulate_with(&run.source, &run.distortion, &plan.strategy, &cfg)?;
        if let (0, Some(path)) = (i, &c.trajectory) {
            write_trajectory(path, run, &report)?;
        }
        let (dr, nr) = plan.reference.unwrap_or((f64::NAN, f64::NAN));
        t.push(vec![
            beta.into(),
            Cell::Text(strategy_label(&plan.strategy)),
            report.d_hat.into(),
            report.d_se.into(),
            report.n_hat.into(),
            report.n_se.into(),
            dr.into(),
            nr.into(),
            report.boundary_transmit_fraction().into(),
        ]);
        let mut summary = report.clone();
        summary.trajectory.clear();
        out.push(json!({ "plan": plan, "report": summary }));
    }
    let mut doc = Document::new("simulate", out);
    doc.tables.push(t);
    Ok(doc)
}

fn sci(x: f64) -> Cell {
    Cell::Text(format!("{x:.3e}"))
}

/// Oracle agreement suite over `config.verify`.
pub fn verify(run: &Resolved) -> Result<Document, Failure> {
    let report = run_verification(&run.config.verify, run.config.perturb.as_ref())?;
    let cols = ["suite", "label", "expected", "actual", "delta", "tol", "pass"];
    let mut worst = Table::new("verify_worst", &cols);
    let mut failures = Table::new("verify_failures", &cols);
    for (table, cells) in [(&mut worst, &report.worst), (&mut failures, &report.failures)] {
        for cr in cells {
            table.push(vec![
                cr.suite.into(),
                Cell::Text(cr.label.clone()),
                sci(cr.expected),
                sci(cr.actual),
                sci(cr.delta),
                sci(cr.tol),
                Cell::Text(cr.pass.to_string()),
            ]);
        }
    }
    let mut doc = Document::new("verify", &report);
    doc.tables = vec![worst, failures];
    doc.warnings = report.warnings.clone();
    if !report.passed {
        doc.failed = Some(format!(
            "{} of {} cells out of tolerance",
            report.failures.len(),
            report.cells
        ));
    }
    Ok(doc)
}
