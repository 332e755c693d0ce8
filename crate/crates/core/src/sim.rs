//! Closed-loop simulation of transmitter and receiver.
//!
//! At each step the transmitter sees `E_t = X_t - Z_{t-1}` and decides `U_t`.
//! On transmission `Z_t = X_t`, otherwise `Z_t = Z_{t-1}`; the receiver
//! outputs `X̂_t = Z_t`, so the per-step distortion is `d(X_t - X̂_t)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::check_beta;
use crate::constrained::RandomizedThresholdPolicy;
use crate::error::{Error, Result};
use crate::source::{DistortionSpec, IncrementSampler, MarkovSource};

/// Where a time-sharing cycle ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleBoundary {
    /// At each transmission: the post-decision error is back at 0.
    #[default]
    Transmission,
    /// At the first later step whose pre-decision error is 0.
    ZeroVisit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SimStrategy {
    Threshold {
        k: usize,
    },
    /// Transmit w.p. `q` at `|e| = k`, always above, never below.
    Bernoulli {
        k: usize,
        q: f64,
    },
    /// Deterministic frequency matching at `|e| = k` towards transmit rate `target`.
    Steering {
        k: usize,
        target: f64,
    },
    /// `f^(k)` for `a_m` cycles, then `f^(k+1)` for `b_m` cycles, cycling through the schedule.
    TimeSharing {
        k: usize,
        schedule: Vec<(u64, u64)>,
        boundary: CycleBoundary,
    },
}

impl SimStrategy {
    pub fn threshold(k: usize) -> Self {
        Self::Threshold { k }
    }

    pub fn bernoulli(k: usize, q: f64) -> Result<Self> {
        check_prob(q)?;
        Ok(Self::Bernoulli { k, q })
    }

    /// Per-stage randomization of a constrained solution.
    pub fn from_policy(policy: &RandomizedThresholdPolicy) -> Self {
        Self::Bernoulli {
            k: policy.k_star,
            q: policy.stage_probability,
        }
    }
}

fn check_prob(q: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(Error::domain(format!("probability must lie in [0, 1], got {q}")))
    }
}

/// Steering strategy at `|e| = k_star` with target transmit frequency `theta`.
pub fn make_steering(k_star: usize, theta: f64) -> Result<SimStrategy> {
    check_prob(theta)?;
    Ok(SimStrategy::Steering {
        k: k_star,
        target: theta,
    })
}

pub fn make_timesharing(k_star: usize, schedule: Vec<(u64, u64)>) -> Result<SimStrategy> {
    make_timesharing_with(k_star, schedule, CycleBoundary::default())
}

pub fn make_timesharing_with(k_star: usize, schedule: Vec<(u64, u64)>, boundary: CycleBoundary) -> Result<SimStrategy> {
    if schedule.is_empty() || schedule.iter().all(|&(a, b)| a + b == 0) {
        return Err(Error::domain("time-sharing schedule has no cycles"));
    }
    Ok(SimStrategy::TimeSharing {
        k: k_star,
        schedule,
        boundary,
    })
}

/// Periodic schedule `(a, b)` with `a + b <= max_cycle` whose fraction
/// `a / (a + b)` is closest to `ratio`; ties go to the shorter period.
///
/// For a constrained solution the matching ratio is `theta* N^(k*) / alpha`.
pub fn periodic_schedule(ratio: f64, max_cycle: u64) -> Result<(u64, u64)> {
    if !(0.0..=1.0).contains(&ratio) || max_cycle == 0 {
        return Err(Error::domain(format!(
            "schedule ratio must lie in [0, 1] with a positive period, got {ratio} and {max_cycle}"
        )));
    }
    let mut best = (1, 0);
    let mut err = f64::INFINITY;
    for n in 1..=max_cycle {
        let a = (ratio * n as f64).round() as u64;
        let e = (a as f64 / n as f64 - ratio).abs();
        if e < err - 1e-15 {
            best = (a, n - a);
            err = e;
        }
    }
    Ok(best)
}

/// Mutable per-replicate controller.
struct Controller<'a> {
    strategy: &'a SimStrategy,
    // Steering counters: visits to |e| = k with u = 0 and u = 1.
    a: [u64; 2],
    // Time-sharing position.
    slot: usize,
    used: u64,
    in_second: bool,
}

impl<'a> Controller<'a> {
    fn new(strategy: &'a SimStrategy) -> Self {
        let mut c = Self {
            strategy,
            a: [0; 2],
            slot: 0,
            used: 0,
            in_second: false,
        };
        c.settle();
        c
    }

    // Skip empty phases of the time-sharing schedule.
    fn settle(&mut self) {
        if let SimStrategy::TimeSharing { schedule, .. } = self.strategy {
            loop {
                let (a, b) = schedule[self.slot];
                let len = if self.in_second { b } else { a };
                if self.used < len {
                    return;
                }
                self.used = 0;
                if self.in_second {
                    self.in_second = false;
                    self.slot = (self.slot + 1) % schedule.len();
                } else {
                    self.in_second = true;
                }
            }
        }
    }

    fn end_cycle(&mut self) {
        self.used += 1;
        self.settle();
    }

    /// Decide at pre-decision error `e`. `t > 0` marks steps after the first.
    fn decide(&mut self, e: i64, t: u64, rng: &mut ChaCha8Rng) -> (bool, bool) {
        let a = e.unsigned_abs() as usize;
        match self.strategy {
            SimStrategy::Threshold { k } => (a >= *k, false),
            SimStrategy::Bernoulli { k, q } => {
                if a == *k {
                    (rng.gen::<f64>() < *q, true)
                } else {
                    (a > *k, false)
                }
            }
            SimStrategy::Steering { k, target } => {
                if a == *k {
                    let total = (self.a[0] + self.a[1] + 1) as f64;
                    let s0 = (1.0 - target) - (self.a[0] + 1) as f64 / total;
                    let s1 = target - (self.a[1] + 1) as f64 / total;
                    let u = s1 >= s0;
                    self.a[u as usize] += 1;
                    (u, true)
                } else {
                    (a > *k, false)
                }
            }
            SimStrategy::TimeSharing { k, boundary, .. } => {
                if *boundary == CycleBoundary::ZeroVisit && t > 0 && e == 0 {
                    self.end_cycle();
                }
                let kk = if self.in_second { k + 1 } else { *k };
                let u = a >= kk;
                if *boundary == CycleBoundary::Transmission && u {
                    self.end_cycle();
                }
                (u, a == *k)
            }
        }
    }
}

/// One step of a recorded trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: u64,
    pub x: i64,
    pub u: u8,
    pub z: i64,
    pub e: i64,
    pub xhat: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateSummary {
    pub d_hat: f64,
    pub n_hat: f64,
    pub max_abs_error: u64,
    pub transmissions: u64,
    /// Visits to `|e| = k` where the strategy randomizes or steers, and how
    /// many of them transmitted.
    pub boundary_visits: u64,
    pub boundary_transmits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub strategy: SimStrategy,
    pub horizon: u64,
    pub beta: f64,
    /// Restarted episodes per replicate (1 for the average-cost criterion).
    pub episodes_per_replicate: u64,
    pub episode_length: u64,
    pub d_hat: f64,
    pub n_hat: f64,
    pub d_se: f64,
    pub n_se: f64,
    pub replicates: usize,
    pub seed: u64,
    pub replicate_summaries: Vec<ReplicateSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<TrajectoryRow>,
    pub sampler_leak: f64,
}

impl SimReport {
    /// Pooled frequency of transmission at the randomized states.
    pub fn boundary_transmit_fraction(&self) -> f64 {
        let (v, t) = self.replicate_summaries.iter().fold((0u64, 0u64), |(v, t), r| {
            (v + r.boundary_visits, t + r.boundary_transmits)
        });
        t as f64 / v as f64
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub beta: f64,
    pub horizon: u64,
    pub replicates: usize,
    pub seed: u64,
    /// Steps of replicate 0 to record.
    pub trajectory_steps: u64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl SimConfig {
    pub fn new(beta: f64, horizon: u64, replicates: usize, seed: u64) -> Self {
        Self {
            beta,
            horizon,
            replicates,
            seed,
            trajectory_steps: 0,
            workers: None,
        }
    }
}

/// Discounted episodes are cut at the first `H` with `beta^H < 1e-12`.
pub fn episode_length(beta: f64) -> u64 {
    if beta >= 1.0 {
        return u64::MAX;
    }
    ((1e-12_f64).ln() / beta.ln()).ceil() as u64
}

/// Neumaier compensated sum.
#[derive(Default, Clone, Copy)]
struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

pub fn simulate(
    source: &MarkovSource,
    d: &DistortionSpec,
    strategy: &SimStrategy,
    beta: f64,
    horizon: u64,
    replicates: usize,
    seed: u64,
) -> Result<SimReport> {
    simulate_with(source, d, strategy, &SimConfig::new(beta, horizon, replicates, seed))
}

pub fn simulate_with(
    source: &MarkovSource,
    d: &DistortionSpec,
    strategy: &SimStrategy,
    cfg: &SimConfig,
) -> Result<SimReport> {
    check_beta(cfg.beta, true)?;
    if cfg.horizon == 0 || cfg.replicates == 0 {
        return Err(Error::domain("horizon and replicate count must be positive"));
    }
    match strategy {
        SimStrategy::Bernoulli { q, .. } => check_prob(*q)?,
        SimStrategy::Steering { target, .. } => check_prob(*target)?,
        SimStrategy::TimeSharing { schedule, .. } if schedule.iter().all(|&(a, b)| a + b == 0) => {
            return Err(Error::domain("time-sharing schedule has no cycles"))
        }
        _ => {}
    }
    let sampler = source.increment_sampler();
    let (episodes, length) = if cfg.beta < 1.0 {
        let h = episode_length(cfg.beta);
        ((cfg.horizon / h).max(1), h)
    } else {
        (1, cfg.horizon)
    };
    let run = |r: usize| {
        run_replicate(
            &sampler,
            d,
            strategy,
            cfg,
            r,
            episodes,
            length,
            if r == 0 { cfg.trajectory_steps } else { 0 },
        )
    };
    let results: Vec<(ReplicateSummary, Vec<TrajectoryRow>)> = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::domain(format!("thread pool: {e}")))?
            .install(|| (0..cfg.replicates).into_par_iter().map(run).collect()),
        None => (0..cfg.replicates).into_par_iter().map(run).collect(),
    };
    let mut trajectory = Vec::new();
    let mut summaries = Vec::with_capacity(results.len());
    for (i, (s, tr)) in results.into_iter().enumerate() {
        if i == 0 {
            trajectory = tr;
        }
        summaries.push(s);
    }
    let (d_hat, d_se) = mean_se(summaries.iter().map(|s| s.d_hat));
    let (n_hat, n_se) = mean_se(summaries.iter().map(|s| s.n_hat));
    Ok(SimReport {
        strategy: strategy.clone(),
        horizon: cfg.horizon,
        beta: cfg.beta,
        episodes_per_replicate: episodes,
        episode_length: length,
        d_hat,
        n_hat,
        d_se,
        n_se,
        replicates: cfg.replicates,
        seed: cfg.seed,
        replicate_summaries: summaries,
        trajectory,
        sampler_leak: sampler.leaked_mass,
    })
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, f64::NAN);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[allow(clippy::too_many_arguments)]
fn run_replicate(
    sampler: &IncrementSampler,
    d: &DistortionSpec,
    strategy: &SimStrategy,
    cfg: &SimConfig,
    replicate: usize,
    episodes: u64,
    length: u64,
    record: u64,
) -> (ReplicateSummary, Vec<TrajectoryRow>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replicate as u64);
    let beta = cfg.beta;
    let discounted = beta < 1.0;
    let mut trajectory = Vec::new();
    let mut summary = ReplicateSummary {
        d_hat: 0.0,
        n_hat: 0.0,
        max_abs_error: 0,
        transmissions: 0,
        boundary_visits: 0,
        boundary_transmits: 0,
    };
    let mut d_acc = KahanSum::default();
    let mut n_acc = KahanSum::default();
    let mut global_t = 0u64;
    for _ in 0..episodes {
        let mut ctl = Controller::new(strategy);
        let (mut x, mut z) = (0i64, 0i64);
        let mut disc = 1.0;
        let mut ep_d = KahanSum::default();
        let mut ep_n = KahanSum::default();
        for t in 0..length {
            let e = x - z;
            summary.max_abs_error = summary.max_abs_error.max(e.unsigned_abs());
            let (u, boundary) = ctl.decide(e, t, &mut rng);
            if boundary {
                summary.boundary_visits += 1;
                summary.boundary_transmits += u as u64;
            }
            if u {
                z = x;
                summary.transmissions += 1;
            }
            let cost = d.eval(x - z);
            if discounted {
                ep_d.add(disc * cost);
                if u {
                    ep_n.add(disc);
                }
                disc *= beta;
            } else {
                ep_d.add(cost);
                if u {
                    ep_n.add(1.0);
                }
            }
            if global_t < record {
                trajectory.push(TrajectoryRow {
                    t: global_t,
                    x,
                    u: u as u8,
                    z,
                    e,
                    xhat: z,
                });
            }
            global_t += 1;
            x += sampler.sample(rng.gen::<f64>());
        }
        let w = if discounted { 1.0 - beta } else { 1.0 / length as f64 };
        d_acc.add(w * ep_d.value());
        n_acc.add(w * ep_n.value());
    }
    summary.d_hat = d_acc.value() / episodes as f64;
    summary.n_hat = n_acc.value() / episodes as f64;
    (summary, trajectory)
}
