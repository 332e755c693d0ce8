//! Optimal trade-off between estimation distortion and transmission rate for
//! remote estimation of symmetric Markov sources.
//!
//! A transmitter observes `X_t` and decides whether to send it to a receiver,
//! which holds the last received value. Threshold strategies `f^(k)` transmit
//! when the error `|X_t - Z_{t-1}|` reaches `k`. This crate evaluates them
//! exactly, computes the Lagrangian cost curve and the distortion-transmission
//! function, cross-checks both against dynamic programming, and simulates the
//! closed loop.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analytics;
pub mod banded;
pub mod birth_death;
pub mod constrained;
pub mod error;
pub mod lagrange;
pub mod oracle;
pub mod sim;
pub mod source;
pub mod verify;

pub use analytics::{lm_values, policy_metrics, q_row_zero, submatrix, PolicyMetrics, ThresholdPolicy};
pub use birth_death::{bd_kstar, bd_lambda_avg, bd_metrics, q_entry, BDParams};
pub use constrained::{
    critical_alpha, dt_curve, dt_value, kstar_thetastar, optimal_strategy, RandomizedThresholdPolicy, TradeoffCurve,
};
pub use error::{Error, Result};
pub use lagrange::{check_a4, cstar_curve, lambda_sequence, optimal_threshold_for_lambda, A4Report, LagrangeCurve};
pub use source::{check_assumptions, AssumptionReport, DistortionSpec, MarkovSource};

/// Default number of thresholds evaluated for curves.
pub const DEFAULT_K_MAX: usize = 64;

/// Hard ceiling for threshold scans.
pub const K_GUARD: usize = 10_000;

pub(crate) fn check_beta(beta: f64, allow_one: bool) -> Result<()> {
    let ok = if allow_one {
        beta > 0.0 && beta <= 1.0
    } else {
        beta > 0.0 && beta < 1.0
    };
    if ok {
        Ok(())
    } else if allow_one {
        Err(Error::domain(format!("beta must lie in (0, 1], got {beta}")))
    } else {
        Err(Error::domain(format!("beta must lie in (0, 1), got {beta}")))
    }
}
