//! Markov sources on the integers and per-step distortion functions.
//!
//! A source is a symmetric Toeplitz chain: the probability of moving from `i`
//! to `j` depends only on `|i - j|` through the tail sequence `p_0, p_1, ...`.
//! Finite tails are stored explicitly; the geometric family is kept in closed
//! form and truncated only where a computation needs a finite support.

use serde::Serialize;

use crate::error::{Error, Result};

/// Absolute tolerance on `p_0 + 2 * sum(p_n) = 1`.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Tail mass below which a geometric tail is cut when sampling increments.
pub const SAMPLER_TAIL_EPS: f64 = 1e-16;

/// Relative cut-off for geometric tails in matrix assembly.
pub const MATRIX_BAND_REL: f64 = 1e-18;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceTail {
    /// `p_0..=p_b`, zero beyond the band.
    Banded { tail: Vec<f64> },
    /// `p_n = p_1 * ratio^(n-1)` for `n >= 1`, with `p_1` fixed by normalization.
    Geometric { p0: f64, ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovSource {
    #[serde(flatten)]
    tail: SourceTail,
}

impl MarkovSource {
    /// Aperiodic symmetric birth-death chain: stay w.p. `1 - 2p`, step `±1` w.p. `p` each.
    ///
    /// Every `p` in `(0, 1/2)` is accepted. For `p > 1/3` the tail is no longer
    /// monotone (`p_0 < p_1`); [`check_assumptions`] reports that.
    pub fn birth_death(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::domain(format!(
                "birth-death probability must lie in (0, 1/2), got {p}"
            )));
        }
        Ok(Self {
            tail: SourceTail::Banded {
                tail: vec![1.0 - 2.0 * p, p],
            },
        })
    }

    /// Banded source from an explicit tail `p_0..=p_b`.
    pub fn banded(tail: &[f64]) -> Result<Self> {
        if tail.len() < 2 {
            return Err(Error::domain("a banded tail needs at least p_0 and p_1"));
        }
        if let Some(n) = tail.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Assumption {
                assumption: "A1",
                detail: format!("p_{n} = {} is not a non-negative probability", tail[n]),
            });
        }
        if tail[1] <= 0.0 {
            return Err(Error::Assumption {
                assumption: "A1",
                detail: "p_1 must be positive".into(),
            });
        }
        if let Some(n) = tail.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::Assumption {
                assumption: "A1",
                detail: format!(
                    "tail must be non-increasing, but p_{} = {} > p_{} = {}",
                    n + 1,
                    tail[n + 1],
                    n,
                    tail[n]
                ),
            });
        }
        let sum = row_sum(tail);
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Normalization {
                sum,
                tol: STOCHASTIC_TOL,
            });
        }
        Ok(Self {
            tail: SourceTail::Banded { tail: tail.to_vec() },
        })
    }

    /// Infinite-band source with geometrically decaying off-diagonal terms.
    pub fn geometric(p0: f64, ratio: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p0) {
            return Err(Error::domain(format!("p0 must lie in [0, 1), got {p0}")));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::domain(format!(
                "geometric ratio must lie in (0, 1), got {ratio}"
            )));
        }
        let p1 = 0.5 * (1.0 - p0) * (1.0 - ratio);
        if p1 > p0 {
            return Err(Error::Assumption {
                assumption: "A1",
                detail: format!("p_1 = {p1} exceeds p_0 = {p0}"),
            });
        }
        Ok(Self {
            tail: SourceTail::Geometric { p0, ratio },
        })
    }

    pub fn tail_kind(&self) -> &SourceTail {
        &self.tail
    }

    /// Transition probability for a jump of size `n` (either direction).
    pub fn p(&self, n: usize) -> f64 {
        match &self.tail {
            SourceTail::Banded { tail } => tail.get(n).copied().unwrap_or(0.0),
            SourceTail::Geometric { p0, ratio } => {
                if n == 0 {
                    *p0
                } else {
                    self.geometric_p1() * ratio.powi((n - 1) as i32)
                }
            }
        }
    }

    pub fn p0(&self) -> f64 {
        self.p(0)
    }

    /// Band `b` for finitely banded sources; `None` for infinite tails.
    pub fn band(&self) -> Option<usize> {
        match &self.tail {
            SourceTail::Banded { tail } => Some(tail.len() - 1),
            SourceTail::Geometric { .. } => None,
        }
    }

    /// The finite tail `p_0..=p_b`, if the source is banded.
    pub fn tail(&self) -> Option<&[f64]> {
        match &self.tail {
            SourceTail::Banded { tail } => Some(tail),
            SourceTail::Geometric { .. } => None,
        }
    }

    /// `p` if this is a birth-death chain (only `p_0` and `p_1` non-zero).
    pub fn birth_death_p(&self) -> Option<f64> {
        match &self.tail {
            SourceTail::Banded { tail } if tail[2..].iter().all(|&q| q == 0.0) => Some(tail[1]),
            _ => None,
        }
    }

    /// `sum_{n >= from} p_n`.
    pub fn tail_sum_from(&self, from: usize) -> f64 {
        match &self.tail {
            SourceTail::Banded { tail } => tail.iter().skip(from).sum(),
            SourceTail::Geometric { p0, ratio } => {
                let p1 = self.geometric_p1();
                if from == 0 {
                    p0 + p1 / (1.0 - ratio)
                } else {
                    p1 * ratio.powi((from - 1) as i32) / (1.0 - ratio)
                }
            }
        }
    }

    /// Probability of a jump longer than `radius` in either direction.
    pub fn tail_mass_beyond(&self, radius: usize) -> f64 {
        2.0 * self.tail_sum_from(radius + 1)
    }

    /// Smallest jump radius whose excluded two-sided tail mass is at most `eps`.
    /// For banded sources this is the band.
    pub fn effective_radius(&self, eps: f64) -> usize {
        match &self.tail {
            SourceTail::Banded { tail } => tail.len() - 1,
            SourceTail::Geometric { .. } => {
                let mut r = 1;
                while self.tail_mass_beyond(r) > eps && self.p(r) > 0.0 {
                    r += 1;
                }
                r
            }
        }
    }

    /// Band used for matrix assembly. Geometric tails are cut where
    /// `p_n < MATRIX_BAND_REL * p_1`; the dropped entries are below the
    /// rounding error of the diagonal.
    pub(crate) fn matrix_band(&self) -> usize {
        match &self.tail {
            SourceTail::Banded { tail } => tail.len() - 1,
            SourceTail::Geometric { .. } => {
                let cut = MATRIX_BAND_REL * self.p(1);
                let mut r = 1;
                while self.p(r + 1) >= cut {
                    r += 1;
                }
                r
            }
        }
    }

    pub fn increment_sampler(&self) -> IncrementSampler {
        IncrementSampler::new(self)
    }

    fn geometric_p1(&self) -> f64 {
        match &self.tail {
            SourceTail::Geometric { p0, ratio } => 0.5 * (1.0 - p0) * (1.0 - ratio),
            SourceTail::Banded { tail } => tail[1],
        }
    }

    pub fn describe(&self) -> String {
        match &self.tail {
            SourceTail::Banded { tail } => match self.birth_death_p() {
                Some(p) => format!("birth-death(p={p})"),
                None => format!("banded(b={}, tail={tail:?})", tail.len() - 1),
            },
            SourceTail::Geometric { p0, ratio } => format!("geometric(p0={p0}, ratio={ratio})"),
        }
    }
}

fn row_sum(tail: &[f64]) -> f64 {
    tail[0] + 2.0 * tail[1..].iter().sum::<f64>()
}

/// Inverse-CDF sampler for the symmetric increment `X_{t+1} - X_t`.
///
/// Outcomes are stored in order of decreasing probability (`0, -1, +1, -2, ...`)
/// so that a linear scan terminates early on average.
#[derive(Debug, Clone)]
pub struct IncrementSampler {
    steps: Vec<i64>,
    cdf: Vec<f64>,
    /// Tail mass excluded by the truncation (zero for banded sources).
    pub leaked_mass: f64,
    pub radius: usize,
}

impl IncrementSampler {
    fn new(source: &MarkovSource) -> Self {
        let radius = source.effective_radius(SAMPLER_TAIL_EPS);
        let mut steps = Vec::with_capacity(2 * radius + 1);
        let mut cdf = Vec::with_capacity(2 * radius + 1);
        let mut acc = source.p(0);
        steps.push(0);
        cdf.push(acc);
        for n in 1..=radius {
            let p = source.p(n);
            for step in [-(n as i64), n as i64] {
                acc += p;
                steps.push(step);
                cdf.push(acc);
            }
        }
        // Rounding (or truncation) can leave the last entry slightly below 1;
        // the remainder is assigned to the outermost jump.
        let leaked_mass = source.tail_mass_beyond(radius);
        if let Some(last) = cdf.last_mut() {
            *last = f64::INFINITY;
        }
        Self {
            steps,
            cdf,
            leaked_mass,
            radius,
        }
    }

    /// Map a uniform draw `u` in `[0, 1)` to an increment.
    #[inline]
    pub fn sample(&self, u: f64) -> i64 {
        for (step, c) in self.steps.iter().zip(&self.cdf) {
            if u < *c {
                return *step;
            }
        }
        unreachable!("last CDF entry is +inf")
    }
}

/// Per-step distortion `d(e)` as a function of the estimation error.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistortionSpec {
    /// `d(e) = |e|`
    Absolute,
    /// `d(e) = 1{e != 0}`
    Hamming,
    /// `d(e) = |e|^r`
    Power { r: f64 },
    /// User values on `0..=E_max`, held at `d(E_max)` beyond.
    Table { values: Vec<f64> },
}

impl DistortionSpec {
    pub fn power(r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::domain(format!("power exponent must be positive, got {r}")));
        }
        Ok(Self::Power { r })
    }

    pub fn table(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("distortion table is empty"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::domain(format!(
                "distortion table entries must be finite and non-negative, got {v}"
            )));
        }
        Ok(Self::Table { values })
    }

    #[inline]
    pub fn eval(&self, e: i64) -> f64 {
        let a = e.unsigned_abs();
        match self {
            Self::Absolute => a as f64,
            Self::Hamming => {
                if a == 0 {
                    0.0
                } else {
                    1.0
                }
            }
            Self::Power { r } => (a as f64).powf(*r),
            Self::Table { values } => {
                let idx = (a as usize).min(values.len() - 1);
                values[idx]
            }
        }
    }

    /// True when `d(e)` comes from holding the last table entry.
    pub fn is_extended_at(&self, e: i64) -> bool {
        match self {
            Self::Table { values } => e.unsigned_abs() as usize >= values.len(),
            _ => false,
        }
    }

    /// `d^(k) = (d(-k+1), ..., d(k-1))`.
    pub fn restricted(&self, k: usize) -> Vec<f64> {
        let r = k as i64 - 1;
        (-r..=r).map(|e| self.eval(e)).collect()
    }
}

/// Outcome of the finite assumption checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub a1_ok: bool,
    pub a2a_ok: bool,
    pub a2b_ok: bool,
    /// Description of a verified weight-function witness, when one is known.
    pub a3_witness: Option<String>,
    /// Radius `|e| <= checked_range` over which the checks ran.
    pub checked_range: usize,
    /// Some evaluated `d(e)` came from extending a finite table.
    pub table_extended: bool,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.a1_ok && self.a2a_ok && self.a2b_ok
    }
}

/// Run the source and distortion checks over `|e| <= radius`.
///
/// A weight-function witness is only known for the birth-death chain with
/// absolute-error distortion: `w(e) = max{lambda, |e|}`, `mu1 = 1`,
/// `mu2 = max{1 - 2p + 2p/lambda, 2}`. It is verified by substitution; for any
/// other model `a3_witness` is `None`.
pub fn check_assumptions(source: &MarkovSource, d: &DistortionSpec, radius: usize, lambda: f64) -> AssumptionReport {
    let radius = radius.max(1);
    let mut notes = Vec::new();

    let mut a1_ok = source.p(1) > 0.0;
    if !a1_ok {
        notes.push("A1: p_1 is zero".into());
    }
    for n in 0..radius {
        let (a, b) = (source.p(n), source.p(n + 1));
        if a < 0.0 || b < 0.0 || b > a {
            a1_ok = false;
            notes.push(format!("A1: tail not non-increasing at n={n} ({a} -> {b})"));
            break;
        }
    }
    let total = source.tail_sum_from(0) * 2.0 - source.p0();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        a1_ok = false;
        notes.push(format!("A1: row sum {total} differs from 1"));
    }

    let mut a2a_ok = true;
    let mut a2b_ok = d.eval(0) == 0.0;
    if !a2b_ok {
        notes.push(format!("A2b: d(0) = {} is not zero", d.eval(0)));
    }
    let mut table_extended = false;
    for e in 0..=radius as i64 {
        table_extended |= d.is_extended_at(e);
        let (pos, neg) = (d.eval(e), d.eval(-e));
        if pos.to_bits() != neg.to_bits() {
            a2a_ok = false;
            notes.push(format!("A2a: d({e}) != d(-{e})"));
        }
        if d.eval(e + 1) < pos {
            a2a_ok = false;
            notes.push(format!("A2a: d decreases between {e} and {}", e + 1));
        }
        if e != 0 && pos <= 0.0 {
            a2b_ok = false;
            notes.push(format!("A2b: d({e}) is zero"));
        }
    }
    if table_extended {
        notes.push("distortion table extended by its last value inside the checked range".into());
    }

    let a3_witness = match (source.birth_death_p(), d) {
        (Some(p), DistortionSpec::Absolute) if lambda > 0.0 => {
            verify_birth_death_witness(p, lambda, radius, &mut notes)
        }
        (Some(_), DistortionSpec::Absolute) => {
            notes.push("A3: the birth-death witness needs lambda > 0".into());
            None
        }
        _ => None,
    };

    AssumptionReport {
        a1_ok,
        a2a_ok,
        a2b_ok,
        a3_witness,
        checked_range: radius,
        table_extended,
        notes,
    }
}

fn verify_birth_death_witness(p: f64, lambda: f64, radius: usize, notes: &mut Vec<String>) -> Option<String> {
    let w = |e: i64| lambda.max(e.abs() as f64);
    let mu1 = 1.0;
    let mu2 = (1.0 - 2.0 * p + 2.0 * p / lambda).max(2.0);
    let slack = 1e-12;
    let expect = |e: i64| (1.0 - 2.0 * p) * w(e) + p * (w(e - 1) + w(e + 1));
    let from_zero = expect(0);
    for e in -(radius as i64)..=radius as i64 {
        let bound = mu2 * w(e) * (1.0 + slack);
        let ok = lambda.max(e.abs() as f64) <= mu1 * w(e) && expect(e) <= bound && from_zero <= bound;
        if !ok {
            notes.push(format!("A3: birth-death witness fails at e={e}"));
            return None;
        }
    }
    Some(format!(
        "w(e) = max{{{lambda}, |e|}}, mu1 = {mu1}, mu2 = {mu2} (verified for |e| <= {radius})"
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn birth_death_tail() {
        let s = MarkovSource::birth_death(0.3).unwrap();
        assert_eq!(s.tail().unwrap(), &[1.0 - 0.6, 0.3]);
        assert!((s.p0() - 0.4).abs() < 1e-15);
        assert_eq!(s.p(2), 0.0);
        assert_eq!(s.band(), Some(1));
        assert_eq!(s.birth_death_p(), Some(0.3));

        let s = MarkovSource::birth_death(0.25).unwrap();
        assert_eq!(s.p0() + 2.0 * s.p(1), 1.0);
    }

    #[test]
    fn birth_death_rejects_boundary() {
        for p in [0.0, 0.5, 0.7, -0.1, f64::NAN] {
            assert!(matches!(MarkovSource::birth_death(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn banded_matches_birth_death() {
        let a = MarkovSource::banded(&[0.4, 0.3]).unwrap();
        let b = MarkovSource::birth_death(0.3).unwrap();
        assert_eq!(a.p(0), b.p(0));
        assert_eq!(a.p(1), b.p(1));
        assert_eq!(a.band(), b.band());
    }

    #[test]
    fn banded_validation() {
        let s = MarkovSource::banded(&[0.4, 0.2, 0.1]).unwrap();
        assert_eq!(s.band(), Some(2));
        assert_eq!(s.birth_death_p(), None);

        let err = MarkovSource::banded(&[0.2, 0.3, 0.1]).unwrap_err();
        assert!(matches!(err, Error::Assumption { assumption: "A1", .. }), "{err}");

        let err = MarkovSource::banded(&[0.5, 0.3]).unwrap_err();
        assert!(matches!(err, Error::Normalization { .. }), "{err}");

        assert!(MarkovSource::banded(&[1.0, 0.0]).is_err());
        assert!(MarkovSource::banded(&[1.0]).is_err());
    }

    #[test]
    fn geometric_normalization_and_mass() {
        let s = MarkovSource::geometric(0.5, 0.5).unwrap();
        assert!((s.p(1) - 0.125).abs() < 1e-15);
        assert!((s.tail_sum_from(0) * 2.0 - s.p0() - 1.0).abs() < 1e-15);
        let r = s.effective_radius(1e-12);
        assert!(s.tail_mass_beyond(r) <= 1e-12);
        assert!(s.tail_mass_beyond(r - 1) > 1e-12);
        assert!(MarkovSource::geometric(0.1, 0.5).is_err());
    }

    #[test]
    fn sampler_frequencies() {
        let s = MarkovSource::banded(&[0.4, 0.2, 0.1]).unwrap();
        let sampler = s.increment_sampler();
        let n = 100_000;
        let mut counts = [0usize; 5];
        for i in 0..n {
            let u = (i as f64 + 0.5) / n as f64;
            counts[(sampler.sample(u) + 2) as usize] += 1;
        }
        let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let expect = [0.1, 0.2, 0.4, 0.2, 0.1];
        for (f, e) in freq.iter().zip(expect) {
            assert!((f - e).abs() < 1e-4, "{freq:?}");
        }
    }

    #[test]
    fn distortion_values() {
        assert_eq!(DistortionSpec::Absolute.eval(-3), 3.0);
        assert_eq!(DistortionSpec::Hamming.eval(5), 1.0);
        assert_eq!(DistortionSpec::Hamming.eval(0), 0.0);
        assert_eq!(DistortionSpec::power(2.0).unwrap().eval(-3), 9.0);
        let t = DistortionSpec::table(vec![0.0, 1.0, 5.0]).unwrap();
        assert_eq!(t.eval(-7), 5.0);
        assert!(t.is_extended_at(3));
        assert!(!t.is_extended_at(2));
        assert_eq!(DistortionSpec::Absolute.restricted(3), vec![2.0, 1.0, 0.0, 1.0, 2.0]);
        assert!(DistortionSpec::power(0.0).is_err());
        assert!(DistortionSpec::table(vec![]).is_err());
    }

    #[test]
    fn birth_death_witness_verified() {
        let s = MarkovSource::birth_death(0.3).unwrap();
        let r = check_assumptions(&s, &DistortionSpec::Absolute, 50, 1.0);
        assert!(r.all_ok(), "{r:?}");
        let w = r.a3_witness.expect("witness");
        assert!(w.contains("mu2 = 2"), "{w}");
        assert_eq!(r.checked_range, 50);
    }

    #[test]
    fn hamming_passes_a2() {
        let s = MarkovSource::banded(&[0.4, 0.2, 0.1]).unwrap();
        let r = check_assumptions(&s, &DistortionSpec::Hamming, 20, 1.0);
        assert!(r.a2a_ok && r.a2b_ok);
        assert!(r.a3_witness.is_none());
    }

    #[test]
    fn power_has_no_witness() {
        let s = MarkovSource::banded(&[0.4, 0.3]).unwrap();
        let r = check_assumptions(&s, &DistortionSpec::power(2.0).unwrap(), 20, 1.0);
        assert!(r.all_ok());
        assert!(r.a3_witness.is_none());
    }

    #[test]
    fn lazy_free_birth_death_flags_a1() {
        let s = MarkovSource::birth_death(0.45).unwrap();
        let r = check_assumptions(&s, &DistortionSpec::Absolute, 10, 1.0);
        assert!(!r.a1_ok);
    }

    #[test]
    fn bad_table_flags_a2() {
        let s = MarkovSource::birth_death(0.3).unwrap();
        let t = DistortionSpec::table(vec![0.0, 2.0, 1.0]).unwrap();
        let r = check_assumptions(&s, &t, 5, 1.0);
        assert!(!r.a2a_ok);
        assert!(r.table_extended);
        let t = DistortionSpec::table(vec![1.0, 2.0]).unwrap();
        assert!(!check_assumptions(&s, &t, 5, 1.0).a2b_ok);
    }
}
