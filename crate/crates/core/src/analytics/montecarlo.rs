//! Monte Carlo estimates of `L^(k)` and `M^(k)` from exit-time episodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::check_beta;
use crate::error::{Error, Result};
use crate::source::{DistortionSpec, MarkovSource};

pub const DEFAULT_EPISODE_CAP: u64 = 10_000_000;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LmEstimate {
    pub l_hat: f64,
    pub m_hat: f64,
    pub l_se: f64,
    pub m_se: f64,
    /// Episodes that exited before the step cap.
    pub episodes: usize,
    /// Episodes dropped because they hit the cap.
    pub capped: usize,
    /// Probability mass the increment sampler cannot produce.
    pub sampler_leak: f64,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    n: usize,
    capped: usize,
    sl: f64,
    sl2: f64,
    sm: f64,
    sm2: f64,
}

impl Acc {
    fn merge(mut self, o: Acc) -> Acc {
        self.n += o.n;
        self.capped += o.capped;
        self.sl += o.sl;
        self.sl2 += o.sl2;
        self.sm += o.sm;
        self.sm2 += o.sm2;
        self
    }
}

pub fn lm_montecarlo(
    source: &MarkovSource,
    d: &DistortionSpec,
    k: usize,
    beta: f64,
    episodes: usize,
    seed: u64,
) -> Result<LmEstimate> {
    lm_montecarlo_with(source, d, k, beta, episodes, seed, DEFAULT_EPISODE_CAP)
}

/// Episode `i` draws from stream `i` of a ChaCha8 generator keyed by `seed`,
/// and partial sums are merged in episode order, so the result does not
/// depend on the number of worker threads.
pub fn lm_montecarlo_with(
    source: &MarkovSource,
    d: &DistortionSpec,
    k: usize,
    beta: f64,
    episodes: usize,
    seed: u64,
    max_steps: u64,
) -> Result<LmEstimate> {
    check_beta(beta, true)?;
    if k == 0 {
        return Err(Error::domain("Monte Carlo L/M needs k >= 1"));
    }
    if episodes == 0 {
        return Err(Error::domain("need at least one episode"));
    }
    let sampler = source.increment_sampler();
    let kk = k as u64;
    let chunks: Vec<Acc> = (0..episodes.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Acc::default();
            for ep in c * CHUNK..((c + 1) * CHUNK).min(episodes) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(ep as u64);
                let (mut e, mut disc, mut l, mut m) = (0i64, 1.0, 0.0, 0.0);
                let mut steps = 0u64;
                let mut capped = false;
                while e.unsigned_abs() < kk {
                    if steps == max_steps {
                        capped = true;
                        break;
                    }
                    l += disc * d.eval(e);
                    m += disc;
                    disc *= beta;
                    steps += 1;
                    e += sampler.sample(rng.gen::<f64>());
                }
                if capped {
                    acc.capped += 1;
                } else {
                    acc.n += 1;
                    acc.sl += l;
                    acc.sl2 += l * l;
                    acc.sm += m;
                    acc.sm2 += m * m;
                }
            }
            acc
        })
        .collect();
    let acc = chunks.into_iter().fold(Acc::default(), Acc::merge);
    if acc.n == 0 {
        return Err(Error::Consistency(format!(
            "all {episodes} episodes hit the {max_steps}-step cap"
        )));
    }
    let n = acc.n as f64;
    let se = |s: f64, s2: f64| {
        if acc.n < 2 {
            f64::NAN
        } else {
            let mean = s / n;
            ((s2 / n - mean * mean).max(0.0) * n / (n - 1.0) / n).sqrt()
        }
    };
    Ok(LmEstimate {
        l_hat: acc.sl / n,
        m_hat: acc.sm / n,
        l_se: se(acc.sl, acc.sl2),
        m_se: se(acc.sm, acc.sm2),
        episodes: acc.n,
        capped: acc.capped,
        sampler_leak: sampler.leaked_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_threshold_geometric_exit() {
        let s = MarkovSource::birth_death(0.3).unwrap();
        let est = lm_montecarlo(&s, &DistortionSpec::Absolute, 1, 1.0, 200_000, 7).unwrap();
        assert_eq!(est.l_hat, 0.0);
        assert!((est.m_hat - 1.0 / 0.6).abs() < 3.0 * est.m_se, "{est:?}");
        assert_eq!(est.capped, 0);
    }

    #[test]
    fn deterministic_given_seed() {
        let s = MarkovSource::banded(&[0.4, 0.2, 0.1]).unwrap();
        let a = lm_montecarlo(&s, &DistortionSpec::Absolute, 3, 0.9, 5000, 11).unwrap();
        let b = lm_montecarlo(&s, &DistortionSpec::Absolute, 3, 0.9, 5000, 11).unwrap();
        assert_eq!(a, b);
        let c = lm_montecarlo(&s, &DistortionSpec::Absolute, 3, 0.9, 5000, 12).unwrap();
        assert_ne!(a.m_hat, c.m_hat);
    }

    #[test]
    fn cap_is_counted() {
        let s = MarkovSource::birth_death(0.1).unwrap();
        let est = lm_montecarlo_with(&s, &DistortionSpec::Absolute, 2, 1.0, 500, 3, 5).unwrap();
        assert!(est.capped > 0);
        assert_eq!(est.capped + est.episodes, 500);
    }
}
