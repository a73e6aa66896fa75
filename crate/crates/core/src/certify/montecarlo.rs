//! Sampled tail estimates with Wilson score intervals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, WeightedIndex};
use serde::Serialize;

use super::{relative_score_distribution, within_kappa};
use crate::beliefs::FiniteBelief;
use crate::error::{Error, Result};
use crate::mechanisms::FiniteMechanism;
use crate::scores::Score;

/// Two-sided 99% standard normal quantile.
pub const WILSON_Z99: f64 = 2.5758293035489004;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WilsonInterval {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> WilsonInterval {
    if trials == 0 {
        return WilsonInterval { successes, trials, estimate: f64::NAN, lo: 0.0, hi: 1.0 };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    WilsonInterval { successes, trials, estimate: p, lo: (centre - half).max(0.0), hi: (centre + half).min(1.0) }
}

/// SplitMix64 step: decorrelated per-stream seeds from one user seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonteCarloTail {
    pub interval: WilsonInterval,
    pub seed: u64,
}

/// Estimates `Pr[Δ_S(Q, T, x) ≤ κ]` by drawing outputs from `m(x, ·)`.
pub fn monte_carlo_tail<S: Score + ?Sized>(
    score: &S,
    prior: &FiniteBelief,
    mech: &FiniteMechanism,
    truth: usize,
    kappa: f64,
    samples: u64,
    seed: u64,
) -> Result<MonteCarloTail> {
    if samples == 0 {
        return Err(Error::Precondition("Monte Carlo needs at least one sample".into()));
    }
    let law = relative_score_distribution(score, prior, mech, truth)?;
    let index = WeightedIndex::new(law.iter().map(|s| s.prob))
        .map_err(|e| Error::DegenerateInput(format!("output law cannot be sampled: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..samples).filter(|_| within_kappa(law[index.sample(&mut rng)].delta_s, kappa)).count() as u64;
    Ok(MonteCarloTail { interval: wilson_interval(hits, samples, WILSON_Z99), seed })
}
