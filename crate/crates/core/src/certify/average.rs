//! The average mechanism under Gaussian priors and marginal DSS scores.
//!
//! Observing `x̄` moves Receiver from `N(μ, Σ)` to the Gaussian conditioned
//! on the average. For priors that are not too informative relative to `x`
//! the coordinate-wise relative DSS scores stay below `r1 + ln r2`.

use rayon::prelude::*;
use serde::Serialize;

use super::{derive_seed, wilson_interval, Method, Status, WilsonInterval, TOOL_VERSION, WILSON_Z99};
use crate::beliefs::{
    gaussian_condition_on_average, sample_gaussian_class_with, ClassSampler, GaussianBelief, GaussianClassSpec,
};
use crate::error::{Error, Result};

/// Tolerance on `Δ_i ≤ r1 + ln r2`.
pub const AVERAGE_TOL: f64 = 1e-8;
/// Samples drawn per independently seeded chunk.
const CHUNK: usize = 1024;
const HISTOGRAM_BINS: usize = 20;

/// `Δ_i = S_i(Q, x) − S_i(Q_x̄, x)` for every coordinate `i`, with `S_i` the
/// marginal Dawid–Sebastiani score.
pub fn average_relative_scores(prior: &GaussianBelief, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != prior.dim() {
        return Err(Error::IndexMismatch(format!("dataset has {} coordinates, prior {}", x.len(), prior.dim())));
    }
    let xbar = x.iter().sum::<f64>() / x.len() as f64;
    let posterior = gaussian_condition_on_average(prior, xbar)?;
    (0..x.len())
        .map(|i| {
            let (m0, v0) = prior.marginal(i)?;
            let (m1, v1) = posterior.marginal(i)?;
            if !(v1 > 0.0) {
                return Err(Error::UndefinedMoments { coordinate: i + 1, variance: v1 });
            }
            let dss = |m: f64, v: f64| v.ln() + (x[i] - m).powi(2) / v;
            Ok(dss(m0, v0) - dss(m1, v1))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AverageWitness {
    pub prior: GaussianBelief,
    pub coordinate: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AverageReport {
    pub verdict: bool,
    pub status: Status,
    pub n: usize,
    pub r1: f64,
    pub r2: f64,
    /// `r1 + ln r2`.
    pub bound: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub seed: u64,
    pub max_delta: f64,
    /// 1-based coordinate attaining `max_delta`.
    pub max_delta_coordinate: usize,
    /// Smallest `bound − max_i Δ_i` over the sample.
    pub min_slack: f64,
    pub violations: usize,
    /// 99% Wilson interval for the probability (under the sampler) that a
    /// member violates the bound.
    pub violation_rate: WilsonInterval,
    pub slack_histogram: Vec<HistogramBin>,
    pub witness: Option<AverageWitness>,
    pub method: Method,
    pub tool_version: String,
}

/// Samples `samples` members of the class and checks the bound on each.
pub fn certify_average_gaussian(spec: &GaussianClassSpec, samples: usize, seed: u64) -> Result<AverageReport> {
    certify_average_gaussian_with(&ClassSampler::default(), spec, samples, seed, AVERAGE_TOL).map(|(r, _)| r)
}

/// As [`certify_average_gaussian`] with an explicit sampler and tolerance,
/// also returning each member's slack.
///
/// Members are drawn in chunks of 1024 whose seeds derive from `seed`, so the
/// result does not depend on the number of worker threads.
pub fn certify_average_gaussian_with(
    sampler: &ClassSampler,
    spec: &GaussianClassSpec,
    samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<(AverageReport, Vec<f64>)> {
    if samples == 0 {
        return Err(Error::Precondition("sample count must be at least 1".into()));
    }
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tolerance}")));
    }
    let bound = spec.kappa();
    let chunks: Vec<(u64, usize)> =
        (0..samples.div_ceil(CHUNK)).map(|c| (derive_seed(seed, c as u64), CHUNK.min(samples - c * CHUNK))).collect();
    type Member = (GaussianBelief, Vec<f64>);
    let results: Vec<Result<Vec<Member>>> = chunks
        .par_iter()
        .map(|&(s, count)| {
            sample_gaussian_class_with(sampler, spec, s, count)?
                .into_iter()
                .map(|q| average_relative_scores(&q, &spec.x).map(|d| (q, d)))
                .collect()
        })
        .collect();
    let members: Vec<Member> = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();

    let mut max_delta = f64::NEG_INFINITY;
    let mut max_coord = 0;
    let mut violations = 0;
    let mut witness = None;
    let mut slacks = Vec::with_capacity(members.len());
    for (q, deltas) in &members {
        let (i, d) =
            deltas
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best });
        if d > max_delta {
            max_delta = d;
            max_coord = i + 1;
        }
        if d > bound + tolerance {
            violations += 1;
            if witness.is_none() {
                witness = Some(AverageWitness { prior: q.clone(), coordinate: i + 1, delta: d });
            }
        }
        slacks.push(bound - d);
    }
    let min_slack = slacks.iter().copied().fold(f64::INFINITY, f64::min);
    let verdict = violations == 0;
    let report = AverageReport {
        verdict,
        status: if verdict { Status::Supported } else { Status::Refuted },
        n: spec.dim(),
        r1: spec.r1,
        r2: spec.r2,
        bound,
        tolerance,
        samples: members.len(),
        seed,
        max_delta,
        max_delta_coordinate: max_coord,
        min_slack,
        violations,
        violation_rate: wilson_interval(violations as u64, members.len() as u64, WILSON_Z99),
        slack_histogram: histogram(&slacks, HISTOGRAM_BINS),
        witness,
        method: Method::MonteCarlo { samples, seed },
        tool_version: TOOL_VERSION.to_string(),
    };
    Ok((report, slacks))
}

fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Vec::new();
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin { lo: lo + b as f64 * width, hi: lo + (b + 1) as f64 * width, count: 0 })
        .collect();
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}
