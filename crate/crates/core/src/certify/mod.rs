//! Certification of tail guarantees on relative privacy scores.
//!
//! A mechanism satisfies a guarantee `(scores, class, κ, δ)` when for every
//! score `S`, every dataset `x` and every prior `Q` in the class,
//! `Pr_{T∼m(x,·)}[Δ_S(Q, T, x) ≤ κ] ≥ 1 − δ`, where
//! `Δ_S(Q, T, x) = S(Q, x) − S(Q_T, x)` compares the prior's score with the
//! posterior's. Finite mechanisms are certified by exhaustive enumeration
//! over outputs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beliefs::{posterior_update, Dataset, FiniteBelief, GaussianClassSpec, TwoPointPrior};
use crate::error::{Error, Result};
use crate::extended::ExtendedReal;
use crate::mechanisms::{FiniteMechanism, NeighborRelation};
use crate::scores::{Score, ScoringRule};

pub mod average;
pub mod composition;
pub mod montecarlo;
pub mod pdp;
pub mod postprocess;

pub use average::{average_relative_scores, certify_average_gaussian, certify_average_gaussian_with, AverageReport};
pub use composition::{check_composition, check_conjugate, CompositionReport};
pub use montecarlo::{derive_seed, monte_carlo_tail, wilson_interval, MonteCarloTail, WilsonInterval, WILSON_Z99};
pub use pdp::{
    certify_pdp, check_pdp_pp_equivalence, pdp_attained, ratio_within, two_point_tail_profile, EquivalenceReport,
    PdpReport, PdpWitness, TwoPointProfile,
};
pub use postprocess::{
    check_receiver_postprocessing, search_sender_postprocessing_counterexample, KernelFamily, ReceiverReport,
    SearchBounds, SearchOutcome, SenderWitness,
};

/// Relative slack on `Δ ≤ κ`: a score within `1e-12·max(1, |κ|)` of the
/// threshold counts as on it.
pub const SCORE_TOL: f64 = 1e-12;
/// Slack on `tail ≥ 1 − δ` and on `attained ≤ δ`.
pub const VERDICT_TOL: f64 = 1e-12;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub(crate) fn within_kappa(delta: ExtendedReal, kappa: f64) -> bool {
    delta.le_within(kappa, SCORE_TOL * kappa.abs().max(1.0))
}

/// Mixing weights used to approach the two-point infimum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WGrid {
    /// Total number of weights: `points − 1` geometric values in
    /// `[min, 1/2]` plus `1 − min`.
    pub points: usize,
    pub min: f64,
}

impl Default for WGrid {
    fn default() -> Self {
        WGrid { points: 25, min: 1e-6 }
    }
}

impl WGrid {
    pub fn with_points(points: usize) -> Self {
        WGrid { points, ..WGrid::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < 2 {
            return Err(Error::InvalidInput(format!("w-grid needs at least 2 points, got {}", self.points)));
        }
        if !(self.min > 0.0 && self.min < 0.5) {
            return Err(Error::InvalidInput(format!("w-grid minimum must lie in (0, 1/2), got {}", self.min)));
        }
        Ok(())
    }

    /// The weights in ascending order.
    pub fn weights(&self) -> Vec<f64> {
        let geometric = self.points - 1;
        let mut w: Vec<f64> = if geometric == 1 {
            vec![0.5]
        } else {
            let (lo, hi) = (self.min.ln(), 0.5f64.ln());
            (0..geometric).map(|k| (lo + (hi - lo) * k as f64 / (geometric - 1) as f64).exp()).collect()
        };
        *w.last_mut().expect("non-empty") = 0.5;
        w.push(1.0 - self.min);
        w
    }
}

/// Receiver's admissible data-priors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum PriorClass {
    /// The same finite list of priors for every true dataset.
    Explicit { priors: Vec<FiniteBelief> },
    /// One list per dataset, aligned with the mechanism's universe.
    ExplicitPerDataset { priors: Vec<Vec<FiniteBelief>> },
    /// Two-point priors `w δ_x + (1 − w) δ_x′` over neighbouring pairs.
    ///
    /// With `truth_only`, only pairs containing the true dataset with
    /// `w ∈ (0, 1)` on it are used; otherwise every pair and both point
    /// masses are included. For the log score the `w → 0` limit is evaluated
    /// analytically, which makes the certificate exact.
    NeighborTwoPoint {
        neighbors: NeighborRelation,
        #[serde(default)]
        grid: WGrid,
        #[serde(default)]
        truth_only: bool,
    },
    /// Gaussian priors "not too poor" relative to a dataset; only the average
    /// mechanism is supported.
    Gaussian { spec: GaussianClassSpec },
}

/// One prior to evaluate against a given true dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum PriorCase {
    Belief {
        belief: FiniteBelief,
        label: String,
        w: Option<f64>,
    },
    /// The `w → 0` limit of two-point priors on `(truth, alternative)`.
    Limit {
        alternative: usize,
        label: String,
    },
}

impl PriorCase {
    pub fn label(&self) -> &str {
        match self {
            PriorCase::Belief { label, .. } | PriorCase::Limit { label, .. } => label,
        }
    }

    fn w(&self) -> Option<f64> {
        match self {
            PriorCase::Belief { w, .. } => *w,
            PriorCase::Limit { .. } => Some(0.0),
        }
    }
}

fn two_point_case(universe: &[Dataset], a: usize, b: usize, w: f64) -> Result<PriorCase> {
    let belief = TwoPointPrior::new(universe[a].clone(), universe[b].clone(), w)?.to_belief();
    Ok(PriorCase::Belief {
        label: format!("two-point(x={}, x'={}, w={w:e})", universe[a], universe[b]),
        belief,
        w: Some(w),
    })
}

/// The priors of `class` to evaluate when `universe[truth]` is the true dataset.
pub fn enumerate_priors(class: &PriorClass, universe: &[Dataset], truth: usize) -> Result<Vec<PriorCase>> {
    match class {
        PriorClass::Explicit { priors } => Ok(explicit_cases(priors)),
        PriorClass::ExplicitPerDataset { priors } => {
            if priors.len() != universe.len() {
                return Err(Error::IndexMismatch(format!(
                    "{} prior lists for a universe of {} datasets",
                    priors.len(),
                    universe.len()
                )));
            }
            Ok(explicit_cases(&priors[truth]))
        }
        PriorClass::NeighborTwoPoint { neighbors, grid, truth_only } => {
            grid.validate()?;
            let lists = neighbors.indexed(universe)?;
            let weights = grid.weights();
            let mut cases = Vec::new();
            for &alt in &lists[truth] {
                cases.push(PriorCase::Limit {
                    alternative: alt,
                    label: format!("two-point(x={}, x'={}, w→0)", universe[truth], universe[alt]),
                });
                for &w in &weights {
                    cases.push(two_point_case(universe, truth, alt, w)?);
                }
            }
            if !truth_only {
                cases.push(PriorCase::Belief {
                    belief: FiniteBelief::point_mass(universe[truth].clone()),
                    label: format!("point-mass({})", universe[truth]),
                    w: Some(1.0),
                });
                for (a, list) in lists.iter().enumerate() {
                    if a == truth || list.is_empty() {
                        continue;
                    }
                    cases.push(PriorCase::Belief {
                        belief: FiniteBelief::point_mass(universe[a].clone()),
                        label: format!("point-mass({})", universe[a]),
                        w: None,
                    });
                    for &b in list.iter().filter(|&&b| b > a && b != truth) {
                        for &w in &weights {
                            cases.push(two_point_case(universe, a, b, w)?);
                        }
                    }
                }
            }
            Ok(cases)
        }
        PriorClass::Gaussian { .. } => Err(Error::UnsupportedPriorClass(
            "Gaussian priors apply only to the average mechanism; use the average certifier".into(),
        )),
    }
}

fn explicit_cases(priors: &[FiniteBelief]) -> Vec<PriorCase> {
    priors
        .iter()
        .enumerate()
        .map(|(k, b)| PriorCase::Belief { belief: b.clone(), label: format!("prior#{k}"), w: None })
        .collect()
}

/// A guarantee to certify.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeSpec {
    pub scores: Vec<ScoringRule>,
    pub prior_class: PriorClass,
    pub kappa: f64,
    pub delta: f64,
}

impl GuaranteeSpec {
    pub fn new(scores: Vec<ScoringRule>, prior_class: PriorClass, kappa: f64, delta: f64) -> Result<Self> {
        let spec = GuaranteeSpec { scores, prior_class, kappa, delta };
        spec.validate()?;
        Ok(spec)
    }

    /// The log score over two-point neighbour priors — the guarantee that is
    /// equivalent to probabilistic differential privacy.
    pub fn log_two_point(neighbors: NeighborRelation, kappa: f64, delta: f64) -> Result<Self> {
        GuaranteeSpec::new(
            vec![ScoringRule::NegLogProb],
            PriorClass::NeighborTwoPoint { neighbors, grid: WGrid::default(), truth_only: true },
            kappa,
            delta,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.is_empty() {
            return Err(Error::InvalidInput("a guarantee needs at least one score".into()));
        }
        for s in &self.scores {
            s.validate()?;
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidInput(format!("kappa must be finite and ≥ 0, got {}", self.kappa)));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::InvalidInput(format!("delta must lie in [0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    pub fn with_budget(&self, kappa: f64, delta: f64) -> Result<Self> {
        GuaranteeSpec::new(self.scores.clone(), self.prior_class.clone(), kappa, delta)
    }
}

/// One output's relative score under a fixed truth and prior.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelativeScoreSample {
    pub output: usize,
    pub label: String,
    pub delta_s: ExtendedReal,
    pub prob: f64,
}

/// `Δ_S(Q, t, x) = S(Q, x) − S(Q_t, x)`.
///
/// For the log score a prior without mass on `x` gives `∞ − ∞ = 0` whatever
/// is observed, so no conditioning is attempted.
pub fn relative_score<S: Score + ?Sized>(
    score: &S,
    prior: &FiniteBelief,
    mech: &FiniteMechanism,
    output: usize,
    dataset: &Dataset,
) -> Result<ExtendedReal> {
    if score.zero_mass_is_uninformative() && prior.mass_at(dataset) == 0.0 {
        return Ok(ExtendedReal::ZERO);
    }
    let before = score.score_finite(prior, dataset)?;
    let posterior = posterior_update(prior, mech, output)?;
    Ok(before.minus(score.score_finite(&posterior, dataset)?))
}

/// The law of `Δ_S(Q, T, x)` for `T ∼ m(x, ·)`, over outputs of positive mass.
pub fn relative_score_distribution<S: Score + ?Sized>(
    score: &S,
    prior: &FiniteBelief,
    mech: &FiniteMechanism,
    truth: usize,
) -> Result<Vec<RelativeScoreSample>> {
    let dataset = &mech.universe()[truth];
    let uninformative = score.zero_mass_is_uninformative() && prior.mass_at(dataset) == 0.0;
    let before = if uninformative { ExtendedReal::ZERO } else { score.score_finite(prior, dataset)? };
    let mut out = Vec::new();
    for (t, &p) in mech.row(truth).iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let delta_s = if uninformative {
            ExtendedReal::ZERO
        } else {
            let posterior = posterior_update(prior, mech, t)?;
            before.minus(score.score_finite(&posterior, dataset)?)
        };
        out.push(RelativeScoreSample { output: t, label: mech.alphabet()[t].clone(), delta_s, prob: p });
    }
    Ok(out)
}

/// `Pr_{T∼m(x,·)}[Δ_S(Q, T, x) ≤ κ]`, exactly.
pub fn tail_probability<S: Score + ?Sized>(
    score: &S,
    prior: &FiniteBelief,
    mech: &FiniteMechanism,
    truth: usize,
    kappa: f64,
) -> Result<f64> {
    Ok(relative_score_distribution(score, prior, mech, truth)?
        .iter()
        .filter(|s| within_kappa(s.delta_s, kappa))
        .map(|s| s.prob)
        .sum())
}

/// The `w → 0` limit of the log-score relative scores for the two-point prior
/// on `(truth, alternative)`: `Δ = ln m(x, t) − ln m(x′, t)`.
pub fn limit_distribution(mech: &FiniteMechanism, truth: usize, alternative: usize) -> Vec<RelativeScoreSample> {
    mech.row(truth)
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(t, &p)| {
            let q = mech.prob(alternative, t);
            let delta_s = if q > 0.0 { ExtendedReal::Finite(p.ln() - q.ln()) } else { ExtendedReal::PosInf };
            RelativeScoreSample { output: t, label: mech.alphabet()[t].clone(), delta_s, prob: p }
        })
        .collect()
}

/// Mass of outputs satisfying the limit event `m(x,t) ≤ e^κ m(x′,t)`.
pub fn limit_tail(mech: &FiniteMechanism, truth: usize, alternative: usize, kappa: f64) -> f64 {
    mech.row(truth)
        .iter()
        .enumerate()
        .filter(|(t, &p)| p > 0.0 && ratio_within(p, mech.prob(alternative, *t), kappa))
        .map(|(_, &p)| p)
        .sum()
}

/// How a certificate was obtained.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Method {
    /// Exhaustive enumeration; two-point classes via their analytic limit.
    Exact,
    /// Exhaustive over outputs, but the two-point infimum only over a w-grid.
    Grid {
        points: usize,
    },
    MonteCarlo {
        samples: usize,
        seed: u64,
    },
}

/// Strength of a verdict. Only exhaustive evaluations certify; sampled or
/// gridded evaluations can only support.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Certified,
    Refuted,
    Supported,
}

/// The first failing `(score, dataset, prior)` triple, in enumeration order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub score: String,
    pub dataset: Dataset,
    pub prior: String,
    pub tail: f64,
    pub violating_outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificationReport {
    pub verdict: bool,
    pub status: Status,
    /// Worst-case tail probability over all evaluations.
    pub attained: f64,
    /// `1 − attained`: the smallest δ the mechanism satisfies at this κ.
    pub attained_delta: f64,
    pub kappa: f64,
    pub delta: f64,
    pub witness: Option<Witness>,
    pub method: Method,
    pub evaluations: usize,
    pub tool_version: String,
}

/// A single `(score, dataset, prior)` evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub score: usize,
    pub dataset: usize,
    pub prior: String,
    /// Prior mass on the truth for two-point priors; `0` marks the limit.
    pub w: Option<f64>,
    pub tail: f64,
    pub samples: Vec<RelativeScoreSample>,
}

impl Evaluation {
    pub fn violating(&self, kappa: f64) -> Vec<usize> {
        self.samples.iter().filter(|s| !within_kappa(s.delta_s, kappa)).map(|s| s.output).collect()
    }
}

fn evaluate_case(
    score: &ScoringRule,
    case: &PriorCase,
    mech: &FiniteMechanism,
    truth: usize,
    kappa: f64,
) -> Result<(f64, Vec<RelativeScoreSample>)> {
    match case {
        PriorCase::Belief { belief, .. } => {
            let samples = relative_score_distribution(score, belief, mech, truth)?;
            let tail = samples.iter().filter(|s| within_kappa(s.delta_s, kappa)).map(|s| s.prob).sum();
            Ok((tail, samples))
        }
        PriorCase::Limit { alternative, .. } => {
            Ok((limit_tail(mech, truth, *alternative, kappa), limit_distribution(mech, truth, *alternative)))
        }
    }
}

/// Certifies `spec` for a finite mechanism.
pub fn certify_pp(mech: &FiniteMechanism, spec: &GuaranteeSpec) -> Result<CertificationReport> {
    certify_pp_detailed(mech, spec).map(|(report, _)| report)
}

/// [`certify_pp`] plus every evaluation, in `(score, dataset, prior)` order.
pub fn certify_pp_detailed(
    mech: &FiniteMechanism,
    spec: &GuaranteeSpec,
) -> Result<(CertificationReport, Vec<Evaluation>)> {
    spec.validate()?;
    let universe = mech.universe();
    let cases: Vec<Vec<PriorCase>> =
        (0..universe.len()).map(|z| enumerate_priors(&spec.prior_class, universe, z)).collect::<Result<_>>()?;

    let mut tasks = Vec::new();
    let mut gridded = false;
    for (s, score) in spec.scores.iter().enumerate() {
        let exact_limit = score.zero_mass_is_uninformative();
        for (z, list) in cases.iter().enumerate() {
            for case in list {
                if matches!(case, PriorCase::Limit { .. }) && !exact_limit {
                    gridded = true;
                    continue;
                }
                tasks.push((s, z, case));
            }
        }
    }

    let results: Vec<Result<Evaluation>> = tasks
        .par_iter()
        .map(|&(s, z, case)| {
            let (tail, samples) = evaluate_case(&spec.scores[s], case, mech, z, spec.kappa)?;
            Ok(Evaluation { score: s, dataset: z, prior: case.label().to_string(), w: case.w(), tail, samples })
        })
        .collect();
    let evaluations = results.into_iter().collect::<Result<Vec<_>>>()?;

    let required = 1.0 - spec.delta;
    let attained = evaluations.iter().map(|e| e.tail).fold(1.0, f64::min);
    let witness = evaluations.iter().find(|e| e.tail < required - VERDICT_TOL).map(|e| Witness {
        score: spec.scores[e.score].name(),
        dataset: universe[e.dataset].clone(),
        prior: e.prior.clone(),
        tail: e.tail,
        violating_outputs: e.violating(spec.kappa).into_iter().map(|t| mech.alphabet()[t].clone()).collect(),
    });
    let verdict = witness.is_none();
    let method = match &spec.prior_class {
        PriorClass::NeighborTwoPoint { grid, .. } if gridded => Method::Grid { points: grid.points },
        _ => Method::Exact,
    };
    let status = match (verdict, &method) {
        (false, _) => Status::Refuted,
        (true, Method::Exact) => Status::Certified,
        (true, _) => Status::Supported,
    };
    let report = CertificationReport {
        verdict,
        status,
        attained,
        attained_delta: (1.0 - attained).max(0.0),
        kappa: spec.kappa,
        delta: spec.delta,
        witness,
        method,
        evaluations: evaluations.len(),
        tool_version: TOOL_VERSION.to_string(),
    };
    Ok((report, evaluations))
}
