//! Probabilistic differential privacy and its equivalence with the log-score
//! guarantee over two-point neighbour priors.

use serde::Serialize;

use super::{
    certify_pp, limit_tail, relative_score_distribution, within_kappa, CertificationReport, GuaranteeSpec, PriorClass,
    WGrid, TOOL_VERSION, VERDICT_TOL,
};
use crate::beliefs::{Dataset, TwoPointPrior};
use crate::error::{Error, Result};
use crate::mechanisms::{FiniteMechanism, NeighborRelation};
use crate::scores::ScoringRule;

/// Relative slack on the likelihood-ratio bound.
pub const RATIO_TOL: f64 = 1e-12;

/// `m_x ≤ e^ε m_x′`, with a relative slack of `1e-12`. A zero `m_x′` admits
/// only a zero `m_x`.
pub fn ratio_within(m_x: f64, m_x_prime: f64, eps: f64) -> bool {
    if m_x <= 0.0 {
        return true;
    }
    if m_x_prime <= 0.0 {
        return false;
    }
    m_x <= eps.exp() * m_x_prime * (1.0 + RATIO_TOL)
}

/// The worst ordered pair: its violation mass and the violating outputs.
pub fn pdp_attained(
    mech: &FiniteMechanism,
    pairs: &[(usize, usize)],
    eps: f64,
) -> (f64, Option<(usize, usize, Vec<usize>)>) {
    let mut best = (0.0, None);
    for &(x, xp) in pairs {
        let outputs: Vec<usize> =
            (0..mech.alphabet().len()).filter(|&t| !ratio_within(mech.prob(x, t), mech.prob(xp, t), eps)).collect();
        let mass: f64 = outputs.iter().map(|&t| mech.prob(x, t)).sum();
        if mass > best.0 {
            best = (mass, Some((x, xp, outputs)));
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PdpWitness {
    pub x: Dataset,
    pub x_prime: Dataset,
    pub outputs: Vec<String>,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PdpReport {
    pub eps: f64,
    pub attained_delta: f64,
    pub target_delta: Option<f64>,
    pub verdict: Option<bool>,
    pub witness: Option<PdpWitness>,
    pub pairs: usize,
    pub tool_version: String,
}

/// Exact attained δ at level ε over all ordered neighbour pairs, and a
/// verdict when a target δ is given.
pub fn certify_pdp(
    mech: &FiniteMechanism,
    neighbors: &NeighborRelation,
    eps: f64,
    target_delta: Option<f64>,
) -> Result<PdpReport> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::InvalidInput(format!("eps must be ≥ 0, got {eps}")));
    }
    if let Some(d) = target_delta {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::InvalidInput(format!("delta must lie in [0, 1], got {d}")));
        }
    }
    let universe = mech.universe();
    let pairs = neighbors.ordered_pairs(universe)?;
    let (attained, worst) = pdp_attained(mech, &pairs, eps);
    let witness = worst.map(|(x, xp, outputs)| PdpWitness {
        x: universe[x].clone(),
        x_prime: universe[xp].clone(),
        outputs: outputs.iter().map(|&t| mech.alphabet()[t].clone()).collect(),
        mass: attained,
    });
    Ok(PdpReport {
        eps,
        attained_delta: attained,
        target_delta,
        verdict: target_delta.map(|d| attained <= d + VERDICT_TOL),
        witness,
        pairs: pairs.len(),
        tool_version: TOOL_VERSION.to_string(),
    })
}

/// Worst-case log-score tail as a function of the two-point weight `w` on
/// the truth, with the `w → 0` limit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoPointProfile {
    pub weights: Vec<f64>,
    pub tails: Vec<f64>,
    pub limit: f64,
}

impl TwoPointProfile {
    /// Whether the tail never increases as `w` decreases towards the limit.
    pub fn is_monotone(&self) -> bool {
        self.tails.windows(2).all(|p| p[0] <= p[1] + VERDICT_TOL)
            && self.tails.iter().all(|&t| self.limit <= t + VERDICT_TOL)
    }

    pub fn verdicts(&self, delta: f64) -> Vec<bool> {
        self.tails.iter().map(|&t| t >= 1.0 - delta - VERDICT_TOL).collect()
    }
}

pub fn two_point_tail_profile(
    mech: &FiniteMechanism,
    neighbors: &NeighborRelation,
    kappa: f64,
    grid: &WGrid,
) -> Result<TwoPointProfile> {
    grid.validate()?;
    let universe = mech.universe();
    let pairs = neighbors.ordered_pairs(universe)?;
    let weights = grid.weights();
    let mut tails = Vec::with_capacity(weights.len());
    for &w in &weights {
        let mut worst = 1.0f64;
        for &(x, xp) in &pairs {
            let prior = TwoPointPrior::new(universe[x].clone(), universe[xp].clone(), w)?.to_belief();
            let tail: f64 = relative_score_distribution(&ScoringRule::NegLogProb, &prior, mech, x)?
                .iter()
                .filter(|s| within_kappa(s.delta_s, kappa))
                .map(|s| s.prob)
                .sum();
            worst = worst.min(tail);
        }
        tails.push(worst);
    }
    let limit = pairs.iter().map(|&(x, xp)| limit_tail(mech, x, xp, kappa)).fold(1.0, f64::min);
    Ok(TwoPointProfile { weights, tails, limit })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub eps: f64,
    pub delta: f64,
    pub pdp: PdpReport,
    pub pp: CertificationReport,
    pub profile: TwoPointProfile,
    pub agree: bool,
}

/// Certifies `(ε, δ)`-PDP and the log-score two-point guarantee at `κ = ε`
/// independently, and fails unless the verdicts agree and the two-point
/// tails decrease monotonically towards the limit.
pub fn check_pdp_pp_equivalence(
    mech: &FiniteMechanism,
    neighbors: &NeighborRelation,
    eps: f64,
    delta: f64,
    grid: &WGrid,
) -> Result<EquivalenceReport> {
    let pdp = certify_pdp(mech, neighbors, eps, Some(delta))?;
    let spec = GuaranteeSpec::new(
        vec![ScoringRule::NegLogProb],
        PriorClass::NeighborTwoPoint { neighbors: neighbors.clone(), grid: *grid, truth_only: true },
        eps,
        delta,
    )?;
    let pp = certify_pp(mech, &spec)?;
    let profile = two_point_tail_profile(mech, neighbors, eps, grid)?;
    if !profile.is_monotone() {
        return Err(Error::EquivalenceViolation(format!(
            "two-point tails are not monotone in w: {:?} with limit {}",
            profile.tails, profile.limit
        )));
    }
    let agree = pdp.verdict == Some(pp.verdict);
    if !agree {
        return Err(Error::EquivalenceViolation(format!(
            "at eps={eps}, delta={delta}: PDP attained {} ({}), two-point tail {} ({})",
            pdp.attained_delta,
            if pdp.verdict == Some(true) { "pass" } else { "fail" },
            pp.attained,
            if pp.verdict { "pass" } else { "fail" },
        )));
    }
    Ok(EquivalenceReport { eps, delta, pdp, pp, profile, agree })
}
