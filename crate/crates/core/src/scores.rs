//! Privacy functions, Bayes acts and the proper scoring rules they induce.
//!
//! Scores are negatively orientated: a lower `S(P, x)` means the belief `P`
//! predicts the true dataset `x` better, i.e. Sender has less privacy.

use serde::{Deserialize, Serialize};

use crate::beliefs::{Belief, Dataset, FiniteBelief, GaussianBelief};
use crate::error::{Error, Result};
use crate::extended::ExtendedReal;

/// Slack allowed when testing `S(Q, Q) ≤ S(P, Q)`.
pub const PROPRIETY_TOL: f64 = 1e-9;
/// Two expected losses closer than this (relative) are treated as tied.
const TIE_TOL: f64 = 1e-14;
/// Window membership slack for interval scores.
const WINDOW_TOL: f64 = 1e-12;

/// A scoring rule evaluated on beliefs and datasets.
pub trait Score {
    fn name(&self) -> String;

    fn score_finite(&self, belief: &FiniteBelief, x: &Dataset) -> Result<ExtendedReal>;

    fn score_gaussian(&self, _belief: &GaussianBelief, _x: &Dataset) -> Result<ExtendedReal> {
        Err(Error::IncompatibleBelief(format!("{} is not defined for Gaussian beliefs", self.name())))
    }

    /// Expected score under a Gaussian truth, when available in closed form.
    fn expected_under_gaussian(&self, _predict: &Belief, _truth: &GaussianBelief) -> Result<ExtendedReal> {
        Err(Error::IncompatibleBelief(format!("{} has no expected score under a Gaussian truth", self.name())))
    }

    /// Whether a prior without mass on the truth yields a zero relative score
    /// without conditioning (the log-score convention).
    fn zero_mass_is_uninformative(&self) -> bool {
        false
    }

    fn score(&self, belief: &Belief, x: &Dataset) -> Result<ExtendedReal> {
        match belief {
            Belief::Finite(b) => self.score_finite(b, x),
            Belief::Gaussian(g) => self.score_gaussian(g, x),
        }
    }

    /// `S(P, Q) = E_{X∼Q}[S(P, X)]` with `0 · ∞ = 0`.
    fn expected(&self, predict: &Belief, truth: &Belief) -> Result<ExtendedReal> {
        match truth {
            Belief::Finite(q) => {
                let mut total = ExtendedReal::ZERO;
                for (x, p) in q.iter() {
                    if p > 0.0 {
                        total = total + self.score(predict, x)?.weighted(p);
                    }
                }
                Ok(total)
            }
            Belief::Gaussian(g) => self.expected_under_gaussian(predict, g),
        }
    }
}

/// The three concrete scoring rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", try_from = "RawRule", into = "RawRule")]
pub enum ScoringRule {
    /// Zero when the truth lies in the maximum-mass window of length `s`.
    Interval { s: f64 },
    /// `−log P({x})` for discrete beliefs.
    NegLogProb,
    /// Marginal Dawid–Sebastiani score on coordinate `i` (1-based).
    MarginalDss { i: usize },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
enum RawRule {
    Interval { s: f64 },
    Neglogprob,
    Dss { i: usize },
}

impl TryFrom<RawRule> for ScoringRule {
    type Error = Error;

    fn try_from(raw: RawRule) -> Result<Self> {
        let rule = match raw {
            RawRule::Interval { s } => ScoringRule::Interval { s },
            RawRule::Neglogprob => ScoringRule::NegLogProb,
            RawRule::Dss { i } => ScoringRule::MarginalDss { i },
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl From<ScoringRule> for RawRule {
    fn from(rule: ScoringRule) -> Self {
        match rule {
            ScoringRule::Interval { s } => RawRule::Interval { s },
            ScoringRule::NegLogProb => RawRule::Neglogprob,
            ScoringRule::MarginalDss { i } => RawRule::Dss { i },
        }
    }
}

impl ScoringRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            ScoringRule::Interval { s } if !(*s > 0.0 && s.is_finite()) => {
                Err(Error::InvalidInput(format!("interval length must be positive, got {s}")))
            }
            ScoringRule::MarginalDss { i } if *i == 0 => {
                Err(Error::InvalidInput("DSS coordinate index is 1-based".into()))
            }
            _ => Ok(()),
        }
    }

    /// Negative log-probability scores are the only strictly proper rule here.
    pub fn is_strictly_proper(&self) -> bool {
        matches!(self, ScoringRule::NegLogProb)
    }

    pub fn evaluate(&self, belief: &Belief, x: &Dataset) -> Result<ExtendedReal> {
        self.score(belief, x)
    }
}

fn dss(mean: f64, var: f64, x: f64, coord: usize) -> Result<ExtendedReal> {
    if !(var > 0.0) {
        return Err(Error::UndefinedMoments { coordinate: coord + 1, variance: var });
    }
    let d = x - mean;
    Ok(ExtendedReal::Finite(var.ln() + d * d / var))
}

fn coordinate_of(x: &Dataset, coord: usize) -> Result<f64> {
    x.coords()
        .get(coord)
        .copied()
        .ok_or_else(|| Error::IncompatibleBelief(format!("dataset {x} has no coordinate {}", coord + 1)))
}

impl Score for ScoringRule {
    fn name(&self) -> String {
        match self {
            ScoringRule::Interval { s } => format!("interval(s={s})"),
            ScoringRule::NegLogProb => "neglogprob".to_string(),
            ScoringRule::MarginalDss { i } => format!("dss(i={i})"),
        }
    }

    fn score_finite(&self, belief: &FiniteBelief, x: &Dataset) -> Result<ExtendedReal> {
        match self {
            ScoringRule::Interval { s } => {
                let window = interval_decision(belief, *s)?;
                let v = x.as_scalar().ok_or_else(|| {
                    Error::IncompatibleBelief(format!("interval score needs scalar datasets, got {x}"))
                })?;
                Ok(ExtendedReal::Finite(if window.contains(v) { 0.0 } else { 1.0 }))
            }
            ScoringRule::NegLogProb => {
                let mass = belief.mass_at(x);
                Ok(if mass > 0.0 { ExtendedReal::Finite(-mass.ln()) } else { ExtendedReal::PosInf })
            }
            ScoringRule::MarginalDss { i } => {
                let coord = i - 1;
                let (mean, var) = belief.moments(coord)?;
                dss(mean, var, coordinate_of(x, coord)?, coord)
            }
        }
    }

    fn score_gaussian(&self, belief: &GaussianBelief, x: &Dataset) -> Result<ExtendedReal> {
        match self {
            ScoringRule::MarginalDss { i } => {
                let coord = i - 1;
                let (mean, var) = belief.marginal(coord)?;
                dss(mean, var, coordinate_of(x, coord)?, coord)
            }
            other => Err(Error::IncompatibleBelief(format!("{} is not defined for Gaussian beliefs", other.name()))),
        }
    }

    fn expected_under_gaussian(&self, predict: &Belief, truth: &GaussianBelief) -> Result<ExtendedReal> {
        let ScoringRule::MarginalDss { i } = self else {
            return Err(Error::IncompatibleBelief(format!(
                "{} has no expected score under a Gaussian truth",
                self.name()
            )));
        };
        let coord = i - 1;
        let (mu_p, var_p) = match predict {
            Belief::Finite(b) => b.moments(coord)?,
            Belief::Gaussian(g) => g.marginal(coord)?,
        };
        if !(var_p > 0.0) {
            return Err(Error::UndefinedMoments { coordinate: *i, variance: var_p });
        }
        let (mu_q, var_q) = truth.marginal(coord)?;
        let d = mu_q - mu_p;
        Ok(ExtendedReal::Finite(var_p.ln() + (var_q + d * d) / var_p))
    }

    fn zero_mass_is_uninformative(&self) -> bool {
        matches!(self, ScoringRule::NegLogProb)
    }
}

/// The Bayes act of the interval privacy function: a closed window of length
/// `s` with maximal belief mass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalDecision {
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    pub mass: f64,
}

impl IntervalDecision {
    pub fn contains(&self, v: f64) -> bool {
        let tol = WINDOW_TOL * (1.0 + v.abs());
        v >= self.lo - tol && v <= self.hi + tol
    }
}

/// Maximum-mass window of length `s` over a finite scalar belief.
///
/// Every window is dominated by one whose left end sits on a support point,
/// so scanning windows `[z, z + s]` over support points `z` is exact. Ties go
/// to the leftmost window.
pub fn interval_decision(belief: &FiniteBelief, s: f64) -> Result<IntervalDecision> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidInput(format!("interval length must be positive, got {s}")));
    }
    let mut points: Vec<(f64, f64)> = belief
        .support()
        .map(|(z, p)| {
            z.as_scalar()
                .map(|v| (v, p))
                .ok_or_else(|| Error::IncompatibleBelief(format!("interval score needs scalar datasets, got {z}")))
        })
        .collect::<Result<_>>()?;
    points.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best: Option<(f64, f64)> = None;
    for (k, &(left, _)) in points.iter().enumerate() {
        let reach = left + s;
        let tol = WINDOW_TOL * (1.0 + reach.abs());
        let mass: f64 = points[k..].iter().take_while(|(v, _)| *v <= reach + tol).map(|(_, p)| p).sum();
        let better = match best {
            None => true,
            Some((m, _)) => mass > m + TIE_TOL,
        };
        if better {
            best = Some((mass, left));
        }
    }
    let (mass, left) = best.expect("a belief has at least one support point");
    Ok(IntervalDecision { center: left + 0.5 * s, lo: left, hi: left + s, mass })
}

/// A privacy function on a finite decision space, as a dense table
/// `rho[decision][dataset]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrivacyFunction")]
pub struct PrivacyFunction {
    decisions: Vec<String>,
    universe: Vec<Dataset>,
    rho: Vec<Vec<ExtendedReal>>,
}

#[derive(Deserialize)]
struct RawPrivacyFunction {
    decisions: Vec<String>,
    universe: Vec<Dataset>,
    rho: Vec<Vec<ExtendedReal>>,
}

impl TryFrom<RawPrivacyFunction> for PrivacyFunction {
    type Error = Error;

    fn try_from(raw: RawPrivacyFunction) -> Result<Self> {
        PrivacyFunction::new(raw.decisions, raw.universe, raw.rho)
    }
}

impl PrivacyFunction {
    pub fn new(decisions: Vec<String>, universe: Vec<Dataset>, rho: Vec<Vec<ExtendedReal>>) -> Result<Self> {
        if decisions.is_empty() {
            return Err(Error::InvalidInput("decision space is empty".into()));
        }
        if rho.len() != decisions.len() || rho.iter().any(|r| r.len() != universe.len()) {
            return Err(Error::InvalidInput(format!("privacy table must be {}x{}", decisions.len(), universe.len())));
        }
        crate::beliefs::check_distinct(&universe, "privacy function universe")?;
        Ok(PrivacyFunction { decisions, universe, rho })
    }

    /// Builds a finite table from real values.
    pub fn from_table(decisions: Vec<String>, universe: Vec<Dataset>, rho: Vec<Vec<f64>>) -> Result<Self> {
        let rho = rho.into_iter().map(|r| r.into_iter().map(ExtendedReal::from_f64).collect()).collect();
        PrivacyFunction::new(decisions, universe, rho)
    }

    pub fn decisions(&self) -> &[String] {
        &self.decisions
    }

    pub fn universe(&self) -> &[Dataset] {
        &self.universe
    }

    pub fn value(&self, decision: usize, dataset: usize) -> ExtendedReal {
        self.rho[decision][dataset]
    }

    /// Adds `shift[x]` to every decision's value at dataset `x`.
    pub fn shifted(&self, shift: &[f64]) -> Result<PrivacyFunction> {
        if shift.len() != self.universe.len() {
            return Err(Error::IndexMismatch("shift must have one entry per dataset".into()));
        }
        let rho = self
            .rho
            .iter()
            .map(|r| r.iter().zip(shift).map(|(v, c)| *v + ExtendedReal::Finite(*c)).collect())
            .collect();
        PrivacyFunction::new(self.decisions.clone(), self.universe.clone(), rho)
    }

    fn dataset_index(&self, x: &Dataset) -> Result<usize> {
        self.universe
            .iter()
            .position(|z| z == x)
            .ok_or_else(|| Error::IndexMismatch(format!("dataset {x} is outside the privacy function's universe")))
    }

    /// `E_{X∼P}[ρ(d, X)]` for every decision `d`.
    pub fn expected_values(&self, belief: &FiniteBelief) -> Result<Vec<ExtendedReal>> {
        let columns: Vec<(usize, f64)> =
            belief.support().map(|(z, p)| self.dataset_index(z).map(|k| (k, p))).collect::<Result<_>>()?;
        Ok(self.rho.iter().map(|row| columns.iter().map(|(k, p)| row[*k].weighted(*p)).sum()).collect())
    }
}

/// The Bayes act `argmin_d E_P[ρ(d, X)]`, lowest index among ties.
pub fn bayes_act(rho: &PrivacyFunction, belief: &FiniteBelief) -> Result<usize> {
    let values = rho.expected_values(belief)?;
    let best = values.iter().copied().fold(ExtendedReal::PosInf, |acc, v| if v < acc { v } else { acc });
    let tied = |v: ExtendedReal| match (v, best) {
        (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => a <= b + TIE_TOL * b.abs().max(1.0),
        (a, b) => a == b,
    };
    Ok(values.iter().position(|v| tied(*v)).expect("non-empty decision space"))
}

/// The scoring rule `S(P, x) = ρ(d^P, x)` generated by a privacy function.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivedScore {
    rho: PrivacyFunction,
}

pub fn score_from_loss(rho: &PrivacyFunction) -> DerivedScore {
    DerivedScore { rho: rho.clone() }
}

impl DerivedScore {
    pub fn privacy_function(&self) -> &PrivacyFunction {
        &self.rho
    }
}

impl Score for DerivedScore {
    fn name(&self) -> String {
        format!("bayes-act({} decisions)", self.rho.decisions.len())
    }

    fn score_finite(&self, belief: &FiniteBelief, x: &Dataset) -> Result<ExtendedReal> {
        let d = bayes_act(&self.rho, belief)?;
        Ok(self.rho.value(d, self.rho.dataset_index(x)?))
    }
}

/// The decision problem `(ℓ, family)` with `ℓ(P, x) = S(P, x)`.
pub fn loss_from_score<S: Score + ?Sized>(
    score: &S,
    family: &[FiniteBelief],
    universe: &[Dataset],
) -> Result<PrivacyFunction> {
    let decisions = (0..family.len()).map(|k| format!("P{k}")).collect();
    let rho = family
        .iter()
        .map(|p| universe.iter().map(|x| score.score_finite(p, x)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    PrivacyFunction::new(decisions, universe.to_vec(), rho)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProprietyReport {
    pub pairs: usize,
    /// Smallest `S(P, Q) − S(Q, Q)` over distinct finite pairs.
    pub min_gap: f64,
    pub strict: bool,
}

/// Checks `S(Q, Q) ≤ S(P, Q) + 1e-9` over all ordered pairs of the family,
/// and with `strict` also that equality forces `P = Q`.
pub fn propriety_check<S: Score + ?Sized>(score: &S, family: &[Belief], strict: bool) -> Result<ProprietyReport> {
    let mut min_gap = f64::INFINITY;
    let mut pairs = 0;
    for (qi, q) in family.iter().enumerate() {
        let own = score.expected(q, q)?;
        for (pi, p) in family.iter().enumerate() {
            if pi == qi {
                continue;
            }
            pairs += 1;
            let other = score.expected(p, q)?;
            let gap = other.minus(own);
            if !(gap >= ExtendedReal::Finite(-PROPRIETY_TOL)) {
                return Err(Error::PropertyViolation(format!(
                    "{}: S(Q,Q) = {own} exceeds S(P,Q) = {other} for P = #{pi}, Q = #{qi}",
                    score.name()
                )));
            }
            if let Some(g) = gap.finite() {
                if strict && g <= PROPRIETY_TOL && !p.same_distribution(q, 1e-12) {
                    return Err(Error::PropertyViolation(format!(
                        "{}: S(P,Q) = S(Q,Q) = {own} for distinct P = #{pi}, Q = #{qi}",
                        score.name()
                    )));
                }
                min_gap = min_gap.min(g);
            }
        }
    }
    Ok(ProprietyReport { pairs, min_gap, strict })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorstCaseReport {
    pub checks: usize,
    /// Largest `E_P[ρ(d^P_ℓ)] − E_P[ρ(d^P_ρ)]` observed among finite values.
    pub max_gap: f64,
}

/// Checks that acting on `ρ` itself is worst for Sender on average:
/// `E_P[ρ(d^P_ρ, X)] ≤ E_P[ρ(d^P_ℓ, X)] + 1e-12` for every `ℓ` and `P`.
pub fn worst_case_loss_check(
    rho: &PrivacyFunction,
    alt_losses: &[PrivacyFunction],
    beliefs: &[FiniteBelief],
) -> Result<WorstCaseReport> {
    for (k, l) in alt_losses.iter().enumerate() {
        if l.decisions.len() != rho.decisions.len() || l.universe != rho.universe {
            return Err(Error::IndexMismatch(format!(
                "alternative loss {k} is defined on a different decision space or universe"
            )));
        }
    }
    let mut checks = 0;
    let mut max_gap = 0.0f64;
    for (pi, p) in beliefs.iter().enumerate() {
        let values = rho.expected_values(p)?;
        let own = values[bayes_act(rho, p)?];
        for (li, l) in alt_losses.iter().enumerate() {
            checks += 1;
            let theirs = values[bayes_act(l, p)?];
            let gap = theirs.minus(own);
            if !(gap >= ExtendedReal::Finite(-1e-12)) {
                return Err(Error::PropertyViolation(format!(
                    "belief #{pi}, loss #{li}: E[ρ(d_ρ)] = {own} > E[ρ(d_ℓ)] = {theirs}"
                )));
            }
            if let Some(g) = gap.finite() {
                max_gap = max_gap.max(g);
            }
        }
    }
    Ok(WorstCaseReport { checks, max_gap })
}
