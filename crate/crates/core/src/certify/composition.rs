//! Sequential composition `M1 ⊗ M2` under a conjugate prior class.

use serde::Serialize;

use super::{certify_pp, CertificationReport, GuaranteeSpec, PriorClass, VERDICT_TOL};
use crate::beliefs::{posterior_update, FiniteBelief};
use crate::error::{Error, Result};
use crate::mechanisms::{tensor, FiniteMechanism, StageKernel};

/// Posteriors must match a class member to this accuracy.
const CLOSURE_TOL: f64 = 1e-9;

/// Checks that `class` is closed under Bayes updating by `mech`.
///
/// Explicit classes are checked by enumeration, and outputs with zero
/// evidence are rejected outright: closure that holds only off a null set
/// is not assumed. Two-point neighbour classes are closed by construction,
/// since a posterior keeps the prior's support. The gridded evaluation of
/// that class is only exact for the log score, so other scores are refused.
pub fn check_conjugate(class: &PriorClass, mech: &FiniteMechanism, scores_exact: bool) -> Result<()> {
    match class {
        PriorClass::Explicit { priors } => closed_under(priors, mech, "class"),
        PriorClass::ExplicitPerDataset { priors } => {
            for (z, list) in priors.iter().enumerate() {
                closed_under(list, mech, &format!("class for dataset {z}"))?;
            }
            Ok(())
        }
        PriorClass::NeighborTwoPoint { .. } if scores_exact => Ok(()),
        PriorClass::NeighborTwoPoint { .. } => Err(Error::UnsupportedPriorClass(
            "two-point classes are evaluated on a w-grid for this score, which is not closed under updating".into(),
        )),
        PriorClass::Gaussian { .. } => {
            Err(Error::UnsupportedPriorClass("composition is not implemented for Gaussian classes".into()))
        }
    }
}

fn closed_under(priors: &[FiniteBelief], mech: &FiniteMechanism, what: &str) -> Result<()> {
    for (k, prior) in priors.iter().enumerate() {
        for t in 0..mech.alphabet().len() {
            let posterior = match posterior_update(prior, mech, t) {
                Ok(p) => p,
                Err(Error::ZeroEvidence { output }) => {
                    return Err(Error::ConjugacyViolation(format!(
                        "{what}: output `{output}` has zero evidence under prior #{k}"
                    )))
                }
                Err(e) => return Err(e),
            };
            if !priors.iter().any(|q| same_on_union(q, &posterior)) {
                return Err(Error::ConjugacyViolation(format!(
                    "{what}: posterior of prior #{k} after output `{}` is {posterior}, which is not in the class",
                    mech.alphabet()[t]
                )));
            }
        }
    }
    Ok(())
}

fn same_on_union(a: &FiniteBelief, b: &FiniteBelief) -> bool {
    a.iter().all(|(z, p)| (p - b.mass_at(z)).abs() <= CLOSURE_TOL)
        && b.iter().all(|(z, p)| (p - a.mass_at(z)).abs() <= CLOSURE_TOL)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompositionReport {
    pub first: CertificationReport,
    /// Report for the worst first-stage output's slice.
    pub worst_slice: CertificationReport,
    pub composed: CertificationReport,
    /// `δ1* + δ2*`: attained first-stage level plus worst attained slice level.
    pub attained_bound: f64,
    /// Whether the premises hold at the requested budgets.
    pub premises: bool,
    /// `δ1 + δ2 ≥ 1`: the conclusion says nothing.
    pub vacuous: bool,
    pub holds: bool,
}

/// Certifies `M1` at `spec1`, every slice `M2(·, t1)` at `spec2`, and
/// `M1 ⊗ M2` at `(κ1 + κ2, δ1 + δ2)`.
///
/// The bound is also checked at the attained levels: the composed mechanism's
/// attained δ at `κ1 + κ2` must not exceed `δ1* + δ2*`.
pub fn check_composition(
    m1: &FiniteMechanism,
    m2: &StageKernel,
    spec1: &GuaranteeSpec,
    spec2: &GuaranteeSpec,
) -> Result<CompositionReport> {
    spec1.validate()?;
    spec2.validate()?;
    if spec1.scores != spec2.scores || spec1.prior_class != spec2.prior_class {
        return Err(Error::InvalidInput("both stages must share scores and prior class".into()));
    }
    let exact = spec1.scores.iter().all(|s| s.is_strictly_proper());
    check_conjugate(&spec1.prior_class, m1, exact)?;
    let slices: Vec<FiniteMechanism> = (0..m2.inputs().len()).map(|t| m2.slice(t)).collect::<Result<_>>()?;
    for s in &slices {
        check_conjugate(&spec2.prior_class, s, exact)?;
    }

    let composed_mech = tensor(m1, m2)?;
    let first = certify_pp(m1, spec1)?;
    let mut worst_slice: Option<CertificationReport> = None;
    for s in &slices {
        let r = certify_pp(s, spec2)?;
        if worst_slice.as_ref().is_none_or(|w| r.attained < w.attained) {
            worst_slice = Some(r);
        }
    }
    let worst_slice = worst_slice.ok_or_else(|| Error::InvalidInput("second stage has no inputs".into()))?;

    let kappa = spec1.kappa + spec2.kappa;
    let delta_sum = spec1.delta + spec2.delta;
    let vacuous = delta_sum >= 1.0;
    let composed_spec = spec1.with_budget(kappa, if vacuous { 0.0 } else { delta_sum })?;
    let composed = certify_pp(&composed_mech, &composed_spec)?;

    let attained_bound = first.attained_delta + worst_slice.attained_delta;
    let premises = first.verdict && worst_slice.verdict;
    let at_requested = !premises || vacuous || composed.verdict;
    let at_attained = composed.attained_delta <= attained_bound + VERDICT_TOL;
    Ok(CompositionReport {
        first,
        worst_slice,
        composed,
        attained_bound,
        premises,
        vacuous,
        holds: at_requested && at_attained,
    })
}
