//! Post-processing: Receiver applying a data-independent kernel to what it
//! saw is harmless; Sender filtering the release before it is sent is not.

use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{certify_pdp, certify_pp_detailed, CertificationReport, Evaluation, GuaranteeSpec};
use crate::beliefs::Dataset;
use crate::error::{Error, Result};
use crate::exact::{ratio, ExactValue, RationalKernel};
use crate::extended::ExtendedReal;
use crate::mechanisms::{chain, tensor, FiniteMechanism, NeighborRelation, StageKernel};

/// Entry-wise agreement required between the two relative-score laws.
pub const MULTISET_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReceiverReport {
    pub evaluations: usize,
    /// Largest `|Δ_{M⊗K}(t1, t2) − Δ_M(t1)|`; `inf` if an infinity is unmatched.
    pub max_score_gap: f64,
    /// Largest `|Σ_t2 P(t1, t2) − P(t1)|`.
    pub max_mass_gap: f64,
    pub original: CertificationReport,
    pub processed: CertificationReport,
    pub equal: bool,
}

/// Compares the relative-score laws of `M` and `M ⊗ K` for every
/// `(score, dataset, prior)` of `spec`, and their verdicts.
pub fn check_receiver_postprocessing(
    m: &FiniteMechanism,
    k: &StageKernel,
    spec: &GuaranteeSpec,
) -> Result<ReceiverReport> {
    if !k.is_data_independent() {
        return Err(Error::StructuralViolation(
            "receiver post-processing kernel must not depend on the dataset".into(),
        ));
    }
    let mk = tensor(m, k)?;
    let (original, base) = certify_pp_detailed(m, spec)?;
    let (processed, post) = certify_pp_detailed(&mk, spec)?;
    if base.len() != post.len() {
        return Err(Error::IndexMismatch("evaluation lists differ in length".into()));
    }
    let width = k.alphabet().len();
    let mut max_score_gap = 0.0f64;
    let mut max_mass_gap = 0.0f64;
    for (a, b) in base.iter().zip(&post) {
        let (s, p) = compare(a, b, width);
        max_score_gap = max_score_gap.max(s);
        max_mass_gap = max_mass_gap.max(p);
    }
    let equal = max_score_gap <= MULTISET_TOL && max_mass_gap <= MULTISET_TOL && original.verdict == processed.verdict;
    Ok(ReceiverReport { evaluations: base.len(), max_score_gap, max_mass_gap, original, processed, equal })
}

fn compare(base: &Evaluation, post: &Evaluation, width: usize) -> (f64, f64) {
    let mut score_gap = 0.0f64;
    let mut mass = vec![0.0; base.samples.len()];
    for s in &post.samples {
        let t1 = s.output / width;
        let Some(k) = base.samples.iter().position(|b| b.output == t1) else {
            return (f64::INFINITY, f64::INFINITY);
        };
        mass[k] += s.prob;
        let gap = match (base.samples[k].delta_s, s.delta_s) {
            (ExtendedReal::Finite(x), ExtendedReal::Finite(y)) => (x - y).abs(),
            (x, y) if x == y => 0.0,
            _ => f64::INFINITY,
        };
        score_gap = score_gap.max(gap);
    }
    let mass_gap = base.samples.iter().zip(&mass).map(|(b, m)| (b.prob - m).abs()).fold(0.0, f64::max);
    (score_gap, mass_gap)
}

/// Shape of the candidate post-processing kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// Deterministic maps merging outputs.
    Merge,
    /// Random rational stochastic matrices.
    Random,
    /// Half merges, half random kernels.
    Mixed,
    /// The identity, which can never produce a witness.
    Identity,
}

/// Search space for sender post-processing counterexamples.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchBounds {
    pub max_universe: usize,
    pub max_alphabet: usize,
    /// Kernel entries are multiples of `1/denominator`.
    pub denominator: i64,
    /// Candidate values of `e^ε`, as `(numerator, denominator)`.
    pub ratios: Vec<(i64, i64)>,
    pub kernels: KernelFamily,
}

impl Default for SearchBounds {
    fn default() -> Self {
        SearchBounds {
            max_universe: 3,
            max_alphabet: 4,
            denominator: 20,
            ratios: vec![(2, 1), (3, 1), (3, 2)],
            kernels: KernelFamily::Mixed,
        }
    }
}

impl SearchBounds {
    fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.max_universe) || !(2..=4).contains(&self.max_alphabet) {
            return Err(Error::Precondition(format!(
                "search bounds must satisfy 2 ≤ universe ≤ 3 and 2 ≤ alphabet ≤ 4, got {} and {}",
                self.max_universe, self.max_alphabet
            )));
        }
        if self.denominator < 1 || self.ratios.is_empty() || self.ratios.iter().any(|&(p, q)| q < 1 || p < q) {
            return Err(Error::Precondition("denominator must be ≥ 1 and every ratio ≥ 1".into()));
        }
        Ok(())
    }
}

/// `M` passes PDP at `(ε, δ)` while `M` chained through `K` fails.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SenderWitness {
    pub mechanism: FiniteMechanism,
    pub kernel: FiniteMechanism,
    pub chained: FiniteMechanism,
    pub eps: f64,
    /// `e^ε`, exactly.
    pub ratio: String,
    pub delta: ExactValue,
    pub chained_delta: ExactValue,
    pub candidates: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum SearchOutcome {
    Found(Box<SenderWitness>),
    Exhausted { candidates: u64 },
}

fn composition<R: Rng>(rng: &mut R, parts: usize, total: i64) -> Vec<i64> {
    // Sorted cut points of a random multiset over {0, …, total}.
    let mut cuts: Vec<i64> = (0..parts - 1).map(|_| rng.gen_range(0..=total)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(total - prev);
    out
}

fn random_kernel<R: Rng>(rng: &mut R, rows: usize, cols: usize, denom: i64) -> Result<RationalKernel> {
    let counts: Vec<Vec<i64>> = (0..rows).map(|_| composition(rng, cols, denom)).collect();
    RationalKernel::from_counts(&counts, denom)
}

fn candidate_post<R: Rng>(
    rng: &mut R,
    family: KernelFamily,
    a: usize,
    bounds: &SearchBounds,
) -> Result<RationalKernel> {
    let merge = match family {
        KernelFamily::Identity => return RationalKernel::deterministic(&(0..a).collect::<Vec<_>>(), a),
        KernelFamily::Merge => true,
        KernelFamily::Random => false,
        KernelFamily::Mixed => rng.gen_bool(0.5),
    };
    if merge {
        let b = rng.gen_range(1..a.max(2));
        let map: Vec<usize> = (0..a).map(|_| rng.gen_range(0..b)).collect();
        RationalKernel::deterministic(&map, b)
    } else {
        let b = rng.gen_range(2..=bounds.max_alphabet);
        random_kernel(rng, a, b, bounds.denominator)
    }
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{k}")).collect()
}

/// Random search for `(M, K, ε, δ)` with `M` satisfying `(ε, δ)`-PDP and
/// `K ∘ M` violating it, under the complete neighbour relation.
///
/// Candidates are judged in exact rational arithmetic with `e^ε` rational,
/// then re-verified with the floating-point certifier at `ε = ln r`.
pub fn search_sender_postprocessing_counterexample(
    bounds: &SearchBounds,
    seed: u64,
    budget: u64,
) -> Result<SearchOutcome> {
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for candidate in 1..=budget {
        let u = rng.gen_range(2..=bounds.max_universe);
        let a = rng.gen_range(2..=bounds.max_alphabet);
        let (p, q) = bounds.ratios[rng.gen_range(0..bounds.ratios.len())];
        let r = ratio(p, q);
        let m = random_kernel(&mut rng, u, a, bounds.denominator)?;
        let k = candidate_post(&mut rng, bounds.kernels, a, bounds)?;
        let pairs: Vec<(usize, usize)> =
            (0..u).flat_map(|x| (0..u).filter(move |&y| y != x).map(move |y| (x, y))).collect();
        let before = m.pdp_attained(&pairs, &r);
        let mk = m.chain(&k)?;
        let after = mk.pdp_attained(&pairs, &r);
        if after.delta <= before.delta {
            continue;
        }
        if let Some(w) = verify(&m, &k, &mk, &r, &before.delta, &after.delta, candidate)? {
            return Ok(SearchOutcome::Found(Box::new(w)));
        }
    }
    Ok(SearchOutcome::Exhausted { candidates: budget })
}

fn verify(
    m: &RationalKernel,
    k: &RationalKernel,
    mk: &RationalKernel,
    r: &BigRational,
    delta: &BigRational,
    chained_delta: &BigRational,
    candidates: u64,
) -> Result<Option<SenderWitness>> {
    let universe: Vec<Dataset> = (0..m.height()).map(|x| Dataset::scalar(x as f64)).collect();
    let outputs = labels("t", m.width());
    let post_outputs = labels("s", k.width());
    let mechanism = m.to_mechanism(universe.clone(), outputs.clone())?;
    let chained = mk.to_mechanism(universe.clone(), post_outputs.clone())?;
    let kernel_universe: Vec<Dataset> = (0..k.height()).map(|t| Dataset::scalar(t as f64)).collect();
    let kernel = k.to_mechanism(kernel_universe, post_outputs)?;
    // The relabelled kernel viewed as a data-independent second stage must
    // reproduce the exact chain.
    let stage =
        StageKernel::data_independent(universe.clone(), outputs, kernel.alphabet().to_vec(), kernel.kernel().to_vec())?;
    let via_floats = chain(&mechanism, &stage, true)?;
    if via_floats.kernel().iter().flatten().zip(chained.kernel().iter().flatten()).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Ok(None);
    }

    let eps = r.to_f64().unwrap_or(f64::NAN).ln();
    let d = delta.to_f64().unwrap_or(f64::NAN);
    let neighbors = NeighborRelation::complete(&universe);
    let first = certify_pdp(&mechanism, &neighbors, eps, Some(d))?;
    let second = certify_pdp(&chained, &neighbors, eps, Some(d))?;
    if first.verdict != Some(true) || second.verdict != Some(false) {
        return Ok(None);
    }
    Ok(Some(SenderWitness {
        mechanism,
        kernel,
        chained,
        eps,
        ratio: r.to_string(),
        delta: delta.into(),
        chained_delta: chained_delta.into(),
        candidates,
    }))
}
