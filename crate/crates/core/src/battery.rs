//! Randomized property battery: every structural property of the library,
//! re-checked on freshly generated instances.
//!
//! Each check draws from its own seeded stream, so a failure is reproducible
//! from the suite seed alone.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::beliefs::{
    correlation_decompose, gaussian_condition_on_average, Belief, Dataset, FiniteBelief, GaussianBelief,
    GaussianClassSpec,
};
use crate::certify::{
    certify_average_gaussian, check_composition, check_pdp_pp_equivalence, check_receiver_postprocessing, derive_seed,
    search_sender_postprocessing_counterexample, GuaranteeSpec, PriorClass, SearchBounds, SearchOutcome, WGrid,
};
use crate::error::Result;
use crate::mechanisms::{randomized_response, FiniteMechanism, NeighborRelation, StageKernel};
use crate::scores::{
    loss_from_score, propriety_check, score_from_loss, worst_case_loss_check, PrivacyFunction, Score, ScoringRule,
};

/// Random instance generators shared by the battery and the test suites.
pub mod random {
    use super::*;

    pub fn scalar_universe(k: usize) -> Vec<Dataset> {
        (0..k).map(|i| Dataset::scalar(i as f64)).collect()
    }

    /// Weights from `Exp(1)` draws, each zeroed with probability `zero_prob`
    /// (at least one entry stays positive).
    pub fn simplex<R: Rng>(rng: &mut R, k: usize, zero_prob: f64) -> Vec<f64> {
        let mut w: Vec<f64> =
            (0..k).map(|_| if rng.gen_bool(zero_prob) { 0.0 } else { -rng.gen::<f64>().max(1e-300).ln() }).collect();
        if w.iter().all(|&v| v == 0.0) {
            w[rng.gen_range(0..k)] = 1.0;
        }
        let total: f64 = w.iter().sum();
        let mut p: Vec<f64> = w.iter().map(|v| v / total).collect();
        // Land the row sum on one to the last ulp.
        let residue = 1.0 - p.iter().sum::<f64>();
        let big = (0..k).max_by(|&a, &b| p[a].total_cmp(&p[b])).expect("k ≥ 1");
        p[big] += residue;
        p
    }

    pub fn belief<R: Rng>(rng: &mut R, universe: &[Dataset], zero_prob: f64) -> FiniteBelief {
        FiniteBelief::new(universe.to_vec(), simplex(rng, universe.len(), zero_prob)).expect("valid simplex")
    }

    pub fn mechanism<R: Rng>(rng: &mut R, universe: usize, alphabet: usize, zero_prob: f64) -> FiniteMechanism {
        let kernel = (0..universe).map(|_| simplex(rng, alphabet, zero_prob)).collect();
        FiniteMechanism::new(scalar_universe(universe), (0..alphabet).map(|t| format!("t{t}")).collect(), kernel)
            .expect("valid kernel")
    }

    /// A second stage depending on both the dataset and the first output.
    pub fn stage_kernel<R: Rng>(rng: &mut R, first: &FiniteMechanism, alphabet: usize, zero_prob: f64) -> StageKernel {
        let rows = (0..first.universe().len())
            .map(|_| (0..first.alphabet().len()).map(|_| simplex(rng, alphabet, zero_prob)).collect())
            .collect();
        StageKernel::new(
            first.universe().to_vec(),
            first.alphabet().to_vec(),
            (0..alphabet).map(|t| format!("u{t}")).collect(),
            rows,
        )
        .expect("valid stage kernel")
    }

    pub fn independent_stage<R: Rng>(
        rng: &mut R,
        first: &FiniteMechanism,
        alphabet: usize,
        zero_prob: f64,
    ) -> StageKernel {
        let matrix = (0..first.alphabet().len()).map(|_| simplex(rng, alphabet, zero_prob)).collect();
        StageKernel::data_independent(
            first.universe().to_vec(),
            first.alphabet().to_vec(),
            (0..alphabet).map(|t| format!("u{t}")).collect(),
            matrix,
        )
        .expect("valid stage kernel")
    }

    /// A random connected-or-not symmetric relation; complete half the time.
    pub fn neighbors<R: Rng>(rng: &mut R, universe: &[Dataset]) -> NeighborRelation {
        if rng.gen_bool(0.5) {
            return NeighborRelation::complete(universe);
        }
        let mut pairs = Vec::new();
        for i in 0..universe.len() {
            for j in (i + 1)..universe.len() {
                if rng.gen_bool(0.6) {
                    pairs.push((universe[i].clone(), universe[j].clone()));
                }
            }
        }
        NeighborRelation::from_pairs(pairs).expect("irreflexive")
    }

    /// Entries uniform on `[0, 1)`, a quarter of them rounded to `{0, 1}` so
    /// that ties occur.
    pub fn table<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| {
                        let v: f64 = rng.gen();
                        if rng.gen_bool(0.25) {
                            v.round()
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn privacy_function<R: Rng>(rng: &mut R, decisions: usize, universe: &[Dataset]) -> PrivacyFunction {
        PrivacyFunction::from_table(
            (0..decisions).map(|d| format!("d{d}")).collect(),
            universe.to_vec(),
            table(rng, decisions, universe.len()),
        )
        .expect("valid table")
    }

    /// A random full-rank covariance: `A Aᵀ + 0.05 I` scaled per coordinate.
    pub fn covariance<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scale: Vec<f64> = (0..n).map(|_| (rng.gen_range(-1.5..1.5f64)).exp()).collect();
        let base = &a * a.transpose() + DMatrix::identity(n, n) * 0.05;
        DMatrix::from_fn(n, n, |i, j| base[(i, j)] * scale[i] * scale[j])
    }

    pub fn gaussian<R: Rng>(rng: &mut R, n: usize) -> GaussianBelief {
        let mean = nalgebra::DVector::from_fn(n, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
        GaussianBelief::new(mean, covariance(rng, n)).expect("valid Gaussian")
    }
}

/// Sizes for the battery; defaults match the documented acceptance counts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Instances for the finite checks.
    pub instances: usize,
    /// Instances for composition and receiver post-processing.
    pub pair_instances: usize,
    /// Sampled class members per Gaussian configuration.
    pub gaussian_samples: usize,
    pub search_budget: u64,
    pub grid: WGrid,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            instances: 500,
            pair_instances: 200,
            gaussian_samples: 10_000,
            search_budget: 1_000_000,
            grid: WGrid::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub instances: usize,
    pub failures: usize,
    pub runtime_ms: u128,
    /// First failure, or a notable statistic when everything passed.
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub passed: bool,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

struct Tally {
    instances: usize,
    failures: usize,
    detail: Option<String>,
}

impl Tally {
    fn new() -> Self {
        Tally { instances: 0, failures: 0, detail: None }
    }

    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.instances += 1;
        if !ok {
            self.failures += 1;
            if self.detail.is_none() {
                self.detail = Some(what());
            }
        }
    }

    fn record_result<T>(&mut self, r: Result<T>, check: impl FnOnce(&T) -> bool, label: impl Fn() -> String) {
        match r {
            Ok(v) => {
                let ok = check(&v);
                self.record(ok, &label);
            }
            Err(e) => self.record(false, || format!("{}: {e}", label())),
        }
    }
}

fn timed(name: &str, f: impl FnOnce() -> Tally) -> CheckResult {
    let start = Instant::now();
    let t = f();
    CheckResult {
        name: name.to_string(),
        passed: t.failures == 0 && t.instances > 0,
        instances: t.instances,
        failures: t.failures,
        runtime_ms: start.elapsed().as_millis(),
        detail: t.detail,
    }
}

fn rng_for(config: &SuiteConfig, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream))
}

/// Propriety of all three scores on random finite (and, for DSS, Gaussian)
/// families; strict for the log score.
pub fn check_propriety(config: &SuiteConfig) -> CheckResult {
    timed("propriety", || {
        let mut rng = rng_for(config, 1);
        let mut t = Tally::new();
        for k in 0..config.instances {
            let size = rng.gen_range(1..=6);
            let universe = random::scalar_universe(size);
            let family: Vec<Belief> = (0..4).map(|_| random::belief(&mut rng, &universe, 0.2).into()).collect();
            t.record_result(
                propriety_check(&ScoringRule::NegLogProb, &family, true),
                |_| true,
                || format!("log score, instance {k}"),
            );
            let s = [0.5, 1.0, 1.5, 2.5][rng.gen_range(0..4)];
            t.record_result(
                propriety_check(&ScoringRule::Interval { s }, &family, false),
                |_| true,
                || format!("interval(s={s}), instance {k}"),
            );
            if size >= 2 {
                let spread: Vec<Belief> = (0..4).map(|_| random::belief(&mut rng, &universe, 0.0).into()).collect();
                t.record_result(
                    propriety_check(&ScoringRule::MarginalDss { i: 1 }, &spread, false),
                    |_| true,
                    || format!("dss on finite beliefs, instance {k}"),
                );
            }
            let n = rng.gen_range(1..=3);
            let gaussians: Vec<Belief> = (0..4).map(|_| random::gaussian(&mut rng, n).into()).collect();
            let i = rng.gen_range(1..=n);
            t.record_result(
                propriety_check(&ScoringRule::MarginalDss { i }, &gaussians, false),
                |_| true,
                || format!("dss on Gaussians, instance {k}"),
            );
        }
        t
    })
}

/// Scores generated from random privacy tables are proper, and the
/// score → loss → score round trip is the identity.
pub fn check_score_generation(config: &SuiteConfig) -> CheckResult {
    timed("score-generation", || {
        let mut rng = rng_for(config, 2);
        let mut t = Tally::new();
        for k in 0..config.instances {
            let universe = random::scalar_universe(rng.gen_range(1..=6));
            let d = rng.gen_range(1..=6);
            let rho = random::privacy_function(&mut rng, d, &universe);
            let derived = score_from_loss(&rho);
            let family: Vec<Belief> = (0..6).map(|_| random::belief(&mut rng, &universe, 0.3).into()).collect();
            t.record_result(
                propriety_check(&derived, &family, false),
                |_| true,
                || format!("derived score, table {k}"),
            );

            let beliefs: Vec<FiniteBelief> = (0..4).map(|_| random::belief(&mut rng, &universe, 0.3)).collect();
            let round_trip = loss_from_score(&ScoringRule::NegLogProb, &beliefs, &universe).and_then(|loss| {
                let back = score_from_loss(&loss);
                let mut worst = 0.0f64;
                for p in &beliefs {
                    for x in &universe {
                        let a = back.score_finite(p, x)?;
                        let b = ScoringRule::NegLogProb.score_finite(p, x)?;
                        worst = worst.max(if a.approx_eq(b, 0.0) { 0.0 } else { (a.to_f64() - b.to_f64()).abs() });
                    }
                }
                Ok(worst)
            });
            t.record_result(round_trip, |w| *w <= 1e-9, || format!("round trip, family {k}"));
        }
        t
    })
}

/// Acting on `ρ` is never better for Sender, on average, than acting on any
/// other loss.
pub fn check_worst_case_loss(config: &SuiteConfig) -> CheckResult {
    timed("worst-case-loss", || {
        let mut rng = rng_for(config, 3);
        let mut t = Tally::new();
        for k in 0..config.instances {
            let universe = random::scalar_universe(rng.gen_range(1..=6));
            let d = rng.gen_range(1..=6);
            let rho = random::privacy_function(&mut rng, d, &universe);
            let alt = random::privacy_function(&mut rng, d, &universe);
            let p = random::belief(&mut rng, &universe, 0.2);
            t.record_result(worst_case_loss_check(&rho, &[alt], &[p]), |_| true, || format!("triple {k}"));
        }
        t
    })
}

pub const EPS_GRID: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 4.0];
pub const DELTA_GRID: [f64; 5] = [0.0, 0.05, 0.1, 0.3, 0.6];

/// PDP and the log-score two-point guarantee agree on a 5×5 `(ε, δ)` grid;
/// every fifth mechanism carries structural zeros.
pub fn check_equivalence(config: &SuiteConfig) -> CheckResult {
    timed("pdp-pp-equivalence", || {
        let mut rng = rng_for(config, 4);
        let mut t = Tally::new();
        for k in 0..config.instances {
            let zeros = if k % 5 == 0 { 0.35 } else { 0.0 };
            let (u, a) = (rng.gen_range(2..=4), rng.gen_range(2..=5));
            let m = random::mechanism(&mut rng, u, a, zeros);
            let n = random::neighbors(&mut rng, m.universe());
            for &eps in &EPS_GRID {
                for &delta in &DELTA_GRID {
                    t.record_result(
                        check_pdp_pp_equivalence(&m, &n, eps, delta, &config.grid),
                        |r| r.agree,
                        || format!("mechanism {k} at eps={eps}, delta={delta}"),
                    );
                }
            }
        }
        t
    })
}

/// The composed mechanism never exceeds the summed budget.
pub fn check_composition_bound(config: &SuiteConfig) -> CheckResult {
    timed("composition", || {
        let mut rng = rng_for(config, 5);
        let mut t = Tally::new();
        for k in 0..config.pair_instances {
            let (u, a, b) = (rng.gen_range(2..=3), rng.gen_range(2..=3), rng.gen_range(2..=3));
            let m1 = random::mechanism(&mut rng, u, a, 0.1);
            let m2 = random::stage_kernel(&mut rng, &m1, b, 0.1);
            let n = NeighborRelation::complete(m1.universe());
            let (k1, k2) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
            let (d1, d2) = (rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5));
            let r = GuaranteeSpec::log_two_point(n.clone(), k1, d1)
                .and_then(|s1| Ok((s1, GuaranteeSpec::log_two_point(n, k2, d2)?)))
                .and_then(|(s1, s2)| check_composition(&m1, &m2, &s1, &s2));
            t.record_result(r, |r| r.holds, || format!("instance {k}"));
        }
        let eps = 0.7;
        let rr = randomized_response(eps, 2).expect("valid");
        let r = GuaranteeSpec::log_two_point(NeighborRelation::complete(rr.universe()), eps, 0.0).and_then(|s| {
            let second = StageKernel::broadcast(&rr, rr.alphabet().to_vec())?;
            check_composition(&rr, &second, &s, &s)
        });
        t.record_result(r, |r| r.holds && r.composed.verdict, || "independent randomized response".into());
        t
    })
}

/// Tensoring with a data-independent kernel preserves the relative-score law.
pub fn check_receiver(config: &SuiteConfig) -> CheckResult {
    timed("receiver-post-processing", || {
        let mut rng = rng_for(config, 6);
        let mut t = Tally::new();
        for k in 0..config.pair_instances {
            let (u, a, b) = (rng.gen_range(2..=4), rng.gen_range(2..=4), rng.gen_range(1..=3));
            let m = random::mechanism(&mut rng, u, a, 0.15);
            let kernel = random::independent_stage(&mut rng, &m, b, 0.2);
            let kappa = rng.gen_range(0.0..2.0);
            let delta = rng.gen_range(0.0..0.5);
            let spec = if k % 2 == 0 {
                GuaranteeSpec::log_two_point(random::neighbors(&mut rng, m.universe()), kappa, delta)
            } else {
                let priors = (0..3).map(|_| random::belief(&mut rng, m.universe(), 0.0)).collect();
                GuaranteeSpec::new(
                    vec![ScoringRule::NegLogProb, ScoringRule::Interval { s: 1.0 }],
                    PriorClass::Explicit { priors },
                    kappa,
                    delta,
                )
            };
            let r = spec.and_then(|s| check_receiver_postprocessing(&m, &kernel, &s));
            t.record_result(r, |r| r.equal, || format!("instance {k}"));
        }
        t
    })
}

/// A sender post-processing counterexample exists and is found.
pub fn check_sender(config: &SuiteConfig) -> CheckResult {
    timed("sender-post-processing", || {
        let mut t = Tally::new();
        let r = search_sender_postprocessing_counterexample(
            &SearchBounds::default(),
            derive_seed(config.seed, 7),
            config.search_budget,
        );
        let mut found = None;
        t.record_result(
            r,
            |o| {
                if let SearchOutcome::Found(w) = o {
                    found = Some(format!(
                        "witness after {} candidates: e^eps = {}, delta {} -> {}",
                        w.candidates, w.ratio, w.delta.exact, w.chained_delta.exact
                    ));
                    true
                } else {
                    false
                }
            },
            || "search exhausted its budget".into(),
        );
        if t.detail.is_none() {
            t.detail = found;
        }
        t
    })
}

pub const AVERAGE_R1: [f64; 3] = [0.5, 1.0, 2.0];
pub const AVERAGE_R2: [f64; 3] = [2.0, 5.0, 10.0];

/// The average bound over sampled class members for `n ∈ {2, …, 10}`, plus
/// the two eigenvalue inequalities on random covariances.
pub fn check_average(config: &SuiteConfig) -> CheckResult {
    timed("average-bound", || {
        let mut rng = rng_for(config, 8);
        let mut t = Tally::new();
        let mut min_slack = f64::INFINITY;
        for n in 2..=10 {
            for &r1 in &AVERAGE_R1 {
                for &r2 in &AVERAGE_R2 {
                    let x: Vec<f64> = (0..n).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
                    let seed = rng.gen();
                    let r = GaussianClassSpec::new(r1, r2, x)
                        .and_then(|spec| certify_average_gaussian(&spec, config.gaussian_samples, seed));
                    if let Ok(rep) = &r {
                        min_slack = min_slack.min(rep.min_slack);
                    }
                    t.record_result(r, |r| r.verdict, || format!("n={n}, r1={r1}, r2={r2}"));
                }
            }
        }
        for k in 0..1000 {
            let n = rng.gen_range(2..=8);
            let cov = random::covariance(&mut rng, n);
            t.record(average_inequalities_hold(&cov), || format!("eigenvalue inequalities, instance {k}"));
        }
        if t.detail.is_none() {
            t.detail = Some(format!("smallest slack {min_slack:.6}"));
        }
        t
    })
}

/// `v ≥ v_i²` and `1 − v_i²/v ≥ (λn/λ1)(1 − σ_i²/‖σ‖²)` for every `i`.
pub fn average_inequalities_hold(cov: &DMatrix<f64>) -> bool {
    let Ok(d) = correlation_decompose(cov) else { return false };
    let n = cov.nrows();
    let nf = n as f64;
    let v_i: Vec<f64> = (0..n).map(|i| (0..n).map(|j| d.phi[(i, j)] * d.sigma[j]).sum::<f64>() / nf).collect();
    let v = cov.sum() / (nf * nf);
    let norm2: f64 = d.sigma.iter().map(|s| s * s).sum();
    (0..n).all(|i| {
        let six = v >= v_i[i] * v_i[i] - 1e-12 * v;
        let seven =
            1.0 - v_i[i] * v_i[i] / v >= (d.lambda_min / d.lambda_max) * (1.0 - d.sigma[i].powi(2) / norm2) - 1e-9;
        six && seven
    })
}

/// Conditioning on the average matches the marginal closed forms, and
/// posterior samples lie on the conditioning hyperplane.
pub fn check_conditioning(config: &SuiteConfig) -> CheckResult {
    timed("gaussian-conditioning", || {
        let mut rng = rng_for(config, 9);
        let mut t = Tally::new();
        for k in 0..1000 {
            let n = rng.gen_range(2..=8);
            let prior = random::gaussian(&mut rng, n);
            let xbar = 3.0 * rng.sample::<f64, _>(StandardNormal);
            let ok = gaussian_condition_on_average(&prior, xbar).map(|post| {
                let cov = prior.cov();
                let sigma: Vec<f64> = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
                let nf = n as f64;
                let v = cov.sum() / (nf * nf);
                let mu_bar = prior.mean().sum() / nf;
                let scale = cov.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1.0);
                let marginals = (0..n).all(|i| {
                    let v_i = (0..n).map(|j| cov[(i, j)] / sigma[i]).sum::<f64>() / nf;
                    let mean = prior.mean()[i] + sigma[i] * v_i / v * (xbar - mu_bar);
                    let var = sigma[i].powi(2) * (1.0 - v_i * v_i / v);
                    (post.mean()[i] - mean).abs() <= 1e-9 * scale.max(mean.abs())
                        && (post.cov()[(i, i)] - var).abs() <= 1e-9 * scale
                });
                let on_plane =
                    (0..5).all(|_| (post.sample(&mut rng).sum() / nf - xbar).abs() < 1e-8 * scale.max(xbar.abs()));
                marginals && on_plane && post.support_rank() == n - 1
            });
            t.record_result(ok, |ok| *ok, || format!("instance {k}"));
        }
        t
    })
}

/// Runs every check in order.
pub fn run_suite(config: &SuiteConfig) -> SuiteResult {
    let checks = vec![
        check_propriety(config),
        check_score_generation(config),
        check_worst_case_loss(config),
        check_equivalence(config),
        check_composition_bound(config),
        check_receiver(config),
        check_sender(config),
        check_average(config),
        check_conditioning(config),
    ];
    SuiteResult { passed: checks.iter().all(|c| c.passed), seed: config.seed, checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let config = SuiteConfig {
            seed: 3,
            instances: 20,
            pair_instances: 10,
            gaussian_samples: 50,
            search_budget: 100_000,
            grid: WGrid::with_points(6),
        };
        let r = run_suite(&config);
        for c in &r.checks {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn simplex_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 1..8 {
            let p = random::simplex(&mut rng, k, 0.4);
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }
}
