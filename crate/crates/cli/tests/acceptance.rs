//! Acceptance criteria, one test per criterion.
//!
//! Every criterion is judged against an oracle written here, independently
//! of the library code paths it checks. Each test prints a single
//! `acceptance NN [PASS|FAIL]` line straight to stderr, so the summary is
//! visible even when test output is captured.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ppcert_core::beliefs::{
    gaussian_condition_on_average, sample_gaussian_class, Belief, Dataset, FiniteBelief, GaussianBelief,
    GaussianClassSpec,
};
use ppcert_core::certify::{
    average_relative_scores, certify_average_gaussian, certify_pdp, certify_pp, check_composition,
    check_pdp_pp_equivalence, check_receiver_postprocessing, relative_score_distribution,
    search_sender_postprocessing_counterexample, GuaranteeSpec, PriorClass, SearchBounds, SearchOutcome, WGrid,
};
use ppcert_core::mechanisms::{FiniteMechanism, NeighborRelation, StageKernel};
use ppcert_core::scores::{
    bayes_act, loss_from_score, propriety_check, score_from_loss, worst_case_loss_check, PrivacyFunction, Score,
    ScoringRule,
};
use ppcert_core::ExtendedReal;

// ---------------------------------------------------------------------------
// Reporting and random instances
// ---------------------------------------------------------------------------

fn report(n: u32, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    // Bypasses the test harness's capture of `eprintln!`.
    let mut err = std::io::stderr();
    let _ = writeln!(
        err,
        "acceptance {n:>2} [{}] {name}: {detail} ({:.2} s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn universe(k: usize) -> Vec<Dataset> {
    (0..k).map(|i| Dataset::scalar(i as f64)).collect()
}

fn labels(prefix: &str, k: usize) -> Vec<String> {
    (0..k).map(|i| format!("{prefix}{i}")).collect()
}

/// A probability vector; each entry is zeroed with probability `zero_prob`,
/// keeping at least one positive entry.
fn simplex(rng: &mut ChaCha8Rng, k: usize, zero_prob: f64) -> Vec<f64> {
    let mut w: Vec<f64> =
        (0..k).map(|_| if rng.gen::<f64>() < zero_prob { 0.0 } else { rng.gen_range(0.05..1.0) }).collect();
    if w.iter().all(|&v| v == 0.0) {
        let i = rng.gen_range(0..k);
        w[i] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

fn belief(u: &[Dataset], p: &[f64]) -> FiniteBelief {
    FiniteBelief::new(u.to_vec(), p.to_vec()).expect("valid belief")
}

fn kernel(rng: &mut ChaCha8Rng, rows: usize, cols: usize, zero_prob: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| simplex(rng, cols, zero_prob)).collect()
}

fn mechanism(k: &[Vec<f64>]) -> FiniteMechanism {
    FiniteMechanism::new(universe(k.len()), labels("t", k[0].len()), k.to_vec()).expect("valid mechanism")
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|x| (0..n).filter(move |&y| y != x).map(move |y| (x, y))).collect()
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

/// Brute-force probabilistic DP: the largest mass, over ordered neighbour
/// pairs, of outputs with `m(t|x) > e^ε m(t|x')`.
fn oracle_pdp(k: &[Vec<f64>], pairs: &[(usize, usize)], eps: f64) -> f64 {
    let r = eps.exp();
    pairs
        .iter()
        .map(|&(x, y)| k[x].iter().zip(&k[y]).filter(|(a, b)| **a > r * **b).map(|(a, _)| *a).sum::<f64>())
        .fold(0.0, f64::max)
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| if *b == 0.0 { f64::INFINITY } else { a * (a / b).ln() })
        .sum()
}

fn moments(points: &[f64], p: &[f64]) -> (f64, f64) {
    let m: f64 = points.iter().zip(p).map(|(x, w)| x * w).sum();
    let v: f64 = points.iter().zip(p).map(|(x, w)| w * (x - m) * (x - m)).sum();
    (m, v)
}

/// Left end of the maximum-mass window `[z, z + s]`, `z` ranging over
/// support points, leftmost among ties.
fn oracle_window(points: &[f64], p: &[f64], s: f64) -> f64 {
    let mut order: Vec<usize> = (0..points.len()).filter(|&i| p[i] > 0.0).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &i in &order {
        let z = points[i];
        let mass = window_mass(points, p, z, s);
        if mass > best.0 + 1e-14 {
            best = (mass, z);
        }
    }
    best.1
}

fn window_mass(points: &[f64], p: &[f64], z: f64, s: f64) -> f64 {
    points.iter().zip(p).filter(|(x, _)| **x >= z && **x <= z + s).map(|(_, w)| w).sum()
}

fn argmin_expected(table: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    table
        .iter()
        .map(|row| row.iter().zip(p).map(|(r, w)| r * w).sum::<f64>())
        .enumerate()
        .fold((0, f64::INFINITY), |best, (d, v)| if v < best.1 { (d, v) } else { best })
}

fn ext_close(a: ExtendedReal, b: f64, tol: f64) -> bool {
    match a {
        ExtendedReal::Finite(v) => b.is_finite() && (v - b).abs() <= tol * b.abs().max(1.0),
        ExtendedReal::PosInf => b == f64::INFINITY,
        ExtendedReal::NegInf => b == f64::NEG_INFINITY,
    }
}

/// Generic Gaussian conditioning on `Y = y` for a jointly Gaussian vector
/// whose last `obs` coordinates are `Y`: the Schur complement of the joint
/// covariance.
fn condition_joint(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    obs: usize,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = mean.len() - obs;
    let sxx = cov.view((0, 0), (n, n));
    let sxy = cov.view((0, n), (n, obs));
    let syy = cov.view((n, n), (obs, obs)).clone_owned();
    let syy_inv = syy.try_inverse().expect("observed block is invertible");
    let gain = sxy * &syy_inv;
    let m = mean.rows(0, n) + &gain * (y - mean.rows(n, obs));
    let c = sxx - &gain * sxy.transpose();
    (m, c)
}

/// Conditions `N(μ, Σ)` on its average via the joint law of `(X, X̄)`.
fn oracle_condition_on_average(mu: &DVector<f64>, sigma: &DMatrix<f64>, xbar: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = mu.len();
    let a = DMatrix::from_fn(n + 1, n, |i, j| if i < n { f64::from(i == j) } else { 1.0 / n as f64 });
    let joint_mean = &a * mu;
    let joint_cov = &a * sigma * a.transpose();
    condition_joint(&joint_mean, &joint_cov, 1, &DVector::from_element(1, xbar))
}

/// Coordinate-wise relative marginal DSS scores for releasing the average.
fn oracle_average_deltas(mu: &DVector<f64>, sigma: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let xbar = x.iter().sum::<f64>() / x.len() as f64;
    let (m1, c1) = oracle_condition_on_average(mu, sigma, xbar);
    let dss = |m: f64, v: f64, xi: f64| v.ln() + (xi - m).powi(2) / v;
    (0..x.len()).map(|i| dss(mu[i], sigma[(i, i)], x[i]) - dss(m1[i], c1[(i, i)], x[i])).collect()
}

/// `(σ, Φ, λ_max, λ_min)` of a covariance matrix.
fn correlation(sigma: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, f64, f64) {
    let n = sigma.nrows();
    let sd: Vec<f64> = (0..n).map(|i| sigma[(i, i)].sqrt()).collect();
    let phi = DMatrix::from_fn(n, n, |i, j| sigma[(i, j)] / (sd[i] * sd[j]));
    let eig = SymmetricEigen::new(phi.clone());
    (sd, phi, eig.eigenvalues.max(), eig.eigenvalues.min())
}

fn random_covariance(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n + 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let scales: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.gen_range(-1.0..1.0))).collect();
    let w = &a * a.transpose() / (n + 1) as f64 + DMatrix::identity(n, n) * 0.05;
    DMatrix::from_fn(n, n, |i, j| scales[i] * scales[j] * w[(i, j)])
}

/// Merges `(Δ, probability)` pairs with equal Δ (within `tol`) into a measure.
fn merge_law(mut pairs: Vec<(f64, f64)>, tol: f64) -> Vec<(f64, f64)> {
    pairs.retain(|(_, p)| *p > 0.0);
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (d, p) in pairs {
        match out.last_mut() {
            Some(last) if (d - last.0).abs() <= tol => last.1 += p,
            _ => out.push((d, p)),
        }
    }
    out
}

fn same_law(a: &[(f64, f64)], b: &[(f64, f64)], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x.0 - y.0).abs() <= tol && (x.1 - y.1).abs() <= tol)
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

/// Strict propriety of the log score, and propriety of the DSS and interval
/// scores, on 500 random finite belief pairs each.
#[test]
fn criterion_01_propriety() {
    let start = Instant::now();
    let mut r = rng(0x01);
    let mut checked = 0;
    let mut failures: Vec<String> = Vec::new();
    for k in 0..500 {
        // Log score: S(Q, P) − S(P, P) = KL(P ‖ Q), positive unless Q = P.
        let size = r.gen_range(1..=6);
        let u = universe(size);
        let (p, q) = (simplex(&mut r, size, 0.2), simplex(&mut r, size, 0.2));
        let (pb, qb): (Belief, Belief) = (belief(&u, &p).into(), belief(&u, &q).into());
        let log = &ScoringRule::NegLogProb;
        let gap = log.expected(&qb, &pb).unwrap().minus(log.expected(&pb, &pb).unwrap());
        let oracle = kl(&p, &q);
        let distinct = p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-12);
        let strict = !distinct || gap > ExtendedReal::Finite(0.0);
        if !(ext_close(gap, oracle, 1e-9) && oracle >= 0.0 && strict) {
            failures.push(format!("log score instance {k}: library {gap}, oracle {oracle}"));
        }
        if propriety_check(log, &[pb.clone(), qb.clone()], true).is_err() {
            failures.push(format!("log score instance {k}: library propriety check failed"));
        }

        // Marginal DSS on beliefs over random scalar points.
        let size = r.gen_range(2..=6);
        let points: Vec<f64> = (0..size).map(|i| i as f64 + r.gen_range(0.0..0.9)).collect();
        let u: Vec<Dataset> = points.iter().map(|&v| Dataset::scalar(v)).collect();
        let (p, q) = (simplex(&mut r, size, 0.0), simplex(&mut r, size, 0.0));
        let (pb, qb): (Belief, Belief) = (belief(&u, &p).into(), belief(&u, &q).into());
        let dss = &ScoringRule::MarginalDss { i: 1 };
        let gap = dss.expected(&qb, &pb).unwrap().minus(dss.expected(&pb, &pb).unwrap());
        let ((mp, vp), (mq, vq)) = (moments(&points, &p), moments(&points, &q));
        let oracle = (vq / vp).ln() + (vp + (mp - mq).powi(2)) / vq - 1.0;
        if !(ext_close(gap, oracle, 1e-9) && oracle >= -1e-12) {
            failures.push(format!("dss instance {k}: library {gap}, oracle {oracle}"));
        }

        // Interval score: 1 − P(window chosen under Q) ≥ 1 − max window mass of P.
        let s = [0.5, 1.0, 1.5, 2.5][r.gen_range(0..4)];
        let (p, q) = (simplex(&mut r, size, 0.3), simplex(&mut r, size, 0.3));
        let (pb, qb): (Belief, Belief) = (belief(&u, &p).into(), belief(&u, &q).into());
        let interval = &ScoringRule::Interval { s };
        let lib_pq = interval.expected(&qb, &pb).unwrap();
        let lib_pp = interval.expected(&pb, &pb).unwrap();
        let oracle_pq = 1.0 - window_mass(&points, &p, oracle_window(&points, &q, s), s);
        let oracle_pp = 1.0 - window_mass(&points, &p, oracle_window(&points, &p, s), s);
        if !(ext_close(lib_pq, oracle_pq, 1e-9) && ext_close(lib_pp, oracle_pp, 1e-9) && oracle_pq >= oracle_pp - 1e-12)
        {
            failures.push(format!(
                "interval instance {k}: library ({lib_pq}, {lib_pp}), oracle ({oracle_pq}, {oracle_pp})"
            ));
        }
        checked += 3;
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(10);
    report(1, "propriety", pass, &format!("{checked} pairs, {} violations", failures.len()), elapsed);
    assert!(pass, "{:?}", failures.first());
}

/// Scores generated from random privacy tables are proper; the loss built
/// from the log score regenerates the log score.
#[test]
fn criterion_02_score_generation() {
    let start = Instant::now();
    let mut r = rng(0x02);
    let mut failures: Vec<String> = Vec::new();
    let mut pairs = 0;
    for k in 0..500 {
        let (nx, nd) = (r.gen_range(1..=6), r.gen_range(1..=6));
        let u = universe(nx);
        let table: Vec<Vec<f64>> = (0..nd).map(|_| (0..nx).map(|_| r.gen_range(0.0..1.0)).collect()).collect();
        let rho = PrivacyFunction::from_table(labels("d", nd), u.clone(), table.clone()).unwrap();
        let derived = score_from_loss(&rho);
        let family: Vec<Vec<f64>> = (0..6).map(|_| simplex(&mut r, nx, 0.3)).collect();
        for p in &family {
            let own = argmin_expected(&table, p).1;
            for q in &family {
                let act = argmin_expected(&table, q).0;
                let oracle: f64 = table[act].iter().zip(p).map(|(v, w)| v * w).sum();
                let lib = derived.expected(&belief(&u, q).into(), &belief(&u, p).into()).unwrap();
                pairs += 1;
                if !(ext_close(lib, oracle, 1e-9) && oracle >= own - 1e-9) {
                    failures.push(format!("table {k}: library {lib}, oracle {oracle}, own {own}"));
                }
            }
        }

        let beliefs: Vec<FiniteBelief> = (0..4).map(|_| belief(&u, &simplex(&mut r, nx, 0.3))).collect();
        let back = score_from_loss(&loss_from_score(&ScoringRule::NegLogProb, &beliefs, &u).unwrap());
        for b in &beliefs {
            for (x, &px) in u.iter().zip(b.probs()) {
                let expected = if px > 0.0 { -px.ln() } else { f64::INFINITY };
                let got = back.score_finite(b, x).unwrap();
                if !ext_close(got, expected, 1e-9) {
                    failures.push(format!("round trip {k}: {got} vs {expected}"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(30);
    report(2, "score generation", pass, &format!("500 tables, {pairs} pairs, {} violations", failures.len()), elapsed);
    assert!(pass, "{:?}", failures.first());
}

/// `E_P[ρ(d^P_ρ)] ≤ E_P[ρ(d^P_ℓ)] + 1e-12` on 500 random `(ρ, ℓ, P)`.
#[test]
fn criterion_03_worst_case_loss() {
    let start = Instant::now();
    let mut r = rng(0x03);
    let mut failures: Vec<String> = Vec::new();
    for k in 0..500 {
        let (nx, nd) = (r.gen_range(1..=6), r.gen_range(1..=6));
        let u = universe(nx);
        let draw = |r: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..nd).map(|_| (0..nx).map(|_| r.gen_range(0.0..1.0)).collect()).collect()
        };
        let (rho_t, ell_t) = (draw(&mut r), draw(&mut r));
        let p = simplex(&mut r, nx, 0.2);
        let rho = PrivacyFunction::from_table(labels("d", nd), u.clone(), rho_t.clone()).unwrap();
        let ell = PrivacyFunction::from_table(labels("d", nd), u.clone(), ell_t.clone()).unwrap();
        let pb = belief(&u, &p);

        let (_, best) = argmin_expected(&rho_t, &p);
        let (act_ell, _) = argmin_expected(&ell_t, &p);
        let misled: f64 = rho_t[act_ell].iter().zip(&p).map(|(v, w)| v * w).sum();
        let lib_act = bayes_act(&rho, &pb).unwrap();
        let lib_value: f64 = rho_t[lib_act].iter().zip(&p).map(|(v, w)| v * w).sum();
        let ok = best <= misled + 1e-12
            && (lib_value - best).abs() <= 1e-12
            && worst_case_loss_check(&rho, &[ell], &[pb]).is_ok();
        if !ok {
            failures.push(format!("triple {k}: best {best}, misled {misled}, library act value {lib_value}"));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty();
    report(3, "worst-case loss", pass, &format!("500 triples, {} violations", failures.len()), elapsed);
    assert!(pass, "{:?}", failures.first());
}

/// PDP and log-score two-point PP verdicts agree with the brute-force PDP
/// oracle on 500 mechanisms over a 5×5 `(ε, δ)` grid.
#[test]
fn criterion_04_pdp_pp_equivalence() {
    const EPS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 4.0];
    const DELTA: [f64; 5] = [0.0, 0.05, 0.1, 0.3, 0.6];
    let start = Instant::now();
    let mut r = rng(0x04);
    let mut failures: Vec<String> = Vec::new();
    let mut structural = 0;
    let mut cells = 0;
    for k in 0..500 {
        let (nu, na) = (r.gen_range(2..=4), r.gen_range(2..=5));
        let zero_prob = if k % 4 == 0 { 0.4 } else { 0.0 };
        let kern = kernel(&mut r, nu, na, zero_prob);
        let m = mechanism(&kern);
        let u = m.universe().to_vec();
        let mut chosen: Vec<(usize, usize)> =
            (0..nu).flat_map(|i| ((i + 1)..nu).map(move |j| (i, j))).filter(|_| r.gen_bool(0.6)).collect();
        if chosen.is_empty() {
            chosen.push((0, 1));
        }
        let nb =
            NeighborRelation::from_pairs(chosen.iter().map(|&(i, j)| (u[i].clone(), u[j].clone())).collect()).unwrap();
        let ordered: Vec<(usize, usize)> = chosen.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect();
        if ordered.iter().any(|&(x, y)| kern[x].iter().zip(&kern[y]).any(|(a, b)| *a > 0.0 && *b == 0.0)) {
            structural += 1;
        }
        for &eps in &EPS {
            let oracle = oracle_pdp(&kern, &ordered, eps);
            for &delta in &DELTA {
                cells += 1;
                let expect = oracle <= delta;
                let pdp = certify_pdp(&m, &nb, eps, Some(delta)).unwrap();
                let pp = certify_pp(&m, &GuaranteeSpec::log_two_point(nb.clone(), eps, delta).unwrap()).unwrap();
                let equiv = check_pdp_pp_equivalence(&m, &nb, eps, delta, &WGrid::default());
                let ok = pdp.verdict == Some(expect)
                    && pp.verdict == expect
                    && (pdp.attained_delta - oracle).abs() <= 1e-12
                    && (pp.attained_delta - oracle).abs() <= 1e-9
                    && matches!(equiv, Ok(ref e) if e.agree);
                if !ok {
                    failures.push(format!(
                        "mechanism {k} at eps={eps}, delta={delta}: oracle {oracle}, pdp {:?}/{}, pp {}/{}",
                        pdp.verdict, pdp.attained_delta, pp.verdict, pp.attained_delta
                    ));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && structural >= 50 && elapsed < Duration::from_secs(300);
    report(
        4,
        "PDP/PP equivalence",
        pass,
        &format!(
            "500 mechanisms ({structural} with structural zeros), {cells} cells, {} disagreements",
            failures.len()
        ),
        elapsed,
    );
    assert!(pass, "structural={structural}, {:?}", failures.first());
}

/// The composed mechanism never needs more than `δ1* + δ2*` at `κ1 + κ2`;
/// two independent randomized responses compose to `(2ε, 0)`.
#[test]
fn criterion_05_composition() {
    let start = Instant::now();
    let mut r = rng(0x05);
    let mut failures: Vec<String> = Vec::new();
    for k in 0..200 {
        let (nu, na, nb) = (r.gen_range(2..=3), r.gen_range(2..=3), r.gen_range(2..=3));
        let k1 = kernel(&mut r, nu, na, 0.1);
        // Second stage depends on both the dataset and the first output.
        let k2: Vec<Vec<Vec<f64>>> = (0..nu).map(|_| kernel(&mut r, na, nb, 0.1)).collect();
        let m1 = mechanism(&k1);
        let m2 = StageKernel::new(m1.universe().to_vec(), m1.alphabet().to_vec(), labels("s", nb), k2.clone()).unwrap();
        let (kappa1, kappa2) = (r.gen_range(0.0..2.0), r.gen_range(0.0..2.0));
        let (delta1, delta2) = (r.gen_range(0.0..0.5), r.gen_range(0.0..0.5));
        let n = NeighborRelation::complete(m1.universe());
        let spec1 = GuaranteeSpec::log_two_point(n.clone(), kappa1, delta1).unwrap();
        let spec2 = GuaranteeSpec::log_two_point(n, kappa2, delta2).unwrap();

        let pairs = all_pairs(nu);
        let d1 = oracle_pdp(&k1, &pairs, kappa1);
        let d2 = (0..na)
            .map(|t| {
                let slice: Vec<Vec<f64>> = (0..nu).map(|x| k2[x][t].clone()).collect();
                oracle_pdp(&slice, &pairs, kappa2)
            })
            .fold(0.0, f64::max);
        let product: Vec<Vec<f64>> = (0..nu)
            .map(|x| (0..na).flat_map(|t| (0..nb).map(move |s| (t, s))).map(|(t, s)| k1[x][t] * k2[x][t][s]).collect())
            .collect();
        let d12 = oracle_pdp(&product, &pairs, kappa1 + kappa2);

        let lib = check_composition(&m1, &m2, &spec1, &spec2);
        let ok = d12 <= d1 + d2 + 1e-12
            && matches!(&lib, Ok(rep) if rep.holds
                && (rep.first.attained_delta - d1).abs() <= 1e-9
                && (rep.composed.attained_delta - d12).abs() <= 1e-9);
        if !ok {
            failures.push(format!("instance {k}: oracle {d12} vs {d1} + {d2}; library {:?}", lib.map(|r| r.holds)));
        }
    }

    // Independent randomized response twice, with e^ε = 3: the product is
    // exactly (2ε, 0) and no better. The ratio check is exact, since
    // floating rounding alone can push p²/(1−p)² past e^{2ε}.
    let eps = 3f64.ln();
    let rr = vec![vec![0.75, 0.25], vec![0.25, 0.75]];
    let m = mechanism(&rr);
    let second = StageKernel::broadcast(&m, m.alphabet().to_vec()).unwrap();
    let spec = GuaranteeSpec::log_two_point(NeighborRelation::complete(m.universe()), eps, 0.0).unwrap();
    let rep = check_composition(&m, &second, &spec, &spec).unwrap();
    let exact_rr = to_rational(&rr, 4).unwrap();
    let product: Vec<Vec<Q>> =
        exact_rr.iter().map(|row| row.iter().flat_map(|a| row.iter().map(move |b| a * b)).collect()).collect();
    let analytic = rep.holds
        && rep.composed.verdict
        && rep.composed.attained_delta <= 1e-12
        && exact_pdp(&product, Q::from_integer(9)) == Q::from_integer(0)
        && exact_pdp(&product, Q::new(899, 100)) > Q::from_integer(0);
    if !analytic {
        failures.push("independent randomized response does not compose to (2ε, 0)".into());
    }

    let elapsed = start.elapsed();
    let pass = failures.is_empty();
    report(
        5,
        "composition",
        pass,
        &format!("200 instances + analytic RR check, {} violations", failures.len()),
        elapsed,
    );
    assert!(pass, "{:?}", failures.first());
}

/// A data-independent kernel leaves the relative-score law and the verdict
/// unchanged.
#[test]
fn criterion_06_receiver_postprocessing() {
    let start = Instant::now();
    let mut r = rng(0x06);
    let mut failures: Vec<String> = Vec::new();
    for k in 0..200 {
        let (nu, na, nb) = (r.gen_range(2..=4), r.gen_range(2..=4), r.gen_range(1..=3));
        let km = kernel(&mut r, nu, na, 0.15);
        let kk = kernel(&mut r, na, nb, 0.2);
        let m = mechanism(&km);
        let u = m.universe().to_vec();
        let stage =
            StageKernel::data_independent(u.clone(), m.alphabet().to_vec(), labels("s", nb), kk.clone()).unwrap();
        let product: Vec<Vec<f64>> = km
            .iter()
            .map(|row| row.iter().enumerate().flat_map(|(t, a)| kk[t].iter().map(move |b| a * b)).collect())
            .collect();
        let mk = FiniteMechanism::new(u.clone(), labels("o", na * nb), product.clone()).unwrap();

        let priors: Vec<Vec<f64>> = (0..3).map(|_| simplex(&mut r, nu, 0.0)).collect();
        for q in &priors {
            let qb = belief(&u, q);
            for x in 0..nu {
                let law = |rows: &[Vec<f64>]| -> Vec<(f64, f64)> {
                    let width = rows[0].len();
                    let pairs = (0..width)
                        .filter(|&t| rows[x][t] > 0.0)
                        .map(|t| {
                            let evidence: f64 = (0..nu).map(|z| q[z] * rows[z][t]).sum();
                            ((rows[x][t] / evidence).ln(), rows[x][t])
                        })
                        .collect();
                    merge_law(pairs, 1e-12)
                };
                let (before, after) = (law(&km), law(&product));
                let lib = |mech: &FiniteMechanism| -> Vec<(f64, f64)> {
                    let d = relative_score_distribution(&ScoringRule::NegLogProb, &qb, mech, x).unwrap();
                    merge_law(d.iter().map(|s| (s.delta_s.to_f64(), s.prob)).collect(), 1e-12)
                };
                if !(same_law(&before, &after, 1e-12)
                    && same_law(&before, &lib(&m), 1e-12)
                    && same_law(&after, &lib(&mk), 1e-12))
                {
                    failures.push(format!("instance {k}, dataset {x}: laws differ"));
                }
            }
        }

        let (kappa, delta) = (r.gen_range(0.0..2.0), r.gen_range(0.0..0.5));
        let spec = if k % 2 == 0 {
            GuaranteeSpec::log_two_point(NeighborRelation::complete(&u), kappa, delta).unwrap()
        } else {
            GuaranteeSpec::new(
                vec![ScoringRule::NegLogProb, ScoringRule::Interval { s: 1.0 }],
                PriorClass::Explicit { priors: priors.iter().map(|q| belief(&u, q)).collect() },
                kappa,
                delta,
            )
            .unwrap()
        };
        match check_receiver_postprocessing(&m, &stage, &spec) {
            Ok(rep) if rep.equal && rep.original.verdict == rep.processed.verdict && rep.max_score_gap <= 1e-12 => {}
            other => {
                failures.push(format!("instance {k}: library report {:?}", other.map(|r| (r.equal, r.max_score_gap))))
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty();
    report(6, "receiver post-processing", pass, &format!("200 pairs, {} mismatches", failures.len()), elapsed);
    assert!(pass, "{:?}", failures.first());
}

type Q = Ratio<i64>;

fn to_rational(rows: &[Vec<f64>], denom: i64) -> Option<Vec<Vec<Q>>> {
    rows.iter()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    let n = (v * denom as f64).round();
                    ((v - n / denom as f64).abs() <= 1e-12).then(|| Q::new(n as i64, denom))
                })
                .collect()
        })
        .collect()
}

fn exact_pdp(k: &[Vec<Q>], r: Q) -> Q {
    all_pairs(k.len())
        .into_iter()
        .map(|(x, y)| k[x].iter().zip(&k[y]).filter(|(a, b)| **a > r * **b).map(|(a, _)| *a).sum::<Q>())
        .max()
        .unwrap_or_default()
}

/// A sender post-processing counterexample is found, then re-verified in
/// exact arithmetic here and by the floating-point certifier.
#[test]
fn criterion_07_sender_postprocessing() {
    let start = Instant::now();
    let outcome = search_sender_postprocessing_counterexample(&SearchBounds::default(), 7, 1_000_000).unwrap();
    let (pass, detail) = match outcome {
        SearchOutcome::Exhausted { candidates } => (false, format!("budget exhausted after {candidates} candidates")),
        SearchOutcome::Found(w) => {
            let (num, den) = w.ratio.split_once('/').unwrap_or((&w.ratio, "1"));
            let ratio = Q::new(num.parse().unwrap(), den.parse().unwrap());
            let m = to_rational(w.mechanism.kernel(), 20).expect("mechanism entries are multiples of 1/20");
            let k = to_rational(w.kernel.kernel(), 20).expect("kernel entries are multiples of 1/20");
            let chained: Vec<Vec<Q>> = m
                .iter()
                .map(|row| (0..k[0].len()).map(|s| row.iter().zip(&k).map(|(a, kr)| *a * kr[s]).sum()).collect())
                .collect();
            let chained_matches = chained
                .iter()
                .flatten()
                .zip(w.chained.kernel().iter().flatten())
                .all(|(q, f)| (*q.numer() as f64 / *q.denom() as f64 - f).abs() <= 1e-12);
            let (before, after) = (exact_pdp(&m, ratio), exact_pdp(&chained, ratio));
            let eps = (*ratio.numer() as f64 / *ratio.denom() as f64).ln();
            let delta = *before.numer() as f64 / *before.denom() as f64;
            let nb = NeighborRelation::complete(w.mechanism.universe());
            let float_m = certify_pdp(&w.mechanism, &nb, eps, Some(delta)).unwrap();
            let float_mk = certify_pdp(&w.chained, &nb, eps, Some(delta)).unwrap();
            let ok = chained_matches
                && after > before
                && before.to_string() == w.delta.exact
                && float_m.verdict == Some(true)
                && float_mk.verdict == Some(false);
            (
                ok,
                format!(
                    "witness after {} candidates: e^eps = {ratio}, delta {before} -> {after} (exact), float re-check {:?}/{:?}",
                    w.candidates, float_m.verdict, float_mk.verdict
                ),
            )
        }
    };
    report(7, "sender post-processing", pass, &detail, start.elapsed());
    assert!(pass, "{detail}");
}

/// The average bound over 10,000 sampled class members per configuration,
/// the two-coordinate worked example, and the two eigenvalue inequalities.
#[test]
fn criterion_08_average_bound() {
    let start = Instant::now();
    let mut r = rng(0x08);
    let mut failures: Vec<String> = Vec::new();
    let mut members = 0;
    let mut min_slack = f64::INFINITY;
    for n in 2..=10 {
        for &r1 in &[0.5, 1.0, 2.0] {
            for &r2 in &[2.0, 5.0, 10.0] {
                let x: Vec<f64> = (0..n).map(|_| 3.0 * r.sample::<f64, _>(StandardNormal)).collect();
                let spec = GaussianClassSpec::new(r1, r2, x.clone()).unwrap();
                let bound = r1 + r2.ln();
                let rep = certify_average_gaussian(&spec, 10_000, r.gen()).unwrap();
                members += rep.samples;
                min_slack = min_slack.min(rep.min_slack);
                if !(rep.violations == 0 && rep.samples >= 10_000 && rep.max_delta <= bound + 1e-8) {
                    failures
                        .push(format!("n={n}, r1={r1}, r2={r2}: {} violations, max {}", rep.violations, rep.max_delta));
                }
                // Re-derive a subsample independently: class membership and Δ_i.
                for q in sample_gaussian_class(&spec, r.gen(), 40).unwrap() {
                    let (sd, _, lmax, lmin) = correlation(q.cov());
                    let norm2: f64 = sd.iter().map(|s| s * s).sum();
                    let nf = n as f64;
                    let v = q.cov().sum() / (nf * nf);
                    let xbar = x.iter().sum::<f64>() / nf;
                    let mubar = q.mean().sum() / nf;
                    let member = (xbar - mubar).powi(2) / v <= r1 * (1.0 + 1e-9)
                        && sd.iter().all(|s| lmax / lmin <= r2 * (1.0 - s * s / norm2) * (1.0 + 1e-9));
                    let oracle = oracle_average_deltas(q.mean(), q.cov(), &x);
                    let lib = average_relative_scores(&q, &x).unwrap();
                    let agree = oracle.iter().zip(&lib).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0));
                    if !(member && agree && oracle.iter().all(|d| *d <= bound + 1e-8)) {
                        failures.push(format!(
                            "n={n}, r1={r1}, r2={r2}: member {member}, oracle {oracle:?}, library {lib:?}"
                        ));
                    }
                }
            }
        }
    }

    // μ = 0, Σ = I, x = (1, 1): Δ_1 = 1 + ln 2; the smallest class holding
    // this prior has r1 = r2 = 2, leaving slack exactly 1.
    let q = GaussianBelief::from_rows(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let d = average_relative_scores(&q, &[1.0, 1.0]).unwrap();
    let worked = (d[0] - (1.0 + 2f64.ln())).abs() <= 1e-9
        && (oracle_average_deltas(q.mean(), q.cov(), &[1.0, 1.0])[0] - d[0]).abs() <= 1e-12
        && ((2.0 + 2f64.ln()) - d[0] - 1.0).abs() <= 1e-9;
    if !worked {
        failures.push(format!("worked example gives {d:?}"));
    }

    // v ≥ v_i² and 1 − v_i²/v ≥ (λ_n/λ_1)(1 − σ_i²/‖σ‖²).
    for k in 0..1000 {
        let n = r.gen_range(2..=8);
        let cov = random_covariance(&mut r, n);
        let (sd, phi, lmax, lmin) = correlation(&cov);
        let nf = n as f64;
        let vi: Vec<f64> = (0..n).map(|i| (0..n).map(|j| phi[(i, j)] * sd[j]).sum::<f64>() / nf).collect();
        let v: f64 = sd.iter().zip(&vi).map(|(s, w)| s * w).sum::<f64>() / nf;
        let norm2: f64 = sd.iter().map(|s| s * s).sum();
        for i in 0..n {
            let six = v >= vi[i] * vi[i] * (1.0 - 1e-12);
            let seven = 1.0 - vi[i] * vi[i] / v >= (lmin / lmax) * (1.0 - sd[i] * sd[i] / norm2) - 1e-12;
            if !(six && seven) {
                failures.push(format!("covariance {k}, coordinate {i}: ({six}, {seven})"));
            }
        }
    }

    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    report(
        8,
        "Gaussian average bound",
        pass,
        &format!("81 configurations, {members} members, min slack {min_slack:.3e}, {} violations", failures.len()),
        elapsed,
    );
    assert!(pass, "{:?}", failures.first());
}

/// Conditioning on the average matches generic Gaussian conditioning of the
/// joint law of `(X, X̄)`.
#[test]
fn criterion_09_gaussian_conditioning() {
    let start = Instant::now();
    let mut r = rng(0x09);
    let mut worst = 0.0f64;
    let mut failures: Vec<String> = Vec::new();
    for k in 0..1000 {
        let n = r.gen_range(2..=8);
        let cov = random_covariance(&mut r, n);
        let mu = DVector::from_fn(n, |_, _| 2.0 * r.sample::<f64, _>(StandardNormal));
        let xbar = mu.sum() / n as f64 + 3.0 * r.sample::<f64, _>(StandardNormal);
        let prior = GaussianBelief::new(mu.clone(), cov.clone()).unwrap();
        let post = gaussian_condition_on_average(&prior, xbar).unwrap();
        let (m, c) = oracle_condition_on_average(&mu, &cov, xbar);
        let scale = cov.amax().max(mu.amax()).max(xbar.abs()).max(1.0);
        let err = (post.mean() - &m).amax().max((post.cov() - &c).amax()) / scale;
        worst = worst.max(err);
        if err > 1e-9 {
            failures.push(format!("instance {k}: relative error {err:e}"));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty();
    report(9, "Gaussian conditioning", pass, &format!("1000 instances, worst relative error {worst:.2e}"), elapsed);
    assert!(pass, "{:?}", failures.first());
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).to_string_lossy().into_owned()
}

fn ppcert(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ppcert"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("PP_CERT_THREADS", t),
        None => cmd.env_remove("PP_CERT_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn without_timestamp(bytes: &[u8]) -> String {
    String::from_utf8(bytes.to_vec())
        .expect("UTF-8 report")
        .lines()
        .filter(|l| !l.trim_start().starts_with("\"timestamp\""))
        .collect::<Vec<_>>()
        .join("\n")
}

fn report_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("JSON report on stdout")
}

/// End-to-end exit codes and byte-identical reports on the randomized
/// response fixtures.
#[test]
fn criterion_10_cli_contract() {
    let start = Instant::now();
    let rr = fixture("rr.json");
    let exact = fixture("rr_exact.json");
    let mut failures: Vec<String> = Vec::new();
    let mut check = |what: &str, ok: bool| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    let pdp = ppcert(&["certify-pdp", "--mechanism", &rr, "--eps", "1.0986"], None);
    check("certify-pdp exits 0", pdp.status.code() == Some(0));
    let j = report_json(&pdp);
    check("attained delta is 0", j["report"]["attained_delta"].as_f64() == Some(0.0));
    check("17-digit doubles", String::from_utf8_lossy(&pdp.stdout).contains("1.0986000000000000e0"));

    let pp = ppcert(&["certify-pp", "--mechanism", &rr, "--kappa", "1.0986", "--delta", "0"], None);
    check("certify-pp exits 0", pp.status.code() == Some(0));
    check("certify-pp verdict", report_json(&pp)["report"]["verdict"].as_bool() == Some(true));
    let guarantee = fixture("guarantee_log.json");
    check(
        "guarantee file",
        ppcert(&["certify-pp", "--mechanism", &rr, "--guarantee", &guarantee], None).status.code() == Some(0),
    );

    // 3/4 : 1/4 is exactly ln 3-DP: it fails just below ln 3.
    check(
        "exact RR at ln 3",
        ppcert(&["certify-pdp", "--mechanism", &exact, "--eps", "1.0986122886681098"], None).status.code() == Some(0),
    );
    let below = ppcert(&["certify-pdp", "--mechanism", &exact, "--eps", "1.0986"], None);
    check("exact RR below ln 3 exits 3", below.status.code() == Some(3));
    check("attained 3/4 below ln 3", report_json(&below)["report"]["attained_delta"].as_f64() == Some(0.75));
    check(
        "certify-pp fails below ln 3",
        ppcert(&["certify-pp", "--mechanism", &exact, "--kappa", "1.0986"], None).status.code() == Some(3),
    );
    check(
        "equivalence",
        ppcert(&["equivalence", "--mechanism", &rr, "--eps", "1.0986"], None).status.code() == Some(0),
    );
    let stage = fixture("rr_stage.json");
    check(
        "compose",
        ppcert(&["compose", "--mechanism", &rr, "--kernel", &stage, "--kappa", "1.0986"], None).status.code()
            == Some(0),
    );
    let coin = fixture("coin.json");
    check(
        "postprocess",
        ppcert(&["postprocess", "--mechanism", &rr, "--kernel", &coin, "--kappa", "1.0986"], None).status.code()
            == Some(0),
    );

    let bad = ppcert(&["certify-pdp", "--mechanism", &fixture("malformed.json"), "--eps", "1"], None);
    let stderr = String::from_utf8_lossy(&bad.stderr);
    check("malformed row exits 2", bad.status.code() == Some(2));
    check("malformed row names row 1", stderr.contains("row 1"));
    let syntax = ppcert(&["certify-pdp", "--mechanism", "{\"universe\": [0,\n 1]]", "--eps", "1"], None);
    check(
        "syntax error exits 2 with line",
        syntax.status.code() == Some(2) && String::from_utf8_lossy(&syntax.stderr).contains("line 2"),
    );
    check("missing flag exits 2", ppcert(&["certify-pdp", "--eps", "1"], None).status.code() == Some(2));
    check(
        "non-positive tolerance exits 2",
        ppcert(&["average", "--r1", "1", "--r2", "2", "--x", "0,1", "--seed", "1", "--tolerance", "0"], None)
            .status
            .code()
            == Some(2),
    );
    check(
        "bad thread count exits 2",
        ppcert(&["certify-pdp", "--mechanism", &rr, "--eps", "1"], Some("zero")).status.code() == Some(2),
    );
    let leaky = fixture("leaky_stage.json");
    check(
        "data-dependent receiver kernel exits 4",
        ppcert(&["postprocess", "--mechanism", &rr, "--kernel", &leaky, "--kappa", "1"], None).status.code() == Some(4),
    );
    check(
        "r2 ≤ 1 exits 4",
        ppcert(&["average", "--r1", "1", "--r2", "1", "--x", "0,1", "--seed", "1"], None).status.code() == Some(4),
    );
    check(
        "exhausted search exits 3",
        ppcert(&["search-ce", "--seed", "1", "--budget", "0"], None).status.code() == Some(3),
    );

    // Determinism: identical configuration and seed, different thread caps.
    let dir: PathBuf = std::env::temp_dir().join(format!("ppcert-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let runs: [(&str, Vec<&str>); 3] = [
        ("pp", vec!["certify-pp", "--mechanism", &rr, "--kappa", "1.0986"]),
        ("average", vec!["average", "--guarantee", "GAUSS", "--seed", "42", "--samples", "3000"]),
        ("search", vec!["search-ce", "--seed", "9", "--budget", "100000"]),
    ];
    let gauss = fixture("gaussian.json");
    for (name, args) in &runs {
        let args: Vec<&str> = args.iter().map(|a| if *a == "GAUSS" { gauss.as_str() } else { a }).collect();
        let mut texts = Vec::new();
        for threads in ["1", "3"] {
            let path = dir.join(format!("{name}-{threads}.json"));
            let path_str = path.to_string_lossy().into_owned();
            let mut full = args.clone();
            full.extend(["--out", path_str.as_str()]);
            let out = ppcert(&full, Some(threads));
            check(&format!("{name} exits 0 with {threads} threads"), out.status.code() == Some(0));
            texts.push(std::fs::read(&path).map(|b| without_timestamp(&b)).unwrap_or_default());
        }
        check(&format!("{name} report is byte-identical"), !texts[0].is_empty() && texts[0] == texts[1]);
    }
    let csv = ppcert(&["certify-pp", "--mechanism", &rr, "--kappa", "1.0986", "--format", "csv"], None);
    let csv_text = String::from_utf8_lossy(&csv.stdout);
    check(
        "csv has one row per evaluation",
        csv_text.lines().count() == 1 + 2 * 26 && csv_text.starts_with("score,dataset,prior"),
    );
    let _ = std::fs::remove_dir_all(&dir);

    let elapsed = start.elapsed();
    let pass = failures.is_empty();
    report(10, "CLI determinism and exit codes", pass, &format!("{} contract violations", failures.len()), elapsed);
    assert!(pass, "{failures:?}");
}
