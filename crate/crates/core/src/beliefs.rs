//! Receiver beliefs over datasets: finite discrete beliefs, two-point
//! neighbour priors and (possibly rank-deficient) multivariate Gaussians.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::FiniteMechanism;

/// Probabilities of a finite belief must sum to one within this tolerance.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Eigenvalues at or below `RANK_TOL * λ_max` count as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Symmetry tolerance for covariance input, relative to the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A dataset is a point in `R^d`; scalar datasets have `d = 1`.
///
/// In JSON a scalar dataset is a bare number and a tuple is an array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset(Vec<f64>);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DatasetRepr {
    Scalar(f64),
    Tuple(Vec<f64>),
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;

    fn try_from(repr: DatasetRepr) -> Result<Self> {
        let coords = match repr {
            DatasetRepr::Scalar(v) => vec![v],
            DatasetRepr::Tuple(v) => v,
        };
        Dataset::new(coords)
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> Self {
        if d.0.len() == 1 {
            DatasetRepr::Scalar(d.0[0])
        } else {
            DatasetRepr::Tuple(d.0)
        }
    }
}

impl Dataset {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidInput("dataset must have at least one coordinate".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("dataset coordinates must be finite: {coords:?}")));
        }
        Ok(Dataset(coords))
    }

    /// # Panics
    ///
    /// Panics if `v` is not finite.
    pub fn scalar(v: f64) -> Self {
        Dataset::new(vec![v]).expect("finite scalar dataset")
    }

    /// # Panics
    ///
    /// Panics on an empty or non-finite tuple.
    pub fn tuple(coords: &[f64]) -> Self {
        Dataset::new(coords.to_vec()).expect("valid tuple dataset")
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_scalar(&self) -> Option<f64> {
        (self.0.len() == 1).then(|| self.0[0])
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(v) = self.as_scalar() {
            return write!(f, "{v}");
        }
        write!(f, "(")?;
        for (k, c) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Checks that every dataset in `universe` is distinct.
pub(crate) fn check_distinct(universe: &[Dataset], what: &str) -> Result<()> {
    for (i, a) in universe.iter().enumerate() {
        if universe[..i].contains(a) {
            return Err(Error::InvalidInput(format!("{what} contains duplicate dataset {a}")));
        }
    }
    Ok(())
}

/// A discrete probability distribution over a finite list of datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFiniteBelief")]
pub struct FiniteBelief {
    universe: Vec<Dataset>,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawFiniteBelief {
    universe: Vec<Dataset>,
    probs: Vec<f64>,
}

impl TryFrom<RawFiniteBelief> for FiniteBelief {
    type Error = Error;

    fn try_from(raw: RawFiniteBelief) -> Result<Self> {
        FiniteBelief::new(raw.universe, raw.probs)
    }
}

impl FiniteBelief {
    pub fn new(universe: Vec<Dataset>, probs: Vec<f64>) -> Result<Self> {
        if universe.is_empty() {
            return Err(Error::InvalidInput("belief universe is empty".into()));
        }
        if universe.len() != probs.len() {
            return Err(Error::InvalidInput(format!(
                "belief has {} datasets but {} probabilities",
                universe.len(),
                probs.len()
            )));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidInput(format!("probability {i} is invalid: {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidInput(format!("probabilities sum to {total}, not 1")));
        }
        check_distinct(&universe, "belief universe")?;
        Ok(FiniteBelief { universe, probs })
    }

    pub fn uniform(universe: Vec<Dataset>) -> Result<Self> {
        let n = universe.len().max(1);
        let probs = vec![1.0 / n as f64; universe.len()];
        // Uniform weights of 1/n can miss unit sum by a few ulps.
        let mut belief = FiniteBelief::new(universe, probs)?;
        belief.renormalize();
        Ok(belief)
    }

    pub fn point_mass(x: Dataset) -> Self {
        FiniteBelief { universe: vec![x], probs: vec![1.0] }
    }

    /// Normalizes non-negative weights into a belief.
    pub fn from_weights(universe: Vec<Dataset>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidInput(format!("weights must have positive finite sum, got {total}")));
        }
        let probs = weights.iter().map(|w| w / total).collect();
        FiniteBelief::new(universe, probs)
    }

    pub fn universe(&self) -> &[Dataset] {
        &self.universe
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.universe.len()
    }

    pub fn is_empty(&self) -> bool {
        self.universe.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Dataset, f64)> {
        self.universe.iter().zip(self.probs.iter().copied())
    }

    /// Mass on `{x}`; zero when `x` is outside the universe.
    pub fn mass_at(&self, x: &Dataset) -> f64 {
        self.universe.iter().position(|z| z == x).map_or(0.0, |k| self.probs[k])
    }

    /// Datasets carrying positive mass.
    pub fn support(&self) -> impl Iterator<Item = (&Dataset, f64)> {
        self.iter().filter(|(_, p)| *p > 0.0)
    }

    /// Marginal mean and variance of coordinate `coord` (0-based).
    pub fn moments(&self, coord: usize) -> Result<(f64, f64)> {
        if let Some(bad) = self.universe.iter().find(|z| z.dim() <= coord) {
            return Err(Error::IncompatibleBelief(format!("dataset {bad} has no coordinate {}", coord + 1)));
        }
        let mean: f64 = self.iter().map(|(z, p)| p * z.coords()[coord]).sum();
        let var: f64 = self
            .iter()
            .map(|(z, p)| {
                let d = z.coords()[coord] - mean;
                p * d * d
            })
            .sum();
        Ok((mean, var))
    }

    /// Compares the two distributions as measures, ignoring zero-mass entries.
    pub fn same_distribution(&self, other: &FiniteBelief, tol: f64) -> bool {
        self.iter().all(|(z, p)| (p - other.mass_at(z)).abs() <= tol)
            && other.iter().all(|(z, p)| (p - self.mass_at(z)).abs() <= tol)
    }

    fn renormalize(&mut self) {
        let total: f64 = self.probs.iter().sum();
        for p in &mut self.probs {
            *p /= total;
        }
    }
}

impl fmt::Display for FiniteBelief {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, (z, p)) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{z}: {p}")?;
        }
        write!(f, "}}")
    }
}

/// `w δ_x + (1 − w) δ_x'`, the neighbouring alternative-hypothesis prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointPrior {
    pub x: Dataset,
    pub x_prime: Dataset,
    pub w: f64,
}

impl TwoPointPrior {
    pub fn new(x: Dataset, x_prime: Dataset, w: f64) -> Result<Self> {
        if x == x_prime {
            return Err(Error::InvalidInput(format!("two-point prior needs distinct datasets, got {x} twice")));
        }
        if !(w > 0.0 && w <= 1.0) {
            return Err(Error::InvalidInput(format!("two-point weight must lie in (0, 1], got {w}")));
        }
        Ok(TwoPointPrior { x, x_prime, w })
    }

    pub fn to_belief(&self) -> FiniteBelief {
        FiniteBelief { universe: vec![self.x.clone(), self.x_prime.clone()], probs: vec![self.w, 1.0 - self.w] }
    }
}

/// Bayes update of a finite prior after observing output index `output` of `mech`.
pub fn posterior_update(prior: &FiniteBelief, mech: &FiniteMechanism, output: usize) -> Result<FiniteBelief> {
    if output >= mech.alphabet().len() {
        return Err(Error::IndexMismatch(format!(
            "output index {output} outside alphabet of size {}",
            mech.alphabet().len()
        )));
    }
    let mut weights = Vec::with_capacity(prior.len());
    for (z, p) in prior.iter() {
        let row = mech
            .dataset_index(z)
            .ok_or_else(|| Error::IndexMismatch(format!("prior dataset {z} is not in the mechanism universe")))?;
        weights.push(p * mech.prob(row, output));
    }
    let evidence: f64 = weights.iter().sum();
    if evidence <= 0.0 {
        return Err(Error::ZeroEvidence { output: mech.alphabet()[output].clone() });
    }
    let probs = weights.into_iter().map(|w| w / evidence).collect();
    Ok(FiniteBelief { universe: prior.universe.clone(), probs })
}

/// Multivariate Gaussian belief `N(mean, cov)`; the covariance may be singular.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGaussianBelief", into = "RawGaussianBelief")]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    support_rank: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGaussianBelief {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<RawGaussianBelief> for GaussianBelief {
    type Error = Error;

    fn try_from(raw: RawGaussianBelief) -> Result<Self> {
        GaussianBelief::from_rows(raw.mean, raw.cov)
    }
}

impl From<GaussianBelief> for RawGaussianBelief {
    fn from(g: GaussianBelief) -> Self {
        let n = g.dim();
        RawGaussianBelief {
            mean: g.mean.iter().copied().collect(),
            cov: (0..n).map(|i| (0..n).map(|j| g.cov[(i, j)]).collect()).collect(),
        }
    }
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidInput("Gaussian belief needs dimension ≥ 1".into()));
        }
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "covariance is {}x{} but mean has length {n}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("Gaussian parameters must be finite".into()));
        }
        let scale = cov.amax().max(1.0);
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::InvalidInput(format!("covariance is not symmetric (max asymmetry {asym:e})")));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(cov.clone());
        let lmax = eig.eigenvalues.max();
        let lmin = eig.eigenvalues.min();
        if lmin < -RANK_TOL * lmax.max(1.0) {
            return Err(Error::InvalidInput(format!("covariance is not PSD (eigenvalue {lmin:e})")));
        }
        let support_rank = eig.eigenvalues.iter().filter(|l| **l > RANK_TOL * lmax).count();
        Ok(GaussianBelief { mean, cov, support_rank })
    }

    pub fn from_rows(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let n = mean.len();
        if cov.len() != n || cov.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!("covariance must be {n}x{n}")));
        }
        let flat: Vec<f64> = cov.into_iter().flatten().collect();
        GaussianBelief::new(DVector::from_vec(mean), DMatrix::from_row_slice(n, n, &flat))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn support_rank(&self) -> usize {
        self.support_rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.support_rank == self.dim()
    }

    /// Marginal mean and variance of coordinate `coord` (0-based).
    pub fn marginal(&self, coord: usize) -> Result<(f64, f64)> {
        if coord >= self.dim() {
            return Err(Error::IncompatibleBelief(format!(
                "coordinate {} outside dimension {}",
                coord + 1,
                self.dim()
            )));
        }
        Ok((self.mean[coord], self.cov[(coord, coord)]))
    }

    /// Mean `μ̄` and variance `Σ̄` of the coordinate average.
    pub fn average_moments(&self) -> (f64, f64) {
        let n = self.dim() as f64;
        (self.mean.sum() / n, self.cov.sum() / (n * n))
    }

    /// Draws `mean + R z` with `R Rᵀ = cov` from the eigendecomposition.
    ///
    /// Eigenvalues below the rank tolerance are treated as exact zeros, so
    /// draws from a rank-deficient belief stay on its support.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let eig = SymmetricEigen::new(self.cov.clone());
        let n = self.dim();
        let cutoff = RANK_TOL * eig.eigenvalues.amax();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scaled = DVector::from_fn(n, |k, _| {
            let l = eig.eigenvalues[k];
            if l > cutoff {
                l.sqrt() * z[k]
            } else {
                0.0
            }
        });
        &self.mean + eig.eigenvectors * scaled
    }

    pub fn same_distribution(&self, other: &GaussianBelief, tol: f64) -> bool {
        self.dim() == other.dim() && (&self.mean - &other.mean).amax() <= tol && (&self.cov - &other.cov).amax() <= tol
    }
}

/// A belief of either kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Belief {
    Finite(FiniteBelief),
    Gaussian(GaussianBelief),
}

impl Belief {
    pub fn same_distribution(&self, other: &Belief, tol: f64) -> bool {
        match (self, other) {
            (Belief::Finite(a), Belief::Finite(b)) => a.same_distribution(b, tol),
            (Belief::Gaussian(a), Belief::Gaussian(b)) => a.same_distribution(b, tol),
            _ => false,
        }
    }
}

impl From<FiniteBelief> for Belief {
    fn from(b: FiniteBelief) -> Self {
        Belief::Finite(b)
    }
}

impl From<GaussianBelief> for Belief {
    fn from(b: GaussianBelief) -> Self {
        Belief::Gaussian(b)
    }
}

/// Conditions a full-rank Gaussian prior on the coordinate average `x̄`.
///
/// With `u = (1/n, …, 1/n)` the posterior has mean `μ + Σu (x̄ − μ̄)/(uᵀΣu)` and
/// covariance `Σ − Σu uᵀΣ/(uᵀΣu)`, supported on the hyperplane `{z : z̄ = x̄}`.
pub fn gaussian_condition_on_average(prior: &GaussianBelief, xbar: f64) -> Result<GaussianBelief> {
    let n = prior.dim();
    if n < 2 {
        return Err(Error::Precondition("conditioning on the average needs n ≥ 2".into()));
    }
    if !prior.is_full_rank() {
        return Err(Error::Precondition(format!("prior must be full rank (rank {} < {n})", prior.support_rank)));
    }
    if !xbar.is_finite() {
        return Err(Error::InvalidInput(format!("average must be finite, got {xbar}")));
    }
    let u = DVector::from_element(n, 1.0 / n as f64);
    let sigma_u = &prior.cov * &u;
    let var_avg = u.dot(&sigma_u);
    let lmax = SymmetricEigen::new(prior.cov.clone()).eigenvalues.max();
    if var_avg <= RANK_TOL * lmax {
        return Err(Error::DegenerateInput(format!("variance of the average {var_avg:e} is numerically zero")));
    }
    let mu_bar = prior.mean.sum() / n as f64;
    let mean = &prior.mean + &sigma_u * ((xbar - mu_bar) / var_avg);
    let cov = &prior.cov - (&sigma_u * sigma_u.transpose()) / var_avg;
    GaussianBelief::new(mean, cov)
}

/// `Σ = diag(σ) Φ diag(σ)` together with the extreme eigenvalues of `Φ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationDecomposition {
    pub sigma: Vec<f64>,
    pub phi: DMatrix<f64>,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub cond: f64,
}

pub fn correlation_decompose(cov: &DMatrix<f64>) -> Result<CorrelationDecomposition> {
    let n = cov.nrows();
    if n == 0 || cov.ncols() != n {
        return Err(Error::InvalidInput("covariance must be square and non-empty".into()));
    }
    let scale = cov.amax().max(1.0);
    if (cov - cov.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::InvalidInput("covariance is not symmetric".into()));
    }
    let sigma: Vec<f64> = (0..n)
        .map(|i| {
            let v = cov[(i, i)];
            if v > 0.0 {
                Ok(v.sqrt())
            } else {
                Err(Error::InvalidInput(format!("diagonal entry {} is not positive: {v}", i + 1)))
            }
        })
        .collect::<Result<_>>()?;
    let phi =
        DMatrix::from_fn(
            n,
            n,
            |i, j| {
                if i == j {
                    1.0
                } else {
                    0.5 * (cov[(i, j)] + cov[(j, i)]) / (sigma[i] * sigma[j])
                }
            },
        );
    let eig = SymmetricEigen::new(phi.clone());
    let lambda_max = eig.eigenvalues.max();
    let lambda_min = eig.eigenvalues.min();
    if lambda_min <= RANK_TOL * lambda_max {
        return Err(Error::SingularCorrelation { lambda_min });
    }
    Ok(CorrelationDecomposition { sigma, phi, lambda_max, lambda_min, cond: lambda_max / lambda_min })
}

/// Parameters of the Gaussian prior class: the mean of the average may not be
/// too far from the truth (`r1`) and the prior may not be too degenerate (`r2`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClassSpec")]
pub struct GaussianClassSpec {
    pub r1: f64,
    pub r2: f64,
    pub x: Vec<f64>,
}

#[derive(Deserialize)]
struct RawClassSpec {
    r1: f64,
    r2: f64,
    x: Vec<f64>,
}

impl TryFrom<RawClassSpec> for GaussianClassSpec {
    type Error = Error;

    fn try_from(raw: RawClassSpec) -> Result<Self> {
        GaussianClassSpec::new(raw.r1, raw.r2, raw.x)
    }
}

impl GaussianClassSpec {
    pub fn new(r1: f64, r2: f64, x: Vec<f64>) -> Result<Self> {
        if !(r1 > 0.0 && r1.is_finite()) {
            return Err(Error::Precondition(format!("r1 must be positive, got {r1}")));
        }
        if !(r2 > 1.0 && r2.is_finite()) {
            return Err(Error::Precondition(format!("r2 must exceed 1, got {r2}")));
        }
        if x.len() < 2 {
            return Err(Error::Precondition(format!("dataset needs n ≥ 2 entries, got {}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset entries must be finite".into()));
        }
        Ok(GaussianClassSpec { r1, r2, x })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn xbar(&self) -> f64 {
        self.x.iter().sum::<f64>() / self.x.len() as f64
    }

    /// The guarantee level `r1 + log r2`.
    pub fn kappa(&self) -> f64 {
        self.r1 + self.r2.ln()
    }
}

/// Outcome of a class-membership test with the slack of every condition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMembership {
    pub member: bool,
    /// `(x̄ − μ̄)² / Σ̄`.
    pub mean_ratio: f64,
    /// `r1 − (x̄ − μ̄)² / Σ̄`.
    pub mean_slack: f64,
    pub cond: f64,
    /// `r2 (1 − σ_i² / ‖σ‖²) − c_Φ` per coordinate.
    pub cond_slacks: Vec<f64>,
}

/// Tests membership with weak inequalities on both conditions.
pub fn in_gaussian_class(prior: &GaussianBelief, spec: &GaussianClassSpec) -> Result<ClassMembership> {
    let n = prior.dim();
    if n != spec.dim() {
        return Err(Error::IndexMismatch(format!("prior has dimension {n}, dataset has {}", spec.dim())));
    }
    if !prior.is_full_rank() {
        return Err(Error::Precondition("class membership requires a full-rank prior".into()));
    }
    let (mu_bar, var_avg) = prior.average_moments();
    let shift = spec.xbar() - mu_bar;
    let mean_ratio = shift * shift / var_avg;
    let decomposition = correlation_decompose(prior.cov())?;
    let total: f64 = decomposition.sigma.iter().map(|s| s * s).sum();
    let cond_slacks: Vec<f64> =
        decomposition.sigma.iter().map(|s| spec.r2 * (1.0 - s * s / total) - decomposition.cond).collect();
    let mean_slack = spec.r1 - mean_ratio;
    let member = mean_slack >= 0.0 && cond_slacks.iter().all(|s| *s >= 0.0);
    Ok(ClassMembership { member, mean_ratio, mean_slack, cond: decomposition.cond, cond_slacks })
}

/// Proposal used by [`sample_gaussian_class`].
///
/// Each proposal draws, independently:
/// * a correlation matrix: the identity with probability `identity_prob`,
///   otherwise `(1 − t) I + t C` with `C` a normalized random Wishart matrix
///   and `t ~ U(0, 1)`;
/// * marginal variances: all equal with probability `equal_variance_prob`,
///   otherwise log-uniform around a common log-uniform scale;
/// * a mean `x + σ ⊙ z · U(0, 3)` shifted along `1` so that
///   `(x̄ − μ̄)² / Σ̄ = t r1`, with `t` just below 1 with probability
///   `boundary_prob` and uniform otherwise.
///
/// Proposals outside the class are rejected. Monte Carlo verdicts over the
/// class are relative to this proposal; the class itself carries no measure.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSampler {
    pub identity_prob: f64,
    pub equal_variance_prob: f64,
    pub boundary_prob: f64,
    pub max_log_spread: f64,
    /// Rejection budget per requested sample.
    pub attempts_per_sample: usize,
}

impl Default for ClassSampler {
    fn default() -> Self {
        ClassSampler {
            identity_prob: 0.25,
            equal_variance_prob: 0.25,
            boundary_prob: 0.25,
            max_log_spread: 2.0,
            attempts_per_sample: 2_000,
        }
    }
}

impl ClassSampler {
    fn propose(&self, spec: &GaussianClassSpec, rng: &mut ChaCha8Rng) -> Option<GaussianBelief> {
        let n = spec.dim();
        let phi = if rng.gen::<f64>() < self.identity_prob {
            DMatrix::identity(n, n)
        } else {
            let a = DMatrix::from_fn(n, n + 1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w = &a * a.transpose();
            let c = DMatrix::from_fn(n, n, |i, j| w[(i, j)] / (w[(i, i)] * w[(j, j)]).sqrt());
            let t: f64 = rng.gen();
            DMatrix::identity(n, n) * (1.0 - t) + c * t
        };
        let log_scale = rng.gen_range(-2.0..2.0) * std::f64::consts::LN_10;
        let sigma: Vec<f64> = if rng.gen::<f64>() < self.equal_variance_prob {
            vec![(0.5 * log_scale).exp(); n]
        } else {
            let spread = rng.gen_range(0.0..self.max_log_spread);
            (0..n).map(|_| (0.5 * (log_scale + spread * rng.gen_range(-1.0..1.0))).exp()).collect()
        };
        let cov =
            DMatrix::from_fn(n, n, |i, j| if i == j { sigma[i] * sigma[i] } else { sigma[i] * sigma[j] * phi[(i, j)] });
        let spread = rng.gen_range(0.0..3.0);
        let mut mean = DVector::from_fn(n, |i, _| spec.x[i] + sigma[i] * spread * rng.sample::<f64, _>(StandardNormal));
        let var_avg = cov.sum() / (n * n) as f64;
        let t = if rng.gen::<f64>() < self.boundary_prob { 1.0 - 1e-9 } else { rng.gen::<f64>() };
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let target_mu_bar = spec.xbar() - sign * (t * spec.r1 * var_avg).sqrt();
        let correction = target_mu_bar - mean.sum() / n as f64;
        mean.add_scalar_mut(correction);
        GaussianBelief::new(mean, cov).ok()
    }
}

/// Draws `count` members of the class by rejection from the default proposal.
pub fn sample_gaussian_class(spec: &GaussianClassSpec, seed: u64, count: usize) -> Result<Vec<GaussianBelief>> {
    sample_gaussian_class_with(&ClassSampler::default(), spec, seed, count)
}

pub fn sample_gaussian_class_with(
    sampler: &ClassSampler,
    spec: &GaussianClassSpec,
    seed: u64,
    count: usize,
) -> Result<Vec<GaussianBelief>> {
    if count == 0 {
        return Err(Error::Precondition("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = count.saturating_mul(sampler.attempts_per_sample);
    let mut accepted = Vec::with_capacity(count);
    let mut attempts = 0;
    while accepted.len() < count {
        if attempts >= budget {
            return Err(Error::SamplingExhausted { attempts, accepted: accepted.len(), requested: count });
        }
        attempts += 1;
        let Some(candidate) = sampler.propose(spec, &mut rng) else { continue };
        if !candidate.is_full_rank() {
            continue;
        }
        match in_gaussian_class(&candidate, spec) {
            Ok(m) if m.member => accepted.push(candidate),
            Ok(_) | Err(Error::SingularCorrelation { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(accepted)
}
