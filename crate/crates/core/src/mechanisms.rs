//! Finite data-release mechanisms (row-stochastic kernels), second-stage
//! kernels, tensoring and chaining, and neighbour relations.

use serde::{Deserialize, Serialize};

use crate::beliefs::{check_distinct, Dataset};
use crate::error::{Error, Result};

/// Rows of a kernel must sum to one within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

fn check_row(row: &[f64], width: usize, what: &str) -> Result<()> {
    if row.len() != width {
        return Err(Error::InvalidInput(format!("{what} has {} entries, expected {width}", row.len())));
    }
    if let Some((k, v)) = row.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidInput(format!("{what} entry {k} is invalid: {v}")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::InvalidInput(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

fn check_labels(labels: &[String], what: &str) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::InvalidInput(format!("{what} is empty")));
    }
    for (i, a) in labels.iter().enumerate() {
        if labels[..i].contains(a) {
            return Err(Error::InvalidInput(format!("{what} contains duplicate label `{a}`")));
        }
    }
    Ok(())
}

/// A row-stochastic kernel from a finite dataset universe to a finite alphabet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMechanism")]
pub struct FiniteMechanism {
    universe: Vec<Dataset>,
    alphabet: Vec<String>,
    kernel: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawMechanism {
    universe: Vec<Dataset>,
    alphabet: Vec<String>,
    kernel: Vec<Vec<f64>>,
}

impl TryFrom<RawMechanism> for FiniteMechanism {
    type Error = Error;

    fn try_from(raw: RawMechanism) -> Result<Self> {
        FiniteMechanism::new(raw.universe, raw.alphabet, raw.kernel)
    }
}

impl FiniteMechanism {
    pub fn new(universe: Vec<Dataset>, alphabet: Vec<String>, kernel: Vec<Vec<f64>>) -> Result<Self> {
        if universe.is_empty() {
            return Err(Error::InvalidInput("mechanism universe is empty".into()));
        }
        check_distinct(&universe, "mechanism universe")?;
        check_labels(&alphabet, "mechanism alphabet")?;
        if kernel.len() != universe.len() {
            return Err(Error::InvalidInput(format!(
                "kernel has {} rows for {} datasets",
                kernel.len(),
                universe.len()
            )));
        }
        for (i, row) in kernel.iter().enumerate() {
            check_row(row, alphabet.len(), &format!("kernel row {i}"))?;
        }
        Ok(FiniteMechanism { universe, alphabet, kernel })
    }

    /// The mechanism that releases the dataset itself.
    pub fn identity(universe: Vec<Dataset>) -> Result<Self> {
        let alphabet = universe.iter().map(|d| d.to_string()).collect();
        let n = universe.len();
        let kernel = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        FiniteMechanism::new(universe, alphabet, kernel)
    }

    /// Every dataset gets the same output distribution.
    pub fn constant(universe: Vec<Dataset>, alphabet: Vec<String>, row: Vec<f64>) -> Result<Self> {
        let kernel = vec![row; universe.len()];
        FiniteMechanism::new(universe, alphabet, kernel)
    }

    pub fn universe(&self) -> &[Dataset] {
        &self.universe
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn kernel(&self) -> &[Vec<f64>] {
        &self.kernel
    }

    pub fn row(&self, dataset: usize) -> &[f64] {
        &self.kernel[dataset]
    }

    pub fn prob(&self, dataset: usize, output: usize) -> f64 {
        self.kernel[dataset][output]
    }

    pub fn dataset_index(&self, x: &Dataset) -> Option<usize> {
        self.universe.iter().position(|z| z == x)
    }

    pub fn output_index(&self, label: &str) -> Option<usize> {
        self.alphabet.iter().position(|t| t == label)
    }

    /// Deterministic post-processing `t ↦ map[t]` into `alphabet`.
    pub fn relabel(&self, map: &[usize], alphabet: Vec<String>) -> Result<FiniteMechanism> {
        if map.len() != self.alphabet.len() {
            return Err(Error::IndexMismatch(format!(
                "relabelling map has {} entries for {} outputs",
                map.len(),
                self.alphabet.len()
            )));
        }
        if let Some(bad) = map.iter().find(|k| **k >= alphabet.len()) {
            return Err(Error::IndexMismatch(format!("relabelling target {bad} outside new alphabet")));
        }
        let kernel = self
            .kernel
            .iter()
            .map(|row| {
                let mut out = vec![0.0; alphabet.len()];
                for (t, p) in row.iter().enumerate() {
                    out[map[t]] += p;
                }
                out
            })
            .collect();
        FiniteMechanism::new(self.universe.clone(), alphabet, kernel)
    }
}

/// A second-stage kernel whose rows are indexed by `(dataset, first-stage output)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageKernel {
    universe: Vec<Dataset>,
    inputs: Vec<String>,
    alphabet: Vec<String>,
    /// `rows[x][t1][t2]`.
    rows: Vec<Vec<Vec<f64>>>,
}

impl StageKernel {
    pub fn new(
        universe: Vec<Dataset>,
        inputs: Vec<String>,
        alphabet: Vec<String>,
        rows: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        check_distinct(&universe, "stage kernel universe")?;
        check_labels(&inputs, "stage kernel inputs")?;
        check_labels(&alphabet, "stage kernel alphabet")?;
        if rows.len() != universe.len() {
            return Err(Error::InvalidInput(format!(
                "stage kernel has {} dataset blocks for {} datasets",
                rows.len(),
                universe.len()
            )));
        }
        for (x, block) in rows.iter().enumerate() {
            if block.len() != inputs.len() {
                return Err(Error::InvalidInput(format!(
                    "stage kernel block {x} has {} rows for {} inputs",
                    block.len(),
                    inputs.len()
                )));
            }
            for (t, row) in block.iter().enumerate() {
                check_row(row, alphabet.len(), &format!("stage kernel row ({x}, {t})"))?;
            }
        }
        Ok(StageKernel { universe, inputs, alphabet, rows })
    }

    /// A kernel that ignores the dataset: `matrix[t1][t2]` for every row.
    pub fn data_independent(
        universe: Vec<Dataset>,
        inputs: Vec<String>,
        alphabet: Vec<String>,
        matrix: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let rows = vec![matrix; universe.len()];
        StageKernel::new(universe, inputs, alphabet, rows)
    }

    /// A kernel that ignores the first-stage output: `mech(x, ·)` for every `t1`.
    pub fn broadcast(mech: &FiniteMechanism, inputs: Vec<String>) -> Result<Self> {
        let rows = mech.kernel.iter().map(|row| vec![row.clone(); inputs.len()]).collect();
        StageKernel::new(mech.universe.clone(), inputs, mech.alphabet.clone(), rows)
    }

    /// The identity on the first-stage alphabet.
    pub fn identity(universe: Vec<Dataset>, inputs: Vec<String>) -> Result<Self> {
        let n = inputs.len();
        let matrix = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        StageKernel::data_independent(universe, inputs.clone(), inputs, matrix)
    }

    pub fn universe(&self) -> &[Dataset] {
        &self.universe
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn prob(&self, dataset: usize, input: usize, output: usize) -> f64 {
        self.rows[dataset][input][output]
    }

    /// True when rows agree across datasets for every first-stage output.
    pub fn is_data_independent(&self) -> bool {
        self.rows.windows(2).all(|w| w[0] == w[1])
    }

    /// The mechanism `x ↦ K((x, t1), ·)` for a fixed first-stage output.
    pub fn slice(&self, input: usize) -> Result<FiniteMechanism> {
        if input >= self.inputs.len() {
            return Err(Error::IndexMismatch(format!("slice {input} outside {} inputs", self.inputs.len())));
        }
        let kernel = self.rows.iter().map(|block| block[input].clone()).collect();
        FiniteMechanism::new(self.universe.clone(), self.alphabet.clone(), kernel)
    }

    fn check_follows(&self, first: &FiniteMechanism) -> Result<()> {
        if self.universe != first.universe {
            return Err(Error::IndexMismatch("second stage is indexed by a different universe".into()));
        }
        if self.inputs != first.alphabet {
            return Err(Error::IndexMismatch(format!(
                "second stage expects inputs {:?} but the first stage emits {:?}",
                self.inputs, first.alphabet
            )));
        }
        Ok(())
    }
}

/// JSON form of a second-stage kernel. A two-dimensional `kernel` is data
/// independent and is broadcast over the first stage's universe.
#[derive(Clone, Debug, Deserialize)]
pub struct StageKernelSpec {
    #[serde(default)]
    pub universe: Option<Vec<Dataset>>,
    pub inputs: Vec<String>,
    pub alphabet: Vec<String>,
    pub kernel: KernelRows,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum KernelRows {
    Shared(Vec<Vec<f64>>),
    PerDataset(Vec<Vec<Vec<f64>>>),
}

impl StageKernelSpec {
    pub fn resolve(self, first: &FiniteMechanism) -> Result<StageKernel> {
        let universe = self.universe.unwrap_or_else(|| first.universe.clone());
        let kernel = match self.kernel {
            KernelRows::Shared(m) => StageKernel::data_independent(universe, self.inputs, self.alphabet, m)?,
            KernelRows::PerDataset(r) => StageKernel::new(universe, self.inputs, self.alphabet, r)?,
        };
        kernel.check_follows(first)?;
        Ok(kernel)
    }
}

/// `(M ⊗ K)(x, (t1, t2)) = M(x, t1) K((x, t1), t2)`, outputs ordered `t1`-major.
pub fn tensor(first: &FiniteMechanism, second: &StageKernel) -> Result<FiniteMechanism> {
    second.check_follows(first)?;
    let alphabet =
        first.alphabet.iter().flat_map(|a| second.alphabet.iter().map(move |b| format!("({a},{b})"))).collect();
    let kernel = first
        .kernel
        .iter()
        .enumerate()
        .map(|(x, row)| {
            row.iter().enumerate().flat_map(|(t1, p)| second.rows[x][t1].iter().map(move |q| p * q)).collect()
        })
        .collect();
    FiniteMechanism::new(first.universe.clone(), alphabet, kernel)
}

/// The marginal kernel `MK(x, t2) = Σ_t1 M(x, t1) K((x, t1), t2)`.
///
/// With `data_independent` set, `K` must not depend on the dataset.
pub fn chain(first: &FiniteMechanism, second: &StageKernel, data_independent: bool) -> Result<FiniteMechanism> {
    second.check_follows(first)?;
    if data_independent && !second.is_data_independent() {
        return Err(Error::StructuralViolation("post-processing kernel depends on the dataset".into()));
    }
    let width = second.alphabet.len();
    let kernel = first
        .kernel
        .iter()
        .enumerate()
        .map(|(x, row)| {
            let mut out = vec![0.0; width];
            for (t1, p) in row.iter().enumerate() {
                for (t2, q) in second.rows[x][t1].iter().enumerate() {
                    out[t2] += p * q;
                }
            }
            out
        })
        .collect();
    FiniteMechanism::new(first.universe.clone(), second.alphabet.clone(), kernel)
}

/// Sums a `t1`-major product mechanism over its first component.
pub fn marginalize_first(product: &FiniteMechanism, second_alphabet: Vec<String>) -> Result<FiniteMechanism> {
    let width = second_alphabet.len();
    if width == 0 || !product.alphabet.len().is_multiple_of(width) {
        return Err(Error::IndexMismatch(format!(
            "product alphabet of size {} is not a multiple of {width}",
            product.alphabet.len()
        )));
    }
    let map: Vec<usize> = (0..product.alphabet.len()).map(|o| o % width).collect();
    product.relabel(&map, second_alphabet)
}

fn scalar_universe(k: usize) -> Vec<Dataset> {
    (0..k).map(|i| Dataset::scalar(i as f64)).collect()
}

fn index_alphabet(k: usize) -> Vec<String> {
    (0..k).map(|i| i.to_string()).collect()
}

/// k-ary randomized response: keep the value with probability `e^ε/(e^ε + k − 1)`.
pub fn randomized_response(eps: f64, k: usize) -> Result<FiniteMechanism> {
    if k < 2 {
        return Err(Error::Precondition(format!("randomized response needs k ≥ 2, got {k}")));
    }
    if !(eps >= 0.0) {
        return Err(Error::Precondition(format!("ε must be non-negative, got {eps}")));
    }
    // Written with e^{-ε} so that large ε cannot overflow.
    let damp = (-eps).exp();
    let denom = 1.0 + (k as f64 - 1.0) * damp;
    let keep = 1.0 / denom;
    let flip = damp / denom;
    let kernel = (0..k).map(|i| (0..k).map(|j| if i == j { keep } else { flip }).collect()).collect();
    FiniteMechanism::new(scalar_universe(k), index_alphabet(k), kernel)
}

/// Truncated geometric mechanism on `{0, …, k−1}`: `m(x, t) ∝ e^{−ε|x − t|}`.
pub fn truncated_geometric(eps: f64, k: usize) -> Result<FiniteMechanism> {
    if k < 2 || !(eps >= 0.0) {
        return Err(Error::Precondition(format!("need k ≥ 2 and ε ≥ 0, got k = {k}, ε = {eps}")));
    }
    let kernel = (0..k)
        .map(|x| {
            let w: Vec<f64> = (0..k).map(|t| (-eps * (x as f64 - t as f64).abs()).exp()).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|v| v / total).collect()
        })
        .collect();
    FiniteMechanism::new(scalar_universe(k), index_alphabet(k), kernel)
}

/// The empirical average `x̄ = (1/n) Σ x_i`.
pub fn average_mechanism(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::Precondition(format!("average mechanism needs n ≥ 2, got {}", x.len())));
    }
    Ok(x.iter().sum::<f64>() / x.len() as f64)
}

/// Mechanisms that release a function of the data.
#[derive(Clone, Debug, PartialEq)]
pub enum DeterministicMechanism {
    /// `x ↦ images[x]` on a finite universe.
    Finite { universe: Vec<Dataset>, images: Vec<String> },
    /// `x ↦ x̄` on `R^n`.
    Average,
}

impl DeterministicMechanism {
    /// The point-mass kernel of a finite deterministic map.
    pub fn to_kernel(&self) -> Result<FiniteMechanism> {
        match self {
            DeterministicMechanism::Finite { universe, images } => {
                if images.len() != universe.len() {
                    return Err(Error::InvalidInput("deterministic map must be total on its universe".into()));
                }
                let mut alphabet: Vec<String> = Vec::new();
                for t in images {
                    if !alphabet.contains(t) {
                        alphabet.push(t.clone());
                    }
                }
                let kernel =
                    images.iter().map(|t| alphabet.iter().map(|a| if a == t { 1.0 } else { 0.0 }).collect()).collect();
                FiniteMechanism::new(universe.clone(), alphabet, kernel)
            }
            DeterministicMechanism::Average => {
                Err(Error::UnsupportedPriorClass("the average mechanism has a continuous output space".into()))
            }
        }
    }
}

/// A symmetric, irreflexive relation on datasets, stored as unordered pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNeighbors")]
pub struct NeighborRelation {
    pairs: Vec<(Dataset, Dataset)>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawNeighbors {
    Wrapped { pairs: Vec<(Dataset, Dataset)> },
    Bare(Vec<(Dataset, Dataset)>),
}

impl TryFrom<RawNeighbors> for NeighborRelation {
    type Error = Error;

    fn try_from(raw: RawNeighbors) -> Result<Self> {
        match raw {
            RawNeighbors::Wrapped { pairs } | RawNeighbors::Bare(pairs) => NeighborRelation::from_pairs(pairs),
        }
    }
}

impl NeighborRelation {
    /// Builds the symmetric closure of `pairs`; duplicates are merged.
    pub fn from_pairs(pairs: Vec<(Dataset, Dataset)>) -> Result<Self> {
        let mut unique: Vec<(Dataset, Dataset)> = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            if a == b {
                return Err(Error::InvalidInput(format!("neighbour relation must be irreflexive ({a} ~ {a})")));
            }
            let seen = unique.iter().any(|(p, q)| (p == &a && q == &b) || (p == &b && q == &a));
            if !seen {
                unique.push((a, b));
            }
        }
        Ok(NeighborRelation { pairs: unique })
    }

    /// Every pair of distinct datasets.
    pub fn complete(universe: &[Dataset]) -> Self {
        let pairs = (0..universe.len())
            .flat_map(|i| ((i + 1)..universe.len()).map(move |j| (i, j)))
            .map(|(i, j)| (universe[i].clone(), universe[j].clone()))
            .collect();
        NeighborRelation { pairs }
    }

    pub fn pairs(&self) -> &[(Dataset, Dataset)] {
        &self.pairs
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: &Dataset, b: &Dataset) -> bool {
        self.pairs.iter().any(|(p, q)| (p == a && q == b) || (p == b && q == a))
    }

    /// Neighbour lists by position in `universe`, each sorted ascending.
    pub fn indexed(&self, universe: &[Dataset]) -> Result<Vec<Vec<usize>>> {
        let find = |d: &Dataset| {
            universe
                .iter()
                .position(|z| z == d)
                .ok_or_else(|| Error::IndexMismatch(format!("neighbour {d} is not in the universe")))
        };
        let mut lists = vec![Vec::new(); universe.len()];
        for (a, b) in &self.pairs {
            let (i, j) = (find(a)?, find(b)?);
            lists[i].push(j);
            lists[j].push(i);
        }
        for l in &mut lists {
            l.sort_unstable();
        }
        Ok(lists)
    }

    /// Ordered pairs `(x, x')` in both orientations, sorted by universe position.
    pub fn ordered_pairs(&self, universe: &[Dataset]) -> Result<Vec<(usize, usize)>> {
        let lists = self.indexed(universe)?;
        Ok(lists.iter().enumerate().flat_map(|(i, l)| l.iter().map(move |j| (i, *j))).collect())
    }
}

/// Pairs of equal-length tuples at Hamming distance exactly one.
pub fn hamming_neighbors(universe: &[Dataset]) -> Result<NeighborRelation> {
    if let Some(first) = universe.first() {
        if let Some(bad) = universe.iter().find(|d| d.dim() != first.dim()) {
            return Err(Error::InvalidInput(format!("Hamming neighbours need equal-length tuples ({first} vs {bad})")));
        }
    }
    let mut pairs = Vec::new();
    for i in 0..universe.len() {
        for j in (i + 1)..universe.len() {
            let differing = universe[i].coords().iter().zip(universe[j].coords()).filter(|(a, b)| a != b).count();
            if differing == 1 {
                pairs.push((universe[i].clone(), universe[j].clone()));
            }
        }
    }
    Ok(NeighborRelation { pairs })
}
