//! Exact rational kernels.
//!
//! Floating-point kernels cannot tell a structural zero from underflow, nor
//! whether a likelihood ratio sits exactly on `e^ε`. The small searches that
//! hinge on those distinctions run here, with the ratio bound `r = e^ε` itself
//! rational.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::beliefs::Dataset;
use crate::error::{Error, Result};
use crate::mechanisms::FiniteMechanism;

/// A row-stochastic kernel with rational entries; rows sum to exactly one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RationalKernel {
    rows: Vec<Vec<BigRational>>,
}

pub fn ratio(numer: i64, denom: i64) -> BigRational {
    BigRational::new(BigInt::from(numer), BigInt::from(denom))
}

impl RationalKernel {
    pub fn new(rows: Vec<Vec<BigRational>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || width == 0 {
            return Err(Error::InvalidInput("rational kernel must be non-empty".into()));
        }
        for (k, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::InvalidInput(format!("rational kernel row {k} has the wrong width")));
            }
            if row.iter().any(Signed::is_negative) {
                return Err(Error::InvalidInput(format!("rational kernel row {k} has a negative entry")));
            }
            let total: BigRational = row.iter().sum();
            if !total.is_one() {
                return Err(Error::InvalidInput(format!("rational kernel row {k} sums to {total}, not 1")));
            }
        }
        Ok(RationalKernel { rows })
    }

    /// Rows given as integer counts over a common denominator.
    pub fn from_counts(counts: &[Vec<i64>], denom: i64) -> Result<Self> {
        RationalKernel::new(counts.iter().map(|r| r.iter().map(|&c| ratio(c, denom)).collect()).collect())
    }

    /// Exact image of a floating-point mechanism (every double is a dyadic
    /// rational). Fails when the doubles do not sum to exactly one.
    pub fn from_mechanism(mech: &FiniteMechanism) -> Result<Self> {
        let rows = mech
            .kernel()
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&p| {
                        BigRational::from_float(p).ok_or_else(|| Error::InvalidInput(format!("{p} is not finite")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        RationalKernel::new(rows)
    }

    /// The deterministic kernel `t ↦ map[t]` onto `width` outputs.
    pub fn deterministic(map: &[usize], width: usize) -> Result<Self> {
        let rows = map
            .iter()
            .map(|&j| (0..width).map(|k| if k == j { BigRational::one() } else { BigRational::zero() }).collect())
            .collect();
        RationalKernel::new(rows)
    }

    pub fn rows(&self) -> &[Vec<BigRational>] {
        &self.rows
    }

    pub fn height(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.rows[0].len()
    }

    /// The matrix product `self · second`, i.e. chaining through a
    /// data-independent kernel.
    pub fn chain(&self, second: &RationalKernel) -> Result<RationalKernel> {
        if second.height() != self.width() {
            return Err(Error::IndexMismatch(format!(
                "cannot chain a kernel with {} outputs into one with {} inputs",
                self.width(),
                second.height()
            )));
        }
        let rows = self
            .rows
            .iter()
            .map(|row| {
                (0..second.width()).map(|j| row.iter().zip(&second.rows).map(|(a, k)| a * &k[j]).sum()).collect()
            })
            .collect();
        RationalKernel::new(rows)
    }

    /// Nearest floating-point mechanism.
    pub fn to_mechanism(&self, universe: Vec<Dataset>, alphabet: Vec<String>) -> Result<FiniteMechanism> {
        let kernel = self
            .rows
            .iter()
            .map(|row| row.iter().map(|p| p.to_f64().unwrap_or(f64::NAN)).collect::<Vec<f64>>())
            .map(|mut row| {
                // Rounding can push a row sum a few ulps away from one; put the
                // residue on the largest entry.
                let total: f64 = row.iter().sum();
                let k = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
                row[k] += 1.0 - total;
                row
            })
            .collect();
        FiniteMechanism::new(universe, alphabet, kernel)
    }

    /// Exact attained PDP level at likelihood-ratio bound `r` over the given
    /// ordered pairs: `max_(x,x′) Σ_t m(x,t) 1{m(x,t) > r·m(x′,t)}`.
    pub fn pdp_attained(&self, pairs: &[(usize, usize)], r: &BigRational) -> ExactPdp {
        let mut best = ExactPdp { delta: BigRational::zero(), pair: None, outputs: Vec::new() };
        for &(x, xp) in pairs {
            let outputs: Vec<usize> = (0..self.width()).filter(|&t| self.rows[x][t] > r * &self.rows[xp][t]).collect();
            let mass: BigRational = outputs.iter().map(|&t| &self.rows[x][t]).sum();
            if best.pair.is_none() || mass > best.delta {
                best = ExactPdp { delta: mass, pair: Some((x, xp)), outputs };
            }
        }
        best
    }
}

/// Result of an exact PDP evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExactPdp {
    pub delta: BigRational,
    /// The ordered pair attaining `delta` (first in input order).
    pub pair: Option<(usize, usize)>,
    pub outputs: Vec<usize>,
}

/// Rational rendering used in reports, e.g. `"3/5"`.
pub fn render(q: &BigRational) -> String {
    q.to_string()
}

/// A rational in a serializable form: exact text plus the nearest double.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactValue {
    pub exact: String,
    pub value: f64,
}

impl From<&BigRational> for ExactValue {
    fn from(q: &BigRational) -> Self {
        ExactValue { exact: render(q), value: q.to_f64().unwrap_or(f64::NAN) }
    }
}
