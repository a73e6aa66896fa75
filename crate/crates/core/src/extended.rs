//! Extended reals for score arithmetic.
//!
//! Scores may be `+∞` (a log score at a point of zero mass). Differences of
//! two equal infinities are defined as zero, and `0 · ∞` is zero inside
//! expectations, so no operation here ever produces NaN.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Neg};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtendedReal {
    NegInf,
    Finite(f64),
    PosInf,
}

impl ExtendedReal {
    pub const ZERO: ExtendedReal = ExtendedReal::Finite(0.0);

    /// Maps IEEE infinities onto the explicit variants.
    ///
    /// # Panics
    ///
    /// Panics on NaN.
    pub fn from_f64(v: f64) -> Self {
        assert!(!v.is_nan(), "NaN is not an extended real");
        if v == f64::INFINITY {
            ExtendedReal::PosInf
        } else if v == f64::NEG_INFINITY {
            ExtendedReal::NegInf
        } else {
            ExtendedReal::Finite(v)
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            ExtendedReal::NegInf => f64::NEG_INFINITY,
            ExtendedReal::Finite(v) => v,
            ExtendedReal::PosInf => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            _ => None,
        }
    }

    /// `self − other` with `(+∞) − (+∞) = (−∞) − (−∞) = 0`.
    pub fn minus(self, other: ExtendedReal) -> ExtendedReal {
        use ExtendedReal::*;
        match (self, other) {
            (PosInf, PosInf) | (NegInf, NegInf) => Self::ZERO,
            (PosInf, _) | (_, NegInf) => PosInf,
            (NegInf, _) | (_, PosInf) => NegInf,
            (Finite(a), Finite(b)) => Finite(a - b),
        }
    }

    /// Multiplies by a probability weight; a zero weight annihilates infinities.
    pub fn weighted(self, weight: f64) -> ExtendedReal {
        debug_assert!(weight >= 0.0);
        if weight == 0.0 {
            return ExtendedReal::ZERO;
        }
        match self {
            ExtendedReal::Finite(v) => ExtendedReal::Finite(v * weight),
            inf => inf,
        }
    }

    /// `self ≤ bound + tol` for a finite bound.
    pub fn le_within(self, bound: f64, tol: f64) -> bool {
        match self {
            ExtendedReal::NegInf => true,
            ExtendedReal::PosInf => false,
            ExtendedReal::Finite(v) => v <= bound + tol,
        }
    }

    /// Equality up to an absolute tolerance on finite values; infinities
    /// must match exactly.
    pub fn approx_eq(self, other: ExtendedReal, tol: f64) -> bool {
        match (self, other) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => (a - b).abs() <= tol,
            (a, b) => a == b,
        }
    }
}

impl From<f64> for ExtendedReal {
    fn from(v: f64) -> Self {
        ExtendedReal::from_f64(v)
    }
}

impl Add for ExtendedReal {
    type Output = ExtendedReal;

    /// Opposite infinities cancel to zero, mirroring [`ExtendedReal::minus`].
    fn add(self, rhs: ExtendedReal) -> ExtendedReal {
        self.minus(-rhs)
    }
}

impl Neg for ExtendedReal {
    type Output = ExtendedReal;

    fn neg(self) -> ExtendedReal {
        match self {
            ExtendedReal::NegInf => ExtendedReal::PosInf,
            ExtendedReal::PosInf => ExtendedReal::NegInf,
            ExtendedReal::Finite(v) => ExtendedReal::Finite(-v),
        }
    }
}

impl std::iter::Sum for ExtendedReal {
    fn sum<I: Iterator<Item = ExtendedReal>>(iter: I) -> Self {
        iter.fold(ExtendedReal::ZERO, |acc, v| acc + v)
    }
}

impl PartialOrd for ExtendedReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        use ExtendedReal::*;
        match (self, other) {
            (Finite(a), Finite(b)) => a.partial_cmp(b),
            (NegInf, NegInf) | (PosInf, PosInf) => Some(Ordering::Equal),
            (NegInf, _) | (_, PosInf) => Some(Ordering::Less),
            (PosInf, _) | (_, NegInf) => Some(Ordering::Greater),
        }
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::NegInf => write!(f, "-inf"),
            ExtendedReal::PosInf => write!(f, "inf"),
            ExtendedReal::Finite(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(v) => serializer.serialize_f64(*v),
            ExtendedReal::PosInf => serializer.serialize_str("inf"),
            ExtendedReal::NegInf => serializer.serialize_str("-inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) => Ok(ExtendedReal::Finite(v)),
            Repr::Text(s) => match s.as_str() {
                "inf" | "+inf" | "Infinity" => Ok(ExtendedReal::PosInf),
                "-inf" | "-Infinity" => Ok(ExtendedReal::NegInf),
                other => {
                    Err(serde::de::Error::custom(format!("expected a number, \"inf\" or \"-inf\", got \"{other}\"")))
                }
            },
        }
    }
}
