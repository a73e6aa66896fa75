//! Certification of score-based privacy (PP) guarantees.
//!
//! A release mechanism is judged by how much it can improve a Receiver's
//! prediction of the confidential dataset, measured by proper scoring rules.
//! The crate evaluates these tail guarantees exactly on finite mechanisms,
//! by sampling on Gaussian priors for the average mechanism, and checks the
//! structural properties (probabilistic differential privacy equivalence,
//! composition, post-processing) on concrete instances.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod battery;
pub mod beliefs;
pub mod certify;
pub mod error;
pub mod exact;
pub mod extended;
pub mod mechanisms;
pub mod scores;

pub use beliefs::{Belief, Dataset, FiniteBelief, GaussianBelief, GaussianClassSpec, TwoPointPrior};
pub use certify::{certify_pp, CertificationReport, GuaranteeSpec, PriorClass, WGrid};
pub use error::{Error, Result};
pub use extended::ExtendedReal;
pub use mechanisms::{FiniteMechanism, NeighborRelation, StageKernel};
pub use scores::{Score, ScoringRule};
