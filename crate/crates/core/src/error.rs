use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The observed output has zero marginal probability under the prior.
    #[error("zero evidence: output `{output}` has zero marginal probability under the prior")]
    ZeroEvidence { output: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("singular correlation matrix: smallest eigenvalue {lambda_min:e} is below tolerance")]
    SingularCorrelation { lambda_min: f64 },

    #[error("sampling exhausted after {attempts} proposals ({accepted} accepted of {requested})")]
    SamplingExhausted { attempts: usize, accepted: usize, requested: usize },

    #[error("undefined moments: coordinate {coordinate} has variance {variance:e}")]
    UndefinedMoments { coordinate: usize, variance: f64 },

    #[error("property violation: {0}")]
    PropertyViolation(String),

    #[error("index mismatch: {0}")]
    IndexMismatch(String),

    #[error("unsupported prior class: {0}")]
    UnsupportedPriorClass(String),

    #[error("equivalence violation: {0}")]
    EquivalenceViolation(String),

    #[error("conjugacy violation: {0}")]
    ConjugacyViolation(String),

    #[error("structural violation: {0}")]
    StructuralViolation(String),

    #[error("incompatible belief: {0}")]
    IncompatibleBelief(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition failed: {0}")]
    Precondition(String),
}

impl Error {
    /// True for errors that signal a failed precondition or structural guard
    /// rather than malformed input.
    pub fn is_precondition(&self) -> bool {
        !matches!(self, Error::InvalidInput(_))
    }
}
