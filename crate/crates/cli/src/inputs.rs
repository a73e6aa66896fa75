//! Loading JSON inputs given either inline or as file paths.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use ppcert_core::certify::{GuaranteeSpec, PriorClass};

/// An input that could not be read or parsed. Always exit status 2.
#[derive(Debug)]
pub struct ParseError {
    pub what: &'static str,
    pub source: String,
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cannot parse {} from {}", self.what, self.source)?;
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, " (line {l}, column {c})")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Treats `arg` as inline JSON when it starts with `{` or `[`, otherwise as a
/// path.
pub fn load<T: DeserializeOwned>(what: &'static str, arg: &str) -> Result<T, ParseError> {
    let trimmed = arg.trim_start();
    let (text, source) = if trimmed.starts_with('{') || trimmed.starts_with('[') {
        (arg.to_string(), "inline JSON".to_string())
    } else {
        let text = std::fs::read_to_string(Path::new(arg)).map_err(|e| ParseError {
            what,
            source: format!("`{arg}`"),
            message: e.to_string(),
            line: None,
            column: None,
        })?;
        (text, format!("`{arg}`"))
    };
    serde_json::from_str(&text).map_err(|e| {
        // serde_json appends " at line L column C"; report position separately.
        let full = e.to_string();
        let message = match full.rfind(" at line ") {
            Some(i) if e.line() > 0 => full[..i].to_string(),
            _ => full,
        };
        ParseError {
            what,
            source,
            message,
            line: (e.line() > 0).then_some(e.line()),
            column: (e.line() > 0).then_some(e.column()),
        }
    })
}

/// The Gaussian class may be given as a bare `{r1, r2, x}` object or as a
/// guarantee whose prior class is Gaussian.
#[derive(Deserialize)]
#[serde(untagged)]
enum GaussianInput {
    Bare { r1: f64, r2: f64, x: Vec<f64> },
    Guarantee { prior_class: serde_json::Value },
}

#[derive(Deserialize)]
struct ClassFields {
    r1: f64,
    r2: f64,
    x: Vec<f64>,
}

/// Raw class parameters; validation is left to `GaussianClassSpec::new` so
/// that out-of-range values are precondition failures, not parse errors.
pub fn load_gaussian_class(arg: &str) -> Result<(f64, f64, Vec<f64>), ParseError> {
    match load::<GaussianInput>("Gaussian class", arg)? {
        GaussianInput::Bare { r1, r2, x } => Ok((r1, r2, x)),
        GaussianInput::Guarantee { prior_class } => {
            let spec = prior_class.get("spec").cloned().unwrap_or(serde_json::Value::Null);
            let fields: ClassFields = serde_json::from_value(spec).map_err(|e| ParseError {
                what: "Gaussian class",
                source: format!("`{arg}`"),
                message: format!("prior_class.spec: {e}"),
                line: None,
                column: None,
            })?;
            Ok((fields.r1, fields.r2, fields.x))
        }
    }
}

/// Rejects guarantees whose class cannot be used with a finite mechanism.
pub fn finite_guarantee(spec: GuaranteeSpec, arg: &str) -> Result<GuaranteeSpec, ParseError> {
    if let PriorClass::Gaussian { .. } = spec.prior_class {
        return Err(ParseError {
            what: "guarantee",
            source: format!("`{arg}`"),
            message: "prior_class: a Gaussian class needs the `average` command".into(),
            line: None,
            column: None,
        });
    }
    Ok(spec)
}

pub fn parse_list(arg: &str) -> Result<Vec<f64>, ParseError> {
    arg.split(',')
        .enumerate()
        .map(|(i, s)| {
            s.trim().parse::<f64>().map_err(|e| ParseError {
                what: "dataset",
                source: format!("`{arg}`"),
                message: format!("entry {i}: {e}"),
                line: None,
                column: None,
            })
        })
        .collect()
}
