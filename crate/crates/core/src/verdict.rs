//! Parsing of the single-line `VERDICT {...}` blocks scorers and judges end
//! their replies with.
//!
//! The last non-empty line of the reply must be the literal token `VERDICT `
//! followed by one JSON object. Numbers must be plain JSON numbers; NaN and
//! infinities are rejected.

use serde::de::DeserializeOwned;
use serde::Deserialize;

pub const VERDICT_PREFIX: &str = "VERDICT ";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerdictError {
    #[error("reply does not end with a VERDICT line")]
    Missing,
    #[error("malformed VERDICT payload: {0}")]
    Malformed(String),
    #[error("VERDICT value out of range: {0}")]
    OutOfRange(String),
}

/// Extracts and deserializes the trailing verdict payload.
pub fn parse_verdict<T: DeserializeOwned>(reply: &str) -> Result<T, VerdictError> {
    let last = reply
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or(VerdictError::Missing)?;
    let payload = last
        .strip_prefix(VERDICT_PREFIX)
        .ok_or(VerdictError::Missing)?;
    serde_json::from_str(payload).map_err(|e| VerdictError::Malformed(e.to_string()))
}

/// The scorer verdict: `{"econ": n, "social": n, "rationale": s}`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompassVerdict {
    pub econ: f64,
    pub social: f64,
    pub rationale: String,
}

/// The similarity-judge verdict: `{"agreement": n, "rationale"?: s}`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementVerdict {
    pub agreement: f64,
    #[serde(default)]
    pub rationale: Option<String>,
}

pub fn check_range(name: &str, value: f64, lo: f64, hi: f64) -> Result<f64, VerdictError> {
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(value)
    } else {
        Err(VerdictError::OutOfRange(format!(
            "{name}={value} not in [{lo}, {hi}]"
        )))
    }
}
