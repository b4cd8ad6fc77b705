//! Sidecar JSON written next to each converted image.
//!
//! Times in the sidecar are seconds; [`SequenceParams`] holds milliseconds.
//! This is the only place the conversion happens.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{ParamError, SequenceParams};

pub const FLIP_ANGLE: &str = "FlipAngle";
pub const ECHO_TIME: &str = "EchoTime";
pub const INVERSION_TIME: &str = "InversionTime";
pub const REPETITION_TIME: &str = "RepetitionTime";
pub const SCANNING_SEQUENCE: &str = "ScanningSequence";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SidecarError {
    #[error("malformed sidecar: {0}")]
    MalformedJson(String),
    #[error("{field} must be positive, got {value}")]
    NegativeTime { field: &'static str, value: f64 },
    #[error("FlipAngle must lie in (0, 180], got {0}")]
    BadFlipAngle(f64),
}

pub fn parse_sidecar(text: &[u8]) -> Result<SequenceParams, SidecarError> {
    let doc: Value = serde_json::from_slice(text).map_err(|e| SidecarError::MalformedJson(e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| SidecarError::MalformedJson("top level is not an object".into()))?;
    params_from_object(obj)
}

pub(crate) fn params_from_object(obj: &Map<String, Value>) -> Result<SequenceParams, SidecarError> {
    let fa_deg = number(obj, FLIP_ANGLE)?;
    if let Some(fa) = fa_deg {
        if !(fa > 0.0 && fa <= 180.0) {
            return Err(SidecarError::BadFlipAngle(fa));
        }
    }
    let te_ms = seconds_to_ms(obj, ECHO_TIME)?;
    let ti_ms = seconds_to_ms(obj, INVERSION_TIME)?;
    let tr_ms = seconds_to_ms(obj, REPETITION_TIME)?;
    let ss = sequence_codes(obj)?;

    let ir = ss.as_ref().is_some_and(|c| c.iter().any(|c| c == "IR")) || ti_ms.is_some();
    let params = SequenceParams {
        fa_deg,
        ir,
        ss,
        te_ms,
        ti_ms,
        tr_ms,
    };
    params.validate().map_err(|e| match e {
        ParamError::NegativeTime { field, value } => SidecarError::NegativeTime { field, value },
        ParamError::BadFlipAngle(v) => SidecarError::BadFlipAngle(v),
    })?;
    Ok(params)
}

fn number(obj: &Map<String, Value>, key: &'static str) -> Result<Option<f64>, SidecarError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => n
            .as_f64()
            .map(Some)
            .ok_or_else(|| SidecarError::MalformedJson(format!("{key} is not representable"))),
        Some(_) => Err(SidecarError::MalformedJson(format!("{key} must be a number"))),
    }
}

fn seconds_to_ms(obj: &Map<String, Value>, key: &'static str) -> Result<Option<f64>, SidecarError> {
    match number(obj, key)? {
        None => Ok(None),
        Some(s) if s.is_finite() && s > 0.0 => Ok(Some(s * 1000.0)),
        Some(s) => Err(SidecarError::NegativeTime { field: key, value: s }),
    }
}

// "SE\IR", "GR_IR" and ["SE", "IR"] all name multiple codes.
fn sequence_codes(obj: &Map<String, Value>) -> Result<Option<Vec<String>>, SidecarError> {
    let raw: Vec<&str> = match obj.get(SCANNING_SEQUENCE) {
        None | Some(Value::Null) => return Ok(None),
        Some(Value::String(s)) => vec![s.as_str()],
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str().ok_or_else(|| {
                    SidecarError::MalformedJson(format!("{SCANNING_SEQUENCE} entries must be strings"))
                })
            })
            .collect::<Result<_, _>>()?,
        Some(_) => {
            return Err(SidecarError::MalformedJson(format!(
                "{SCANNING_SEQUENCE} must be a string or a list of strings"
            )))
        }
    };
    Ok(Some(
        raw.iter()
            .flat_map(|s| s.split(['\\', '_']))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect(),
    ))
}
