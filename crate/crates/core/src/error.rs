use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::converter::ConversionError;
use crate::layout::StateError;
use crate::model::{SessionLabel, SubjectLabel, UnclassifiableSeries};
use crate::request::RequestError;
use crate::validator::Violation;

#[derive(Debug, Error)]
pub enum ToolboxError {
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error("output {0} exists and is not empty")]
    OutputNotEmpty(PathBuf),
    #[error("dataset {0} is locked by another operation")]
    Busy(PathBuf),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("sub-{subject}/ses-{session} is already in the dataset ({})", if *identical_source { "same source content" } else { "different source content" })]
    SessionConflict {
        subject: SubjectLabel,
        session: SessionLabel,
        identical_source: bool,
    },
    #[error("converting sub-{subject}/ses-{session}: {source}")]
    Conversion {
        subject: SubjectLabel,
        session: SessionLabel,
        #[source]
        source: ConversionError,
    },
    #[error("unable to classify {}", failed_names(.0))]
    ClassificationFailed(Vec<UnclassifiableSeries>),
    #[error("dataset failed validation: {} violation(s)", .0.len())]
    InvalidLayout(Vec<Violation>),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

fn failed_names(failed: &[UnclassifiableSeries]) -> String {
    failed
        .iter()
        .map(|f| format!("{} ({})", f.series_name, f.reason))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Coarse error families; each front end maps these to its own codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    NotFound,
    Conflict,
    Classification,
    Internal,
}

impl ErrorClass {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorClass::Validation => 400,
            ErrorClass::NotFound => 404,
            ErrorClass::Conflict => 409,
            ErrorClass::Classification => 422,
            ErrorClass::Internal => 500,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Validation | ErrorClass::NotFound => 2,
            ErrorClass::Classification => 3,
            ErrorClass::Internal => 4,
            ErrorClass::Conflict => 5,
        }
    }
}

impl ToolboxError {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        ToolboxError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ToolboxError::Request(e) => e.code(),
            ToolboxError::OutputNotEmpty(_) => "OutputNotEmpty",
            ToolboxError::Busy(_) => "Busy",
            ToolboxError::State(e) => e.code(),
            ToolboxError::SessionConflict { .. } => "SessionConflict",
            ToolboxError::Conversion { source, .. } => source.code(),
            ToolboxError::ClassificationFailed(_) => "ClassificationFailed",
            ToolboxError::InvalidLayout(_) => "InvalidLayout",
            ToolboxError::Io { .. } => "IoError",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            ToolboxError::Request(_) => ErrorClass::Validation,
            ToolboxError::OutputNotEmpty(_)
            | ToolboxError::Busy(_)
            | ToolboxError::SessionConflict { .. } => ErrorClass::Conflict,
            ToolboxError::State(StateError::StateFileMissing(_)) => ErrorClass::NotFound,
            ToolboxError::ClassificationFailed(_) => ErrorClass::Classification,
            ToolboxError::State(_)
            | ToolboxError::Conversion { .. }
            | ToolboxError::InvalidLayout(_)
            | ToolboxError::Io { .. } => ErrorClass::Internal,
        }
    }

    pub fn to_body(&self) -> ErrorBody {
        ErrorBody {
            error_code: self.code().to_string(),
            message: self.to_string(),
            failed_series: match self {
                ToolboxError::ClassificationFailed(failed) => Some(failed.clone()),
                _ => None,
            },
        }
    }
}

/// Error payload shared by the HTTP service and the CLI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_series: Option<Vec<UnclassifiableSeries>>,
}

impl ErrorBody {
    pub fn new(error_code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            error_code: error_code.into(),
            message: message.into(),
            failed_series: None,
        }
    }
}

impl From<&ToolboxError> for ErrorBody {
    fn from(e: &ToolboxError) -> Self {
        e.to_body()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_series_only_for_classification() {
        let e = ToolboxError::ClassificationFailed(vec![UnclassifiableSeries {
            series_name: "rm_series".into(),
            reason: "research mode".into(),
        }]);
        let body = e.to_body();
        assert_eq!(body.error_code, "ClassificationFailed");
        assert!(body.message.contains("rm_series"));
        let json = serde_json::to_value(&body).unwrap();
        assert_eq!(json["failed_series"][0]["series_name"], "rm_series");
        assert_eq!(e.class().http_status(), 422);
        assert_eq!(e.class().exit_code(), 3);

        let e = ToolboxError::Busy("/x".into());
        let json = serde_json::to_value(e.to_body()).unwrap();
        assert!(json.get("failed_series").is_none());
        assert_eq!(e.class().http_status(), 409);
        assert_eq!(e.class().exit_code(), 5);
    }
}
