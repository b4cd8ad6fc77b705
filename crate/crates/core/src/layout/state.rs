//! The hidden `.bidstoolbox` file: what the toolbox has put into a dataset.

use std::fs;
use std::io::{self, Write};
use std::num::NonZeroU32;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Modality, SessionLabel, SubjectLabel, Suffix};

pub const STATE_FILE: &str = ".bidstoolbox";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("{0} is not a toolbox-managed dataset (no .bidstoolbox file)")]
    StateFileMissing(String),
    #[error("unsupported .bidstoolbox format_version {0}")]
    StateVersionUnsupported(u64),
    #[error("malformed .bidstoolbox: {0}")]
    MalformedState(String),
    #[error("state file I/O: {0}")]
    Io(#[from] io::Error),
}

impl StateError {
    pub fn code(&self) -> &'static str {
        match self {
            StateError::StateFileMissing(_) => "StateFileMissing",
            StateError::StateVersionUnsupported(_) => "StateVersionUnsupported",
            StateError::MalformedState(_) => "MalformedState",
            StateError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesRecord {
    pub series_name: String,
    pub modality: Modality,
    pub suffix: Suffix,
    pub rule_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<NonZeroU32>,
    /// Image path, relative to the dataset root.
    pub destination: String,
    /// Every file written for the series, image first.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub subject: SubjectLabel,
    pub session: SessionLabel,
    pub source: String,
    pub source_hash: String,
    pub series: Vec<SeriesRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolboxState {
    pub format_version: u32,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub converter: String,
    /// Sorted by (subject, session).
    pub entries: Vec<SessionRecord>,
}

impl ToolboxState {
    pub fn new(converter: impl Into<String>, now: DateTime<Utc>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            created_at: now,
            updated_at: now,
            converter: converter.into(),
            entries: Vec::new(),
        }
    }

    pub fn session(&self, sub: &SubjectLabel, ses: &SessionLabel) -> Option<&SessionRecord> {
        self.entries
            .iter()
            .find(|e| &e.subject == sub && &e.session == ses)
    }

    /// Inserts or replaces the record for its (subject, session).
    pub fn upsert(&mut self, record: SessionRecord) {
        self.entries
            .retain(|e| !(e.subject == record.subject && e.session == record.session));
        self.entries.push(record);
        self.entries
            .sort_by(|a, b| (&a.subject, &a.session).cmp(&(&b.subject, &b.session)));
    }

    /// Every recorded file path.
    pub fn files(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .flat_map(|e| e.series.iter())
            .flat_map(|s| s.files.iter().map(String::as_str))
    }
}

pub fn read_state(dataset_root: &Path) -> Result<ToolboxState, StateError> {
    let path = dataset_root.join(STATE_FILE);
    let text = match fs::read(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(StateError::StateFileMissing(dataset_root.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    let raw: serde_json::Value =
        serde_json::from_slice(&text).map_err(|e| StateError::MalformedState(e.to_string()))?;
    match raw.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => return Err(StateError::StateVersionUnsupported(v)),
        None => return Err(StateError::MalformedState("missing format_version".into())),
    }
    serde_json::from_value(raw).map_err(|e| StateError::MalformedState(e.to_string()))
}

/// Writes the state through a temporary file and a rename.
pub fn write_state(dataset_root: &Path, state: &ToolboxState) -> Result<(), StateError> {
    let mut text = serde_json::to_vec_pretty(state).expect("state always serializes");
    text.push(b'\n');
    write_atomic(dataset_root, STATE_FILE, &text)?;
    Ok(())
}

pub(crate) fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = tempfile::Builder::new()
        .prefix(&format!(".{name}.tmp"))
        .tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ToolboxState {
        let mut state = ToolboxState::new("mock:/fx", Utc::now());
        state.upsert(SessionRecord {
            subject: SubjectLabel::parse("01").unwrap(),
            session: SessionLabel::parse("02").unwrap(),
            source: "/d/2".into(),
            source_hash: "sha256:00".into(),
            series: vec![SeriesRecord {
                series_name: "dti".into(),
                modality: Modality::Dwi,
                suffix: Suffix::Dwi,
                rule_id: "diffusion-files".into(),
                run: None,
                destination: "sub-01/ses-02/dwi/sub-01_ses-02_dwi.nii.gz".into(),
                files: vec!["sub-01/ses-02/dwi/sub-01_ses-02_dwi.nii.gz".into()],
            }],
        });
        state.upsert(SessionRecord {
            subject: SubjectLabel::parse("01").unwrap(),
            session: SessionLabel::parse("01").unwrap(),
            source: "/d/1".into(),
            source_hash: "sha256:01".into(),
            series: vec![],
        });
        state
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let state = sample();
        write_state(dir.path(), &state).unwrap();
        assert_eq!(read_state(dir.path()).unwrap(), state);
        let pairs: Vec<_> = state
            .entries
            .iter()
            .map(|e| (e.subject.as_str(), e.session.as_str()))
            .collect();
        assert_eq!(pairs, [("01", "01"), ("01", "02")]);
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn version_gate() {
        let dir = tempfile::tempdir().unwrap();
        let mut raw = serde_json::to_value(sample()).unwrap();
        raw["format_version"] = 99.into();
        fs::write(dir.path().join(STATE_FILE), raw.to_string()).unwrap();
        assert!(matches!(
            read_state(dir.path()),
            Err(StateError::StateVersionUnsupported(99))
        ));
    }

    #[test]
    fn missing_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_state(dir.path()),
            Err(StateError::StateFileMissing(_))
        ));
        fs::write(dir.path().join(STATE_FILE), "{not json").unwrap();
        assert!(matches!(
            read_state(dir.path()),
            Err(StateError::MalformedState(_))
        ));
        fs::write(dir.path().join(STATE_FILE), r#"{"format_version":1}"#).unwrap();
        assert!(matches!(
            read_state(dir.path()),
            Err(StateError::MalformedState(_))
        ));
    }

    #[test]
    fn field_names_on_disk() {
        let value = serde_json::to_value(sample()).unwrap();
        let keys: Vec<_> = value.as_object().unwrap().keys().cloned().collect();
        assert_eq!(
            keys,
            [
                "format_version",
                "created_at",
                "updated_at",
                "converter",
                "entries"
            ]
        );
        assert!(value["created_at"].as_str().unwrap().ends_with('Z'));
    }
}
