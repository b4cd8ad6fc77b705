//! Deterministic stand-in for the external converter.
//!
//! A fixture root holds one directory per synthetic session. Each `*.json`
//! file in a session directory describes one series:
//!
//! ```json
//! {
//!   "series_name": "scan01_t1_mprage",
//!   "sidecar": { "FlipAngle": 8, "InversionTime": 0.9 },
//!   "gradients": false,
//!   "image": "optional synthetic image payload",
//!   "delay_ms": 0,
//!   "fail_exit_code": null
//! }
//! ```
//!
//! A session directory is resolved through `<root>/index.json` (a map from
//! source path to fixture name) when present, otherwise by the source path's
//! final component.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::ConversionError;

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesFixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series_name: Option<String>,
    pub sidecar: Map<String, Value>,
    #[serde(default)]
    pub gradients: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_exit_code: Option<i32>,
}

impl SeriesFixture {
    pub fn new(series_name: impl Into<String>, sidecar: Map<String, Value>) -> Self {
        Self {
            series_name: Some(series_name.into()),
            sidecar,
            gradients: false,
            image: None,
            delay_ms: 0,
            fail_exit_code: None,
        }
    }

    /// Writes this fixture as `<session_dir>/<series_name>.json`, creating
    /// the directory if needed.
    pub fn write_to(&self, session_dir: &Path) -> std::io::Result<PathBuf> {
        fs::create_dir_all(session_dir)?;
        let stem = self.series_name.as_deref().unwrap_or("series");
        let path = session_dir.join(format!("{stem}.json"));
        let text = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Finds the fixture directory standing in for `dicom_dir`.
pub fn resolve_fixture(root: &Path, dicom_dir: &Path) -> Result<PathBuf, ConversionError> {
    let index_path = root.join(INDEX_FILE);
    if index_path.is_file() {
        let text = fs::read(&index_path)
            .map_err(|e| ConversionError::io(format!("reading {}", index_path.display()), e))?;
        let index: BTreeMap<String, String> =
            serde_json::from_slice(&text).map_err(|e| ConversionError::BadFixture {
                path: index_path.clone(),
                message: e.to_string(),
            })?;
        if let Some(name) = index.get(dicom_dir.to_string_lossy().as_ref()) {
            return existing_fixture(root.join(name), dicom_dir);
        }
    }
    match dicom_dir.file_name() {
        Some(name) => existing_fixture(root.join(name), dicom_dir),
        None => Err(ConversionError::MissingFixture(dicom_dir.to_path_buf())),
    }
}

fn existing_fixture(dir: PathBuf, dicom_dir: &Path) -> Result<PathBuf, ConversionError> {
    if dir.is_dir() {
        Ok(dir)
    } else {
        Err(ConversionError::MissingFixture(dicom_dir.to_path_buf()))
    }
}

pub fn load_fixtures(dir: &Path) -> Result<Vec<(String, SeriesFixture)>, ConversionError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ConversionError::io(format!("listing {}", dir.display()), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();

    files
        .into_iter()
        .map(|path| {
            let text =
                fs::read(&path).map_err(|e| ConversionError::io(format!("reading {}", path.display()), e))?;
            let fixture: SeriesFixture =
                serde_json::from_slice(&text).map_err(|e| ConversionError::BadFixture {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            let name = match &fixture.series_name {
                Some(n) => n.clone(),
                None => path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            };
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(ConversionError::BadFixture {
                    path,
                    message: format!("unusable series name {name:?}"),
                });
            }
            Ok((name, fixture))
        })
        .collect()
}

/// Writes converter-shaped artifacts for every fixture series into
/// `work_dir`. Returns per-series wall time.
pub fn materialize(
    fixture_dir: &Path,
    work_dir: &Path,
    timeout: Duration,
) -> Result<BTreeMap<String, Duration>, ConversionError> {
    let mut durations = BTreeMap::new();
    for (name, fixture) in load_fixtures(fixture_dir)? {
        let started = Instant::now();
        if fixture.delay_ms > 0 {
            let delay = Duration::from_millis(fixture.delay_ms);
            if delay > timeout {
                thread::sleep(timeout);
                return Err(ConversionError::Timeout {
                    seconds: timeout.as_secs_f64(),
                });
            }
            thread::sleep(delay);
        }
        if let Some(code) = fixture.fail_exit_code {
            return Err(ConversionError::ConverterFailed {
                exit_code: Some(code),
                output: format!("mock converter: simulated failure while converting {name}"),
            });
        }

        let write = |ext: &str, bytes: &[u8]| {
            let path = work_dir.join(format!("{name}{ext}"));
            fs::write(&path, bytes).map_err(|e| ConversionError::io(format!("writing {}", path.display()), e))
        };
        let image = fixture
            .image
            .clone()
            .unwrap_or_else(|| format!("MOCK-NIFTI {name}"));
        write(".nii.gz", image.as_bytes())?;
        let sidecar = serde_json::to_vec_pretty(&Value::Object(fixture.sidecar.clone()))
            .expect("a JSON map always serializes");
        write(".json", &sidecar)?;
        if fixture.gradients {
            write(".bval", b"0 1000 1000 1000\n")?;
            write(".bvec", b"0 1 0 0\n0 0 1 0\n0 0 0 1\n")?;
        }
        durations.insert(name, started.elapsed());
    }
    Ok(durations)
}
