//! Conversion of one session directory into per-series NIfTI artifacts.

mod external;
pub mod mock;
pub mod sidecar;

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

use crate::model::SequenceParams;

pub use external::{BASE_ARGS, OUTPUT_CAPTURE_LIMIT};
pub use sidecar::{parse_sidecar, SidecarError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);
pub const DEFAULT_EXECUTABLE: &str = "dcm2niix";

#[derive(Debug, Error)]
pub enum ConversionError {
    #[error("converter executable not found: {0}")]
    ConverterNotFound(PathBuf),
    #[error("converter exited with {}: {output}", exit_code.map_or("a signal".to_string(), |c| format!("code {c}")))]
    ConverterFailed { exit_code: Option<i32>, output: String },
    #[error("converter timed out after {seconds} s")]
    Timeout { seconds: f64 },
    #[error("converter produced no series for {0}")]
    NoSeriesProduced(PathBuf),
    #[error("source directory {0} does not exist")]
    MissingSource(PathBuf),
    #[error("no mock fixture for source {0}")]
    MissingFixture(PathBuf),
    #[error("bad mock fixture {path}: {message}")]
    BadFixture { path: PathBuf, message: String },
    #[error("series {0} has only one of its .bval/.bvec files")]
    UnpairedGradients(String),
    #[error("series {0} has an image but no sidecar")]
    MissingSidecar(String),
    #[error("sidecar {path}: {source}")]
    Sidecar {
        path: PathBuf,
        #[source]
        source: SidecarError,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl ConversionError {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        ConversionError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ConversionError::ConverterNotFound(_) => "ConverterNotFound",
            ConversionError::ConverterFailed { .. } => "ConverterFailed",
            ConversionError::Timeout { .. } => "Timeout",
            ConversionError::NoSeriesProduced(_) => "NoSeriesProduced",
            ConversionError::MissingSource(_) => "MissingSource",
            ConversionError::MissingFixture(_) | ConversionError::BadFixture { .. } => "MockFixture",
            ConversionError::UnpairedGradients(_) | ConversionError::MissingSidecar(_) => "IncompleteOutput",
            ConversionError::Sidecar { .. } => "BadSidecar",
            ConversionError::Io { .. } => "IoError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConverterKind {
    External {
        executable: PathBuf,
        extra_args: Vec<String>,
    },
    Mock {
        fixtures: PathBuf,
    },
}

/// Which converter to run and how long a single invocation may take.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConverterHandle {
    kind: ConverterKind,
    timeout: Duration,
}

impl ConverterHandle {
    pub fn external(
        executable: impl Into<PathBuf>,
        extra_args: Vec<String>,
    ) -> Result<Self, ConversionError> {
        let executable = executable.into();
        if executable.as_os_str().is_empty() {
            return Err(ConversionError::ConverterNotFound(executable));
        }
        Ok(Self {
            kind: ConverterKind::External {
                executable,
                extra_args,
            },
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub fn mock(fixtures: impl Into<PathBuf>) -> Self {
        Self {
            kind: ConverterKind::Mock {
                fixtures: fixtures.into(),
            },
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn kind(&self) -> &ConverterKind {
        &self.kind
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    /// Recorded in the dataset state file as provenance.
    pub fn identity(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ConverterHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ConverterKind::External {
                executable,
                extra_args,
            } => {
                write!(f, "{}", executable.display())?;
                for arg in extra_args {
                    write!(f, " {arg}")?;
                }
                Ok(())
            }
            ConverterKind::Mock { fixtures } => write!(f, "mock:{}", fixtures.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct GradientFiles {
    bval: PathBuf,
    bvec: PathBuf,
}

/// Artifacts of one converted series.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvertedSeries {
    series_name: String,
    image_path: PathBuf,
    sidecar_path: PathBuf,
    gradients: Option<GradientFiles>,
    params: SequenceParams,
    duration_s: f64,
}

impl ConvertedSeries {
    /// Fails when exactly one of the gradient files is given.
    pub fn new(
        series_name: impl Into<String>,
        image_path: PathBuf,
        sidecar_path: PathBuf,
        bval_path: Option<PathBuf>,
        bvec_path: Option<PathBuf>,
        params: SequenceParams,
        duration_s: f64,
    ) -> Result<Self, ConversionError> {
        let series_name = series_name.into();
        let gradients = match (bval_path, bvec_path) {
            (Some(bval), Some(bvec)) => Some(GradientFiles { bval, bvec }),
            (None, None) => None,
            _ => return Err(ConversionError::UnpairedGradients(series_name)),
        };
        Ok(Self {
            series_name,
            image_path,
            sidecar_path,
            gradients,
            params,
            duration_s,
        })
    }

    pub fn series_name(&self) -> &str {
        &self.series_name
    }

    pub fn image_path(&self) -> &Path {
        &self.image_path
    }

    pub fn sidecar_path(&self) -> &Path {
        &self.sidecar_path
    }

    pub fn bval_path(&self) -> Option<&Path> {
        self.gradients.as_ref().map(|g| g.bval.as_path())
    }

    pub fn bvec_path(&self) -> Option<&Path> {
        self.gradients.as_ref().map(|g| g.bvec.as_path())
    }

    pub fn params(&self) -> &SequenceParams {
        &self.params
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }
}

/// True iff the converter wrote both gradient files for the series.
pub fn detect_diffusion(series: &ConvertedSeries) -> bool {
    series.gradients.is_some()
}

/// Converts every series in `dicom_dir`, writing artifacts into `work_dir`.
/// The external converter is invoked exactly once per call.
pub fn convert_session(
    dicom_dir: &Path,
    work_dir: &Path,
    converter: &ConverterHandle,
) -> Result<Vec<ConvertedSeries>, ConversionError> {
    match &converter.kind {
        ConverterKind::External {
            executable,
            extra_args,
        } => {
            if !dicom_dir.is_dir() {
                return Err(ConversionError::MissingSource(dicom_dir.to_path_buf()));
            }
            if !contains_files(dicom_dir) {
                return Err(ConversionError::NoSeriesProduced(dicom_dir.to_path_buf()));
            }
            let elapsed = external::run(executable, extra_args, dicom_dir, work_dir, converter.timeout)?;
            let mut series = collect_series(work_dir, |_| Duration::ZERO)?;
            // One invocation covers every series; spread its wall time evenly.
            let share = elapsed.as_secs_f64() / series.len().max(1) as f64;
            for s in &mut series {
                s.duration_s = share;
            }
            non_empty(series, dicom_dir)
        }
        ConverterKind::Mock { fixtures } => {
            let fixture_dir = mock::resolve_fixture(fixtures, dicom_dir)?;
            let durations = mock::materialize(&fixture_dir, work_dir, converter.timeout)?;
            let series = collect_series(work_dir, |name| durations.get(name).copied().unwrap_or_default())?;
            non_empty(series, dicom_dir)
        }
    }
}

fn non_empty(
    series: Vec<ConvertedSeries>,
    dicom_dir: &Path,
) -> Result<Vec<ConvertedSeries>, ConversionError> {
    if series.is_empty() {
        Err(ConversionError::NoSeriesProduced(dicom_dir.to_path_buf()))
    } else {
        Ok(series)
    }
}

fn contains_files(dir: &Path) -> bool {
    WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .any(|e| e.file_type().is_file())
}

const IMAGE_EXTENSIONS: [&str; 2] = [".nii.gz", ".nii"];

/// Gathers converter output in `work_dir` into series, sorted by name.
fn collect_series(
    work_dir: &Path,
    duration_of: impl Fn(&str) -> Duration,
) -> Result<Vec<ConvertedSeries>, ConversionError> {
    let mut images: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(work_dir)
        .map_err(|e| ConversionError::io(format!("listing {}", work_dir.display()), e))?
    {
        let entry = entry.map_err(|e| ConversionError::io("reading work directory", e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let file_name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = IMAGE_EXTENSIONS
            .iter()
            .find_map(|ext| file_name.strip_suffix(ext))
        {
            images.push((stem.to_string(), path));
        }
    }
    images.sort();

    images
        .into_iter()
        .map(|(name, image_path)| {
            let sibling = |ext: &str| {
                let p = work_dir.join(format!("{name}{ext}"));
                p.is_file().then_some(p)
            };
            let sidecar_path =
                sibling(".json").ok_or_else(|| ConversionError::MissingSidecar(name.clone()))?;
            let text = fs::read(&sidecar_path)
                .map_err(|e| ConversionError::io(format!("reading {}", sidecar_path.display()), e))?;
            let params = parse_sidecar(&text).map_err(|source| ConversionError::Sidecar {
                path: sidecar_path.clone(),
                source,
            })?;
            let duration_s = duration_of(&name).as_secs_f64();
            ConvertedSeries::new(
                name.clone(),
                image_path,
                sidecar_path,
                sibling(".bval"),
                sibling(".bvec"),
                params,
                duration_s,
            )
        })
        .collect()
}

/// Order-independent digest of a directory tree's relative file names and
/// sizes. Pixel data is never read.
pub fn content_fingerprint(dir: &Path) -> io::Result<String> {
    let mut entries: Vec<(String, u64)> = Vec::new();
    for entry in WalkDir::new(dir).min_depth(1) {
        let entry = entry.map_err(io::Error::other)?;
        if entry.file_type().is_file() {
            let rel = entry
                .path()
                .strip_prefix(dir)
                .map_err(io::Error::other)?
                .to_string_lossy()
                .replace('\\', "/");
            entries.push((rel, entry.metadata().map_err(io::Error::other)?.len()));
        }
    }
    entries.sort();
    let mut hasher = Sha256::new();
    for (rel, size) in &entries {
        hasher.update(rel.as_bytes());
        hasher.update([0]);
        hasher.update(size.to_le_bytes());
    }
    Ok(format!("sha256:{}", hex::encode(hasher.finalize())))
}

/// Fingerprint of a session's source. For the mock converter a source path
/// that does not exist is represented by its fixture directory.
pub fn source_fingerprint(dicom_dir: &Path, converter: &ConverterHandle) -> Result<String, ConversionError> {
    let target = match &converter.kind {
        ConverterKind::Mock { fixtures } if !dicom_dir.exists() => {
            mock::resolve_fixture(fixtures, dicom_dir)?
        }
        _ => dicom_dir.to_path_buf(),
    };
    content_fingerprint(&target)
        .map_err(|e| ConversionError::io(format!("fingerprinting {}", target.display()), e))
}
