//! Minimal BIDS layout checks used as a post-commit gate.
//!
//! Covers naming, directory placement, image/sidecar pairing, gradient file
//! pairing, the dataset description and agreement with `.bidstoolbox`.
//! It is not a replacement for the full BIDS validator. Entries whose name
//! starts with `.` are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{read_state, DESCRIPTION_FILE, STATE_FILE};
use crate::model::{pair_is_legal, Modality, Suffix};

pub const ROOT: &str = "<root>";

const ROOT_FILES: [&str; 6] = [
    DESCRIPTION_FILE,
    "README",
    "README.md",
    "CHANGES",
    "participants.tsv",
    "participants.json",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    BadName,
    OrphanSidecar,
    MissingSidecar,
    MissingDescription,
    UnpairedGradient,
    StateMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub code: ViolationCode,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("{0} is not a directory")]
    NotADirectory(PathBuf),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<ValidateError> for io::Error {
    fn from(e: ValidateError) -> Self {
        match e {
            ValidateError::Io(e) => e,
            other => io::Error::new(io::ErrorKind::NotADirectory, other.to_string()),
        }
    }
}

fn file_grammar() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^sub-([A-Za-z0-9]+)(?:_ses-([A-Za-z0-9]+))?(?:_run-([1-9][0-9]*))?_([A-Za-z0-9]+)\.(nii\.gz|nii|json|bval|bvec)$",
        )
        .expect("static regex")
    })
}

fn entity_dir(prefix: &str, name: &str) -> Option<String> {
    let label = name.strip_prefix(prefix)?;
    (!label.is_empty() && label.chars().all(|c| c.is_ascii_alphanumeric())).then(|| label.to_string())
}

/// Checks `dataset_root` and returns every violation, sorted by path.
/// Never writes to the dataset.
pub fn validate_layout(dataset_root: &Path) -> Result<Vec<Violation>, ValidateError> {
    if !dataset_root.is_dir() {
        return Err(ValidateError::NotADirectory(dataset_root.to_path_buf()));
    }
    let mut audit = Audit::default();

    check_description(dataset_root, &mut audit);
    for (name, path, is_dir) in visible_entries(dataset_root)? {
        match (is_dir, entity_dir("sub-", &name)) {
            (true, Some(sub)) => walk_subject(&path, &name, &sub, &mut audit)?,
            (false, _) if ROOT_FILES.contains(&name.as_str()) => {}
            _ => audit.push(&name, ViolationCode::BadName, "unexpected entry at dataset root"),
        }
    }
    check_state(dataset_root, &mut audit);

    let mut out = audit.violations;
    out.sort_by(|a, b| (&a.path, a.code).cmp(&(&b.path, b.code)));
    Ok(out)
}

#[derive(Default)]
struct Audit {
    violations: Vec<Violation>,
    images: BTreeSet<String>,
}

impl Audit {
    fn push(&mut self, path: &str, code: ViolationCode, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.to_string(),
            code,
            message: message.into(),
        });
    }
}

fn visible_entries(dir: &Path) -> io::Result<Vec<(String, PathBuf, bool)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        let is_dir = entry.file_type()?.is_dir();
        out.push((name, entry.path(), is_dir));
    }
    out.sort();
    Ok(out)
}

fn check_description(root: &Path, audit: &mut Audit) {
    let path = root.join(DESCRIPTION_FILE);
    let problem = match fs::read(&path) {
        Err(_) => Some(format!("{DESCRIPTION_FILE} is missing")),
        Ok(bytes) => match serde_json::from_slice::<serde_json::Value>(&bytes) {
            Ok(serde_json::Value::Object(map)) => ["Name", "BIDSVersion"]
                .iter()
                .find(|k| !map.get(**k).is_some_and(serde_json::Value::is_string))
                .map(|k| format!("{DESCRIPTION_FILE} lacks a string {k:?}")),
            _ => Some(format!("{DESCRIPTION_FILE} is not a JSON object")),
        },
    };
    if let Some(message) = problem {
        audit.push(ROOT, ViolationCode::MissingDescription, message);
    }
}

fn walk_subject(dir: &Path, rel: &str, sub: &str, audit: &mut Audit) -> io::Result<()> {
    for (name, path, is_dir) in visible_entries(dir)? {
        let child = format!("{rel}/{name}");
        if !is_dir {
            audit.push(
                &child,
                ViolationCode::BadName,
                "files are not allowed directly under a subject",
            );
            continue;
        }
        if let Some(ses) = entity_dir("ses-", &name) {
            for (mname, mpath, mdir) in visible_entries(&path)? {
                let mrel = format!("{child}/{mname}");
                match (mdir, mname.parse::<Modality>()) {
                    (true, Ok(modality)) => walk_datatype(&mpath, &mrel, sub, Some(&ses), modality, audit)?,
                    _ => audit.push(&mrel, ViolationCode::BadName, "expected a data-type directory"),
                }
            }
        } else if let Ok(modality) = name.parse::<Modality>() {
            walk_datatype(&path, &child, sub, None, modality, audit)?;
        } else {
            audit.push(
                &child,
                ViolationCode::BadName,
                "expected a session or data-type directory",
            );
        }
    }
    Ok(())
}

#[derive(Default)]
struct Stem {
    image: Option<String>,
    sidecar: Option<String>,
    bval: Option<String>,
    bvec: Option<String>,
}

fn walk_datatype(
    dir: &Path,
    rel: &str,
    sub: &str,
    ses: Option<&str>,
    modality: Modality,
    audit: &mut Audit,
) -> io::Result<()> {
    let mut stems: BTreeMap<String, Stem> = BTreeMap::new();
    for (name, _, is_dir) in visible_entries(dir)? {
        let path = format!("{rel}/{name}");
        if is_dir {
            audit.push(
                &path,
                ViolationCode::BadName,
                "nested directory inside a data-type directory",
            );
            continue;
        }
        let Some(caps) = file_grammar().captures(&name) else {
            audit.push(
                &path,
                ViolationCode::BadName,
                "name does not follow sub-<label>[_ses-<label>][_run-<index>]_<suffix>.<ext>",
            );
            continue;
        };
        if &caps[1] != sub {
            audit.push(
                &path,
                ViolationCode::BadName,
                format!("subject entity does not match directory sub-{sub}"),
            );
            continue;
        }
        if caps.get(2).map(|m| m.as_str()) != ses {
            audit.push(
                &path,
                ViolationCode::BadName,
                "session entity does not match its directory",
            );
            continue;
        }
        match caps[4].parse::<Suffix>() {
            Ok(suffix) if pair_is_legal(modality, suffix) => {}
            _ => {
                audit.push(
                    &path,
                    ViolationCode::BadName,
                    format!("suffix {} is not valid under {modality}/", &caps[4]),
                );
                continue;
            }
        }
        let ext = &caps[5];
        let stem = name[..name.len() - ext.len() - 1].to_string();
        let slot = stems.entry(stem).or_default();
        match ext {
            "nii.gz" | "nii" => {
                audit.images.insert(path.clone());
                slot.image = Some(path);
            }
            "json" => slot.sidecar = Some(path),
            "bval" => slot.bval = Some(path),
            _ => slot.bvec = Some(path),
        }
    }

    for stem in stems.into_values() {
        match (&stem.image, &stem.sidecar) {
            (Some(image), None) => {
                audit.push(image, ViolationCode::MissingSidecar, "image has no JSON sidecar")
            }
            (None, Some(sidecar)) => {
                audit.push(sidecar, ViolationCode::OrphanSidecar, "sidecar has no image")
            }
            _ => {}
        }
        for (present, other) in [(&stem.bval, &stem.bvec), (&stem.bvec, &stem.bval)] {
            if let Some(path) = present {
                if modality != Modality::Dwi {
                    audit.push(
                        path,
                        ViolationCode::UnpairedGradient,
                        "gradient file outside a dwi directory",
                    );
                } else if other.is_none() {
                    audit.push(
                        path,
                        ViolationCode::UnpairedGradient,
                        "gradient file without its .bval/.bvec partner",
                    );
                }
            }
        }
    }
    Ok(())
}

fn check_state(root: &Path, audit: &mut Audit) {
    if !root.join(STATE_FILE).exists() {
        return;
    }
    let state = match read_state(root) {
        Ok(s) => s,
        Err(e) => {
            audit.push(STATE_FILE, ViolationCode::StateMismatch, e.to_string());
            return;
        }
    };
    let recorded: BTreeSet<&str> = state.files().collect();
    for path in &recorded {
        if !root.join(path).is_file() {
            audit.push(
                path,
                ViolationCode::StateMismatch,
                "recorded in .bidstoolbox but missing",
            );
        }
    }
    let unrecorded: Vec<String> = audit
        .images
        .iter()
        .filter(|p| !recorded.contains(p.as_str()))
        .cloned()
        .collect();
    for path in unrecorded {
        audit.push(
            &path,
            ViolationCode::StateMismatch,
            "image not recorded in .bidstoolbox",
        );
    }
}
