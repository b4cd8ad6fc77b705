//! Create and update BIDS datasets.
//!
//! `create` converts and lays out everything in `<output>.staging-<random>`
//! and commits with one directory rename. `update` stages new sessions the
//! same way, then moves files into the live dataset under its lock and
//! rewrites `.bidstoolbox` last; a failed move rolls every change back.

mod lock;
mod paths;
mod report;
mod state;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::num::NonZeroU32;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use chrono::Utc;
use indexmap::IndexMap;
use serde_json::{Map, Value};

use crate::classifier::DecisionTable;
use crate::converter::{convert_session, source_fingerprint, ConvertedSeries, ConverterHandle};
use crate::error::ToolboxError;
use crate::model::{Classification, SessionLabel, SubjectLabel, UnclassifiableSeries};
use crate::request::{ConversionRequest, RequestError};
use crate::validator::validate_layout;

pub use lock::{DatasetLock, LOCK_FILE};
pub use paths::{bids_path, Extension};
pub use report::{DatasetReport, ReportStatus, SeriesSummary, Timing};
pub use state::{
    read_state, write_state, SeriesRecord, SessionRecord, StateError, ToolboxState, FORMAT_VERSION,
    STATE_FILE,
};

pub const DESCRIPTION_FILE: &str = "dataset_description.json";
pub const DEFAULT_BIDS_VERSION: &str = "1.2.0";
const WORK_DIR: &str = ".work";
const TRASH_DIR: &str = ".trash";

/// Converter, rule table and parallelism bound for dataset operations.
#[derive(Debug, Clone)]
pub struct Toolbox {
    converter: ConverterHandle,
    rules: DecisionTable,
    parallelism: usize,
}

impl Toolbox {
    pub fn new(converter: ConverterHandle) -> Self {
        Self {
            converter,
            rules: DecisionTable::builtin().clone(),
            parallelism: 1,
        }
    }

    pub fn with_rules(mut self, rules: DecisionTable) -> Self {
        self.rules = rules;
        self
    }

    /// Maximum number of sessions converted at once (at least 1).
    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn converter(&self) -> &ConverterHandle {
        &self.converter
    }

    pub fn rules(&self) -> &DecisionTable {
        &self.rules
    }

    pub fn create(&self, req: &ConversionRequest) -> Result<DatasetReport, ToolboxError> {
        let started = Instant::now();
        if req.scans.is_empty() {
            return Err(RequestError::EmptyScans("\"scans\" must list at least one subject".into()).into());
        }
        let output = req.output_path();
        let (parent, name) = split_output(output)?;
        fs::create_dir_all(&parent)
            .map_err(|e| ToolboxError::io(format!("creating {}", parent.display()), e))?;
        let _lock = DatasetLock::acquire(&parent.join(format!(".{name}.bidstoolbox.lock")), output)?;
        ensure_absent_or_empty(output)?;

        let staging = staging_dir(&parent, &name)?;
        let jobs = session_jobs(req, None, &self.converter)?;
        let (sessions, converter_time) = self.convert_all(&jobs, staging.path())?;
        let planned = self.plan(sessions, req)?;

        let now = Utc::now();
        let mut state = ToolboxState::new(self.converter.identity(), now);
        for session in &planned {
            place_session(session, &staging.path().join(WORK_DIR), staging.path())?;
            state.upsert(session.record());
        }
        remove_dir_all(&staging.path().join(WORK_DIR))?;

        let description = merged_description(None, &req.dataset_description, &name);
        write_description(staging.path(), &description)?;
        write_state(staging.path(), &state)?;

        let violations = validate_layout(staging.path())
            .map_err(|e| ToolboxError::io("validating staged dataset", e.into()))?;
        if !violations.is_empty() {
            return Err(ToolboxError::InvalidLayout(violations));
        }

        fs::rename(staging.path(), output).map_err(|e| match e.kind() {
            io::ErrorKind::DirectoryNotEmpty | io::ErrorKind::AlreadyExists => {
                ToolboxError::OutputNotEmpty(output.to_path_buf())
            }
            _ => ToolboxError::io(format!("committing {}", output.display()), e),
        })?;
        let _ = staging.keep();

        Ok(report(
            ReportStatus::Created,
            output,
            &planned,
            started,
            converter_time,
        ))
    }

    pub fn update(&self, req: &ConversionRequest) -> Result<DatasetReport, ToolboxError> {
        let started = Instant::now();
        let root = req.output_path();
        if !root.join(STATE_FILE).is_file() {
            return Err(StateError::StateFileMissing(root.display().to_string()).into());
        }
        let _lock = DatasetLock::acquire(&root.join(LOCK_FILE), root)?;
        let state = read_state(root)?;

        let jobs = session_jobs(req, Some(&state), &self.converter)?;
        let (parent, name) = split_output(root)?;
        let staging = staging_dir(&parent, &name)?;
        let (sessions, converter_time) = self.convert_all(&jobs, staging.path())?;
        let planned = self.plan(sessions, req)?;

        let staged = staging.path().join("new");
        for session in &planned {
            place_session(session, &staging.path().join(WORK_DIR), &staged)?;
        }

        let description_path = root.join(DESCRIPTION_FILE);
        let old_description = fs::read(&description_path).ok();
        let mut txn = Transaction::new(root, staging.path().join(TRASH_DIR));
        let committed = (|| -> Result<(), ToolboxError> {
            for session in &planned {
                if let Some(old) = state.session(&session.subject, &session.session) {
                    for file in old.series.iter().flat_map(|s| &s.files) {
                        txn.retire(file)?;
                    }
                }
                for file in session.files() {
                    txn.install(&staged, &file)?;
                }
            }
            if !req.dataset_description.is_empty() {
                let existing = read_description(root)?;
                let description = merged_description(existing, &req.dataset_description, &name);
                write_description(root, &description)?;
            }
            let mut next = state.clone();
            for session in &planned {
                next.upsert(session.record());
            }
            next.updated_at = Utc::now();
            next.converter = self.converter.identity();
            write_state(root, &next)?;
            Ok(())
        })();
        if let Err(e) = committed {
            txn.rollback();
            if let Some(bytes) = old_description {
                let _ = state::write_atomic(root, DESCRIPTION_FILE, &bytes);
            }
            return Err(e);
        }
        txn.finish();

        let violations =
            validate_layout(root).map_err(|e| ToolboxError::io("validating dataset", e.into()))?;
        if !violations.is_empty() {
            return Err(ToolboxError::InvalidLayout(violations));
        }
        Ok(report(
            ReportStatus::Updated,
            root,
            &planned,
            started,
            converter_time,
        ))
    }

    /// Converts every job, at most `parallelism` at a time. Returns the
    /// results in job order plus the wall time of the whole phase.
    fn convert_all(
        &self,
        jobs: &[SessionJob],
        staging: &Path,
    ) -> Result<(Vec<ConvertedSession>, Duration), ToolboxError> {
        let started = Instant::now();
        let work_root = staging.join(WORK_DIR);
        let slots: Vec<Mutex<Option<Result<ConvertedSession, ToolboxError>>>> =
            jobs.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);

        thread::scope(|scope| {
            for _ in 0..self.parallelism.min(jobs.len()) {
                scope.spawn(|| loop {
                    if failed.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(job) = jobs.get(i) else { break };
                    let result = self.convert_one(job, &work_root);
                    if result.is_err() {
                        failed.store(true, Ordering::Relaxed);
                    }
                    *slots[i].lock().expect("slot lock poisoned") = Some(result);
                });
            }
        });

        let mut sessions = Vec::with_capacity(jobs.len());
        for slot in slots {
            match slot.into_inner().expect("slot lock poisoned") {
                Some(result) => sessions.push(result?),
                // Skipped after an earlier failure; that error is in a previous slot.
                None => continue,
            }
        }
        Ok((sessions, started.elapsed()))
    }

    fn convert_one(&self, job: &SessionJob, work_root: &Path) -> Result<ConvertedSession, ToolboxError> {
        let wrap = |source| ToolboxError::Conversion {
            subject: job.subject.clone(),
            session: job.session.clone(),
            source,
        };
        let work_dir = work_root.join(format!("sub-{}_ses-{}", job.subject, job.session));
        fs::create_dir_all(&work_dir)
            .map_err(|e| ToolboxError::io(format!("creating {}", work_dir.display()), e))?;
        let source = Path::new(&job.source);
        let fingerprint = source_fingerprint(source, &self.converter).map_err(wrap)?;
        let series = convert_session(source, &work_dir, &self.converter).map_err(wrap)?;
        Ok(ConvertedSession {
            subject: job.subject.clone(),
            session: job.session.clone(),
            source: job.source.clone(),
            fingerprint,
            work_dir,
            series,
        })
    }

    /// Classifies every series and assigns destinations. Fails with every
    /// unclassifiable series across all sessions.
    fn plan(
        &self,
        sessions: Vec<ConvertedSession>,
        req: &ConversionRequest,
    ) -> Result<Vec<PlannedSession>, ToolboxError> {
        let mut failures: Vec<UnclassifiableSeries> = Vec::new();
        let mut classified = Vec::new();
        for session in sessions {
            let mut items = Vec::new();
            for series in session.series.iter() {
                match self.rules.classify_series(series, &req.overrides) {
                    Ok(cls) => items.push((series.clone(), cls)),
                    Err(u) => failures.push(u),
                }
            }
            classified.push((session, items));
        }
        if !failures.is_empty() {
            return Err(ToolboxError::ClassificationFailed(failures));
        }
        Ok(classified
            .into_iter()
            .map(|(session, items)| plan_session(session, items))
            .collect())
    }
}

pub fn create_dataset(
    req: &ConversionRequest,
    converter: &ConverterHandle,
) -> Result<DatasetReport, ToolboxError> {
    Toolbox::new(converter.clone()).create(req)
}

pub fn update_dataset(
    req: &ConversionRequest,
    converter: &ConverterHandle,
) -> Result<DatasetReport, ToolboxError> {
    Toolbox::new(converter.clone()).update(req)
}

struct SessionJob {
    subject: SubjectLabel,
    session: SessionLabel,
    source: String,
}

/// Request sessions as jobs. Against an existing state, sessions already
/// present are a conflict unless the request sets `overwrite`.
fn session_jobs(
    req: &ConversionRequest,
    state: Option<&ToolboxState>,
    converter: &ConverterHandle,
) -> Result<Vec<SessionJob>, ToolboxError> {
    req.sessions()
        .map(|(sub, ses, dir)| {
            if let Some(existing) = state.and_then(|s| s.session(sub, ses)) {
                if !req.overwrite {
                    let identical_source = existing.source == dir
                        && source_fingerprint(Path::new(dir), converter).ok().as_deref()
                            == Some(existing.source_hash.as_str());
                    return Err(ToolboxError::SessionConflict {
                        subject: sub.clone(),
                        session: ses.clone(),
                        identical_source,
                    });
                }
            }
            Ok(SessionJob {
                subject: sub.clone(),
                session: ses.clone(),
                source: dir.to_string(),
            })
        })
        .collect()
}

struct ConvertedSession {
    subject: SubjectLabel,
    session: SessionLabel,
    source: String,
    fingerprint: String,
    work_dir: PathBuf,
    series: Vec<ConvertedSeries>,
}

struct PlannedSeries {
    series: ConvertedSeries,
    classification: Classification,
    run: Option<NonZeroU32>,
}

struct PlannedSession {
    subject: SubjectLabel,
    session: SessionLabel,
    source: String,
    fingerprint: String,
    work_dir: PathBuf,
    series: Vec<PlannedSeries>,
}

impl PlannedSession {
    fn destinations(&self, planned: &PlannedSeries) -> Vec<(PathBuf, String)> {
        let path = |ext| {
            bids_path(
                &self.subject,
                &self.session,
                &planned.classification,
                planned.run,
                ext,
            )
        };
        let s = &planned.series;
        let mut out = vec![
            (s.image_path().to_path_buf(), path(Extension::NiftiGz)),
            (s.sidecar_path().to_path_buf(), path(Extension::Json)),
        ];
        if let (Some(bval), Some(bvec)) = (s.bval_path(), s.bvec_path()) {
            out.push((bval.to_path_buf(), path(Extension::Bval)));
            out.push((bvec.to_path_buf(), path(Extension::Bvec)));
        }
        out
    }

    fn files(&self) -> Vec<String> {
        self.series
            .iter()
            .flat_map(|p| self.destinations(p).into_iter().map(|(_, dest)| dest))
            .collect()
    }

    fn record(&self) -> SessionRecord {
        SessionRecord {
            subject: self.subject.clone(),
            session: self.session.clone(),
            source: self.source.clone(),
            source_hash: self.fingerprint.clone(),
            series: self
                .series
                .iter()
                .map(|p| {
                    let files: Vec<String> = self.destinations(p).into_iter().map(|(_, dest)| dest).collect();
                    SeriesRecord {
                        series_name: p.series.series_name().to_string(),
                        modality: p.classification.modality(),
                        suffix: p.classification.suffix(),
                        rule_id: p.classification.rule_id().to_string(),
                        run: p.run,
                        destination: files[0].clone(),
                        files,
                    }
                })
                .collect(),
        }
    }
}

/// Runs are numbered 1..k per (modality, suffix) in series-name order; a
/// lone series gets no run entity.
fn plan_session(session: ConvertedSession, items: Vec<(ConvertedSeries, Classification)>) -> PlannedSession {
    let mut groups: BTreeMap<_, Vec<(ConvertedSeries, Classification)>> = BTreeMap::new();
    for (series, cls) in items {
        groups
            .entry((cls.modality(), cls.suffix()))
            .or_default()
            .push((series, cls));
    }
    let mut planned = Vec::new();
    for (_, mut group) in groups {
        group.sort_by(|a, b| a.0.series_name().cmp(b.0.series_name()));
        let numbered = group.len() > 1;
        for (i, (series, classification)) in group.into_iter().enumerate() {
            let run = if numbered {
                NonZeroU32::new(i as u32 + 1)
            } else {
                None
            };
            planned.push(PlannedSeries {
                series,
                classification,
                run,
            });
        }
    }
    planned.sort_by(|a, b| a.series.series_name().cmp(b.series.series_name()));
    PlannedSession {
        subject: session.subject,
        session: session.session,
        source: session.source,
        fingerprint: session.fingerprint,
        work_dir: session.work_dir,
        series: planned,
    }
}

/// Moves a session's converter artifacts from its work dir to their BIDS
/// destinations under `root`.
fn place_session(session: &PlannedSession, work_root: &Path, root: &Path) -> Result<(), ToolboxError> {
    debug_assert!(session.work_dir.starts_with(work_root));
    for planned in &session.series {
        for (from, dest) in session.destinations(planned) {
            let to = root.join(&dest);
            if to.exists() {
                return Err(ToolboxError::io(
                    format!("planning {dest}"),
                    io::Error::new(io::ErrorKind::AlreadyExists, "destination already taken"),
                ));
            }
            move_file(&from, &to)?;
        }
    }
    Ok(())
}

fn move_file(from: &Path, to: &Path) -> Result<(), ToolboxError> {
    if let Some(parent) = to.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| ToolboxError::io(format!("creating {}", parent.display()), e))?;
    }
    fs::rename(from, to)
        .map_err(|e| ToolboxError::io(format!("moving {} to {}", from.display(), to.display()), e))
}

fn remove_dir_all(path: &Path) -> Result<(), ToolboxError> {
    match fs::remove_dir_all(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(ToolboxError::io(format!("removing {}", path.display()), e)),
    }
}

/// File moves into a live dataset that can be undone.
struct Transaction<'a> {
    root: &'a Path,
    trash: PathBuf,
    installed: Vec<String>,
    retired: Vec<String>,
    done: bool,
}

impl<'a> Transaction<'a> {
    fn new(root: &'a Path, trash: PathBuf) -> Self {
        Self {
            root,
            trash,
            installed: Vec::new(),
            retired: Vec::new(),
            done: false,
        }
    }

    /// Moves an existing dataset file aside.
    fn retire(&mut self, rel: &str) -> Result<(), ToolboxError> {
        let from = self.root.join(rel);
        if !from.exists() {
            return Ok(());
        }
        move_file(&from, &self.trash.join(rel))?;
        self.retired.push(rel.to_string());
        Ok(())
    }

    fn install(&mut self, staged_root: &Path, rel: &str) -> Result<(), ToolboxError> {
        let to = self.root.join(rel);
        if to.exists() {
            return Err(ToolboxError::io(
                format!("installing {rel}"),
                io::Error::new(io::ErrorKind::AlreadyExists, "file exists in dataset"),
            ));
        }
        move_file(&staged_root.join(rel), &to)?;
        self.installed.push(rel.to_string());
        Ok(())
    }

    fn rollback(&mut self) {
        for rel in self.installed.drain(..).rev() {
            let _ = fs::remove_file(self.root.join(&rel));
            prune_empty_parents(self.root, &rel);
        }
        for rel in self.retired.drain(..).rev() {
            let _ = move_file(&self.trash.join(&rel), &self.root.join(&rel));
        }
        self.done = true;
    }

    fn finish(&mut self) {
        for rel in &self.retired {
            if !self.installed.contains(rel) {
                prune_empty_parents(self.root, rel);
            }
        }
        self.done = true;
    }
}

impl Drop for Transaction<'_> {
    fn drop(&mut self) {
        if !self.done {
            self.rollback();
        }
    }
}

/// Removes now-empty directories between `rel`'s parent and `root`.
fn prune_empty_parents(root: &Path, rel: &str) {
    let mut dir = Path::new(rel).parent();
    while let Some(d) = dir.filter(|d| !d.as_os_str().is_empty()) {
        if fs::remove_dir(root.join(d)).is_err() {
            break;
        }
        dir = d.parent();
    }
}

fn split_output(output: &Path) -> Result<(PathBuf, String), ToolboxError> {
    let name = output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| RequestError::EmptyValue("output".into()))?;
    let parent = match output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    Ok((parent, name))
}

fn ensure_absent_or_empty(output: &Path) -> Result<(), ToolboxError> {
    match fs::read_dir(output) {
        Ok(mut entries) => match entries.next() {
            None => Ok(()),
            Some(_) => Err(ToolboxError::OutputNotEmpty(output.to_path_buf())),
        },
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        Err(_) if output.exists() => Err(ToolboxError::OutputNotEmpty(output.to_path_buf())),
        Err(e) => Err(ToolboxError::io(format!("inspecting {}", output.display()), e)),
    }
}

fn staging_dir(parent: &Path, name: &str) -> Result<tempfile::TempDir, ToolboxError> {
    tempfile::Builder::new()
        .prefix(&format!("{name}.staging-"))
        .tempdir_in(parent)
        .map_err(|e| ToolboxError::io(format!("creating staging directory in {}", parent.display()), e))
}

fn read_description(root: &Path) -> Result<Option<Map<String, Value>>, ToolboxError> {
    let path = root.join(DESCRIPTION_FILE);
    match fs::read(&path) {
        Ok(bytes) => match serde_json::from_slice::<Value>(&bytes) {
            Ok(Value::Object(map)) => Ok(Some(map)),
            _ => Err(ToolboxError::io(
                format!("reading {}", path.display()),
                io::Error::new(io::ErrorKind::InvalidData, "not a JSON object"),
            )),
        },
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(ToolboxError::io(format!("reading {}", path.display()), e)),
    }
}

/// Existing keys keep their position; request entries win on collision and
/// new keys are appended. Missing `Name`/`BIDSVersion` are injected first.
pub fn merged_description(
    existing: Option<Map<String, Value>>,
    entries: &IndexMap<String, String>,
    dataset_name: &str,
) -> Map<String, Value> {
    let mut out = Map::new();
    let has = |key: &str| entries.contains_key(key) || existing.as_ref().is_some_and(|m| m.contains_key(key));
    if !has("Name") {
        out.insert("Name".into(), Value::String(dataset_name.to_string()));
    }
    if !has("BIDSVersion") {
        out.insert("BIDSVersion".into(), Value::String(DEFAULT_BIDS_VERSION.into()));
    }
    if let Some(existing) = existing {
        out.extend(existing);
    }
    for (k, v) in entries {
        out.insert(k.clone(), Value::String(v.clone()));
    }
    out
}

fn write_description(root: &Path, description: &Map<String, Value>) -> Result<(), ToolboxError> {
    let mut text = serde_json::to_vec_pretty(description).expect("a JSON map always serializes");
    text.push(b'\n');
    state::write_atomic(root, DESCRIPTION_FILE, &text)
        .map_err(|e| ToolboxError::io(format!("writing {DESCRIPTION_FILE}"), e))
}

fn report(
    status: ReportStatus,
    dataset: &Path,
    planned: &[PlannedSession],
    started: Instant,
    converter_time: Duration,
) -> DatasetReport {
    let mut subjects: Vec<&SubjectLabel> = planned.iter().map(|p| &p.subject).collect();
    subjects.sort();
    subjects.dedup();
    let classifications: Vec<SeriesSummary> = planned
        .iter()
        .flat_map(|session| {
            session.series.iter().map(move |p| SeriesSummary {
                subject: session.subject.clone(),
                session: session.session.clone(),
                series_name: p.series.series_name().to_string(),
                modality: p.classification.modality(),
                suffix: p.classification.suffix(),
                rule_id: p.classification.rule_id().to_string(),
                destination: bids_path(
                    &session.subject,
                    &session.session,
                    &p.classification,
                    p.run,
                    Extension::NiftiGz,
                ),
            })
        })
        .collect();
    let converter_s = converter_time.as_secs_f64();
    let total_s = started.elapsed().as_secs_f64().max(converter_s);
    DatasetReport {
        status,
        dataset_path: dataset.to_path_buf(),
        subjects: subjects.len(),
        sessions: planned.len(),
        series: classifications.len(),
        classifications,
        timing: Timing { total_s, converter_s },
        failures: Vec::new(),
    }
}
