//! The JSON request message shared by `createBids`, `updateBids` and the CLI.
//!
//! ```json
//! {
//!  "scans": { "01": { "01": "/dicom/sub01/ses01" } },
//!  "output": "/data/dataset",
//!  "metadata": {
//!   "modalities": [{ "tag": "scan01", "modality": "anat", "type": "T1w" }],
//!   "datasetDescription": { "key01": "value01" }
//!  },
//!  "overwrite": false
//! }
//! ```
//!
//! `overwrite` is an extension: when true, `updateBids` re-converts sessions
//! the dataset already holds instead of failing with a conflict.

use std::path::Path;

use indexmap::IndexMap;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{pair_is_legal, LabelError, Modality, SessionLabel, SubjectLabel, Suffix};

pub type ScanMap = IndexMap<SubjectLabel, IndexMap<SessionLabel, String>>;

/// Which endpoint a request is validated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestKind {
    Create,
    Update,
}

/// User-supplied modality/type for every series whose name contains `tag`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityOverride {
    pub tag: String,
    pub modality: Modality,
    pub suffix: Suffix,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversionRequest {
    pub scans: ScanMap,
    pub output: String,
    pub overrides: Vec<ModalityOverride>,
    pub dataset_description: IndexMap<String, String>,
    pub overwrite: bool,
}

impl ConversionRequest {
    pub fn output_path(&self) -> &Path {
        Path::new(&self.output)
    }

    /// All (subject, session, source directory) triples in request order.
    pub fn sessions(&self) -> impl Iterator<Item = (&SubjectLabel, &SessionLabel, &str)> {
        self.scans
            .iter()
            .flat_map(|(sub, sessions)| sessions.iter().map(move |(ses, dir)| (sub, ses, dir.as_str())))
    }

    pub fn session_count(&self) -> usize {
        self.scans.values().map(IndexMap::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RequestError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("missing required key {0:?}")]
    MissingKey(String),
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{key:?} must be {expected}")]
    InvalidType { key: String, expected: &'static str },
    #[error("{0}")]
    EmptyScans(String),
    #[error("bad label at {key:?}: {source}")]
    BadLabel {
        key: String,
        #[source]
        source: LabelError,
    },
    #[error("duplicate label {0:?} after normalization")]
    DuplicateLabel(String),
    #[error("illegal modality override: {0}")]
    IllegalOverride(String),
    #[error("{0:?} must not be empty")]
    EmptyValue(String),
}

impl RequestError {
    pub fn code(&self) -> &'static str {
        match self {
            RequestError::MalformedJson(_) => "MalformedJson",
            RequestError::MissingKey(_) => "MissingKey",
            RequestError::UnknownKey(_) => "UnknownKey",
            RequestError::InvalidType { .. } => "InvalidType",
            RequestError::EmptyScans(_) => "EmptyScans",
            RequestError::BadLabel { .. } | RequestError::DuplicateLabel(_) => "BadLabel",
            RequestError::IllegalOverride(_) => "IllegalOverride",
            RequestError::EmptyValue(_) => "EmptyValue",
        }
    }
}

const TOP_LEVEL_KEYS: [&str; 4] = ["scans", "output", "metadata", "overwrite"];
const METADATA_KEYS: [&str; 2] = ["modalities", "datasetDescription"];
const OVERRIDE_KEYS: [&str; 3] = ["tag", "modality", "type"];

/// Parses and validates a request document for the given endpoint.
pub fn parse_request(text: &[u8], kind: RequestKind) -> Result<ConversionRequest, RequestError> {
    let doc: Value = serde_json::from_slice(text).map_err(|e| RequestError::MalformedJson(e.to_string()))?;
    let root = as_object(&doc, "<root>")?;
    reject_unknown(root, &TOP_LEVEL_KEYS, "")?;

    let output = match root.get("output") {
        Some(v) => as_str(v, "output")?.to_string(),
        None => return Err(RequestError::MissingKey("output".into())),
    };
    if output.is_empty() {
        return Err(RequestError::EmptyValue("output".into()));
    }

    let scans = match root.get("scans") {
        Some(v) => parse_scans(v)?,
        None if kind == RequestKind::Update => ScanMap::new(),
        None => return Err(RequestError::MissingKey("scans".into())),
    };

    let mut overrides = Vec::new();
    let mut dataset_description = IndexMap::new();
    if let Some(meta) = root.get("metadata") {
        let meta = as_object(meta, "metadata")?;
        reject_unknown(meta, &METADATA_KEYS, "metadata.")?;
        if let Some(list) = meta.get("modalities") {
            overrides = parse_overrides(list)?;
        }
        if let Some(desc) = meta.get("datasetDescription") {
            let desc = as_object(desc, "metadata.datasetDescription")?;
            for (k, v) in desc {
                let key = format!("metadata.datasetDescription.{k}");
                dataset_description.insert(k.clone(), as_str(v, &key)?.to_string());
            }
        }
    }

    let overwrite = match root.get("overwrite") {
        None => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => {
            return Err(RequestError::InvalidType {
                key: "overwrite".into(),
                expected: "a boolean",
            })
        }
    };

    if scans.is_empty() {
        match kind {
            RequestKind::Create => {
                return Err(RequestError::EmptyScans(
                    "\"scans\" must list at least one subject".into(),
                ))
            }
            RequestKind::Update if dataset_description.is_empty() => {
                return Err(RequestError::EmptyScans(
                    "update needs at least one subject or a datasetDescription entry".into(),
                ))
            }
            RequestKind::Update => {}
        }
    }

    Ok(ConversionRequest {
        scans,
        output,
        overrides,
        dataset_description,
        overwrite,
    })
}

fn parse_scans(value: &Value) -> Result<ScanMap, RequestError> {
    let subjects = as_object(value, "scans")?;
    let mut scans = ScanMap::new();
    for (raw_sub, sessions) in subjects {
        let key = format!("scans.{raw_sub}");
        let sub = SubjectLabel::parse(raw_sub).map_err(|source| RequestError::BadLabel {
            key: key.clone(),
            source,
        })?;
        let sessions = as_object(sessions, &key)?;
        if sessions.is_empty() {
            return Err(RequestError::EmptyScans(format!(
                "subject {raw_sub:?} lists no sessions"
            )));
        }
        let mut parsed = IndexMap::new();
        for (raw_ses, dir) in sessions {
            let key = format!("scans.{raw_sub}.{raw_ses}");
            let ses = SessionLabel::parse(raw_ses).map_err(|source| RequestError::BadLabel {
                key: key.clone(),
                source,
            })?;
            let dir = as_str(dir, &key)?;
            if dir.is_empty() {
                return Err(RequestError::EmptyValue(key));
            }
            if parsed.insert(ses, dir.to_string()).is_some() {
                return Err(RequestError::DuplicateLabel(key));
            }
        }
        if scans.insert(sub, parsed).is_some() {
            return Err(RequestError::DuplicateLabel(key));
        }
    }
    Ok(scans)
}

fn parse_overrides(value: &Value) -> Result<Vec<ModalityOverride>, RequestError> {
    let Value::Array(items) = value else {
        return Err(RequestError::InvalidType {
            key: "metadata.modalities".into(),
            expected: "an array",
        });
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let prefix = format!("metadata.modalities[{i}]");
            let obj = as_object(item, &prefix)?;
            reject_unknown(obj, &OVERRIDE_KEYS, &format!("{prefix}."))?;
            let field = |name: &str| -> Result<&str, RequestError> {
                let key = format!("{prefix}.{name}");
                match obj.get(name) {
                    Some(v) => as_str(v, &key),
                    None => Err(RequestError::MissingKey(key)),
                }
            };
            let tag = field("tag")?;
            if tag.is_empty() {
                return Err(RequestError::EmptyValue(format!("{prefix}.tag")));
            }
            let modality: Modality = field("modality")?
                .parse()
                .map_err(|e| RequestError::IllegalOverride(format!("{prefix}: {e}")))?;
            let suffix: Suffix = field("type")?
                .parse()
                .map_err(|e| RequestError::IllegalOverride(format!("{prefix}: {e}")))?;
            if !pair_is_legal(modality, suffix) {
                return Err(RequestError::IllegalOverride(format!(
                    "{prefix}: type {suffix} is not valid for modality {modality}"
                )));
            }
            Ok(ModalityOverride {
                tag: tag.to_string(),
                modality,
                suffix,
            })
        })
        .collect()
}

fn as_object<'a>(value: &'a Value, key: &str) -> Result<&'a Map<String, Value>, RequestError> {
    value.as_object().ok_or_else(|| RequestError::InvalidType {
        key: key.to_string(),
        expected: "an object",
    })
}

fn as_str<'a>(value: &'a Value, key: &str) -> Result<&'a str, RequestError> {
    value.as_str().ok_or_else(|| RequestError::InvalidType {
        key: key.to_string(),
        expected: "a string",
    })
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str], prefix: &str) -> Result<(), RequestError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(RequestError::UnknownKey(format!("{prefix}{k}"))),
        None => Ok(()),
    }
}

/// Builds the JSON value for a request. Empty optional sections are omitted.
pub fn request_to_value(req: &ConversionRequest) -> Value {
    let mut root = Map::new();
    let scans: Map<String, Value> = req
        .scans
        .iter()
        .map(|(sub, sessions)| {
            let sessions: Map<String, Value> = sessions
                .iter()
                .map(|(ses, dir)| (ses.to_string(), Value::String(dir.clone())))
                .collect();
            (sub.to_string(), Value::Object(sessions))
        })
        .collect();
    root.insert("scans".into(), Value::Object(scans));
    root.insert("output".into(), Value::String(req.output.clone()));

    let mut meta = Map::new();
    if !req.overrides.is_empty() {
        let list = req
            .overrides
            .iter()
            .map(|o| {
                let mut m = Map::new();
                m.insert("tag".into(), Value::String(o.tag.clone()));
                m.insert("modality".into(), Value::String(o.modality.to_string()));
                m.insert("type".into(), Value::String(o.suffix.to_string()));
                Value::Object(m)
            })
            .collect();
        meta.insert("modalities".into(), Value::Array(list));
    }
    if !req.dataset_description.is_empty() {
        let desc = req
            .dataset_description
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        meta.insert("datasetDescription".into(), Value::Object(desc));
    }
    if !meta.is_empty() {
        root.insert("metadata".into(), Value::Object(meta));
    }
    if req.overwrite {
        root.insert("overwrite".into(), Value::Bool(true));
    }
    Value::Object(root)
}

/// Compact JSON form of a request.
pub fn serialize_request(req: &ConversionRequest) -> String {
    request_to_value(req).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const REFERENCE_REQUEST: &str = include_str!("../tests/fixtures/reference_request.json");

    fn create(text: &str) -> Result<ConversionRequest, RequestError> {
        parse_request(text.as_bytes(), RequestKind::Create)
    }

    #[test]
    fn reference_request_parses() {
        let req = create(REFERENCE_REQUEST).unwrap();
        assert_eq!(req.scans.len(), 1);
        let sessions = &req.scans[&SubjectLabel::parse("01").unwrap()];
        let dirs: Vec<_> = sessions.iter().map(|(s, d)| (s.as_str(), d.as_str())).collect();
        assert_eq!(
            dirs,
            [
                ("01", "/path/to/DICOMs/for/sub01/ses01"),
                ("02", "/path/to/DICOMs/for/sub01/ses02")
            ]
        );
        assert_eq!(req.output, "/path/to/store/dataset");
        assert_eq!(
            req.overrides,
            [ModalityOverride {
                tag: "scan01".into(),
                modality: Modality::Anat,
                suffix: Suffix::T1w
            }]
        );
        let desc: Vec<_> = req.dataset_description.iter().collect();
        assert_eq!(desc.len(), 2);
        assert_eq!(desc[0], (&"key01".to_string(), &"value01".to_string()));
        assert_eq!(desc[1], (&"key02".to_string(), &"value02".to_string()));
        assert!(!req.overwrite);
    }

    #[test]
    fn empty_scans_rejected() {
        assert!(matches!(
            create(r#"{"scans":{}, "output":"/x"}"#),
            Err(RequestError::EmptyScans(_))
        ));
        assert!(matches!(
            create(r#"{"scans":{"01":{}}, "output":"/x"}"#),
            Err(RequestError::EmptyScans(_))
        ));
    }

    #[test]
    fn missing_output() {
        assert_eq!(
            create(r#"{"scans":{"01":{"01":"/d"}}}"#),
            Err(RequestError::MissingKey("output".into()))
        );
        assert_eq!(create("{}").unwrap_err().code(), "MissingKey");
    }

    #[test]
    fn illegal_override_pair() {
        let text = REFERENCE_REQUEST.replace(r#""type": "T1w""#, r#""type": "bold""#);
        assert_ne!(text, REFERENCE_REQUEST);
        assert!(matches!(create(&text), Err(RequestError::IllegalOverride(_))));
        let text = REFERENCE_REQUEST.replace(r#""modality": "anat""#, r#""modality": "pet""#);
        assert!(matches!(create(&text), Err(RequestError::IllegalOverride(_))));
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert_eq!(
            create(r#"{"scans":{"01":{"01":"/d"}}, "outpt":"/x"}"#),
            Err(RequestError::UnknownKey("outpt".into()))
        );
        assert_eq!(
            create(r#"{"scans":{"01":{"01":"/d"}}, "output":"/x", "metadata":{"modality":[]}}"#),
            Err(RequestError::UnknownKey("metadata.modality".into()))
        );
    }

    #[test]
    fn labels_are_normalized_and_checked() {
        let req = create(r#"{"scans":{"sub-01":{"ses-a":"/d"}}, "output":"/x"}"#).unwrap();
        let (sub, ses, _) = req.sessions().next().unwrap();
        assert_eq!((sub.as_str(), ses.as_str()), ("01", "a"));
        assert_eq!(
            create(r#"{"scans":{"s@b":{"01":"/d"}}, "output":"/x"}"#)
                .unwrap_err()
                .code(),
            "BadLabel"
        );
        assert!(matches!(
            create(r#"{"scans":{"01":{"01":"/d"}, "sub-01":{"02":"/e"}}, "output":"/x"}"#),
            Err(RequestError::DuplicateLabel(_))
        ));
    }

    #[test]
    fn update_rules_for_empty_scans() {
        let upd = |t: &str| parse_request(t.as_bytes(), RequestKind::Update);
        assert!(matches!(
            upd(r#"{"output":"/x"}"#),
            Err(RequestError::EmptyScans(_))
        ));
        let req = upd(r#"{"output":"/x","metadata":{"datasetDescription":{"key03":"v"}}}"#).unwrap();
        assert!(req.scans.is_empty());
        assert!(matches!(
            create(r#"{"output":"/x","metadata":{"datasetDescription":{"k":"v"}}}"#),
            Err(RequestError::MissingKey(k)) if k == "scans"
        ));
    }

    #[test]
    fn paths_pass_through_verbatim() {
        let req = create(r#"{"scans":{"01":{"01":"~/$HOME/dicom"}}, "output":"~/out"}"#).unwrap();
        assert_eq!(req.output, "~/out");
        assert_eq!(req.sessions().next().unwrap().2, "~/$HOME/dicom");
    }

    #[test]
    fn serialization_omits_defaults() {
        let req = create(r#"{"scans":{"01":{"01":"/d"}}, "output":"/x"}"#).unwrap();
        assert_eq!(
            serialize_request(&req),
            r#"{"scans":{"01":{"01":"/d"}},"output":"/x"}"#
        );
    }

    #[test]
    fn round_trip_preserves_description_order() {
        let text = r#"{"scans":{"01":{"01":"/d"}},"output":"/x","metadata":{"datasetDescription":{"zeta":"1","alpha":"2","mid":"3"}},"overwrite":true}"#;
        let req = create(text).unwrap();
        let again = create(&serialize_request(&req)).unwrap();
        let keys: Vec<_> = again.dataset_description.keys().map(String::as_str).collect();
        assert_eq!(keys, ["zeta", "alpha", "mid"]);
        assert_eq!(again, req);
        assert_eq!(serialize_request(&req), text);
    }

    fn arb_request() -> impl Strategy<Value = ConversionRequest> {
        let label = "[A-Za-z0-9]{1,4}";
        let sessions = prop::collection::vec((label, "/[a-z0-9/]{1,12}"), 1..4);
        let scans = prop::collection::vec((label, sessions), 1..4);
        let overrides = prop::collection::vec(
            (
                "[a-z0-9_]{1,8}",
                prop::sample::select(vec![
                    (Modality::Anat, Suffix::T1w),
                    (Modality::Anat, Suffix::T2w),
                    (Modality::Anat, Suffix::Flair),
                    (Modality::Func, Suffix::Bold),
                    (Modality::Dwi, Suffix::Dwi),
                ]),
            ),
            0..3,
        );
        let desc = prop::collection::vec(("[A-Za-z]{1,8}", "[ -~]{0,10}"), 0..4);
        (scans, "/[a-z]{1,10}", overrides, desc, any::<bool>()).prop_map(
            |(scans, output, overrides, desc, overwrite)| {
                let mut map = ScanMap::new();
                for (sub, sessions) in scans {
                    let entry = map.entry(SubjectLabel::parse(&sub).unwrap()).or_default();
                    for (ses, dir) in sessions {
                        entry.insert(SessionLabel::parse(&ses).unwrap(), dir);
                    }
                }
                ConversionRequest {
                    scans: map,
                    output,
                    overrides: overrides
                        .into_iter()
                        .map(|(tag, (modality, suffix))| ModalityOverride {
                            tag,
                            modality,
                            suffix,
                        })
                        .collect(),
                    dataset_description: desc.into_iter().collect(),
                    overwrite,
                }
            },
        )
    }

    fn malformed_scans() -> impl Strategy<Value = String> {
        prop_oneof![
            Just(r#""/flat/path""#.to_string()),
            Just("[]".to_string()),
            Just("42".to_string()),
            Just("null".to_string()),
            Just(r#"{"01":"/not/nested"}"#.to_string()),
            Just(r#"{"01":["/a"]}"#.to_string()),
            Just(r#"{"01":{"01":5}}"#.to_string()),
            Just(r#"{"01":{"01":{"deep":"/x"}}}"#.to_string()),
            Just(r#"{"01":{"01":null}}"#.to_string()),
            "[0-9]{1,5}".prop_map(|n| format!(r#"{{"01":{{"01":{n}}}}}"#)),
        ]
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(req in arb_request()) {
            let text = serialize_request(&req);
            prop_assert_eq!(create(&text).unwrap(), req);
        }

        #[test]
        fn rejects_non_two_level_scans(scans in malformed_scans()) {
            let text = format!(r#"{{"scans":{scans},"output":"/x"}}"#);
            prop_assert!(create(&text).is_err());
        }
    }
}
