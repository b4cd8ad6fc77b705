//! Shared domain vocabulary: entity labels, modalities, suffixes and
//! classification outcomes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("label is empty")]
    EmptyLabel,
    #[error("label {raw:?} contains illegal character {ch:?}")]
    IllegalCharacter { raw: String, ch: char },
}

/// Normalizes a raw label: strips one leading entity prefix (`sub-` or
/// `ses-`) and checks the rest is a non-empty run of ASCII alphanumerics.
///
/// Hyphens are tolerated in the input only as part of the prefix.
pub fn normalize_label(raw: &str) -> Result<String, LabelError> {
    normalize_with_prefixes(raw, &["sub-", "ses-"])
}

fn normalize_with_prefixes(raw: &str, prefixes: &[&str]) -> Result<String, LabelError> {
    if let Some(ch) = raw.chars().find(|c| !(c.is_ascii_alphanumeric() || *c == '-')) {
        return Err(LabelError::IllegalCharacter {
            raw: raw.to_string(),
            ch,
        });
    }
    let body = prefixes.iter().find_map(|p| raw.strip_prefix(p)).unwrap_or(raw);
    if body.is_empty() {
        return Err(LabelError::EmptyLabel);
    }
    if body.contains('-') {
        return Err(LabelError::IllegalCharacter {
            raw: raw.to_string(),
            ch: '-',
        });
    }
    Ok(body.to_string())
}

macro_rules! entity_label {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(String);

        impl $name {
            /// Entity prefix used in BIDS paths.
            pub const PREFIX: &'static str = $prefix;

            pub fn parse(raw: &str) -> Result<Self, LabelError> {
                normalize_with_prefixes(raw, &[$prefix]).map(Self)
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl FromStr for $name {
            type Err = LabelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::parse(s)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                Self::parse(&raw).map_err(serde::de::Error::custom)
            }
        }
    };
}

entity_label!(
    /// Subject label (`sub-<label>`), alphanumeric only.
    SubjectLabel,
    "sub-"
);
entity_label!(
    /// Session label (`ses-<label>`), alphanumeric only.
    SessionLabel,
    "ses-"
);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {kind} {value:?}")]
pub struct UnknownVariant {
    pub kind: &'static str,
    pub value: String,
}

/// BIDS data-type directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Anat,
    Func,
    Dwi,
    Fmap,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Anat, Modality::Func, Modality::Dwi, Modality::Fmap];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Anat => "anat",
            Modality::Func => "func",
            Modality::Dwi => "dwi",
            Modality::Fmap => "fmap",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownVariant {
                kind: "modality",
                value: s.to_string(),
            })
    }
}

/// BIDS filename suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Suffix {
    T1w,
    T2w,
    #[serde(rename = "FLAIR")]
    Flair,
    #[serde(rename = "bold")]
    Bold,
    #[serde(rename = "dwi")]
    Dwi,
}

impl Suffix {
    pub const ALL: [Suffix; 5] = [Suffix::T1w, Suffix::T2w, Suffix::Flair, Suffix::Bold, Suffix::Dwi];

    pub fn as_str(self) -> &'static str {
        match self {
            Suffix::T1w => "T1w",
            Suffix::T2w => "T2w",
            Suffix::Flair => "FLAIR",
            Suffix::Bold => "bold",
            Suffix::Dwi => "dwi",
        }
    }
}

impl fmt::Display for Suffix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suffix {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suffix::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| UnknownVariant {
                kind: "type",
                value: s.to_string(),
            })
    }
}

/// True iff `suffix` may appear under the `modality` directory.
pub fn pair_is_legal(modality: Modality, suffix: Suffix) -> bool {
    matches!(
        (modality, suffix),
        (Modality::Anat, Suffix::T1w | Suffix::T2w | Suffix::Flair)
            | (Modality::Func, Suffix::Bold)
            | (Modality::Dwi, Suffix::Dwi)
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("type {suffix} is not valid for modality {modality}")]
pub struct IllegalPair {
    pub modality: Modality,
    pub suffix: Suffix,
}

/// A legal (modality, suffix) pair plus the rule that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Classification {
    modality: Modality,
    suffix: Suffix,
    rule_id: String,
}

impl Classification {
    pub fn new(modality: Modality, suffix: Suffix, rule_id: impl Into<String>) -> Result<Self, IllegalPair> {
        if !pair_is_legal(modality, suffix) {
            return Err(IllegalPair { modality, suffix });
        }
        Ok(Self {
            modality,
            suffix,
            rule_id: rule_id.into(),
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn suffix(&self) -> Suffix {
        self.suffix
    }

    pub fn rule_id(&self) -> &str {
        &self.rule_id
    }
}

impl<'de> Deserialize<'de> for Classification {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            modality: Modality,
            suffix: Suffix,
            rule_id: String,
        }
        let raw = Raw::deserialize(d)?;
        Classification::new(raw.modality, raw.suffix, raw.rule_id).map_err(serde::de::Error::custom)
    }
}

/// A series the classifier could not place.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnclassifiableSeries {
    pub series_name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{field} must be positive and finite, got {value}")]
    NegativeTime { field: &'static str, value: f64 },
    #[error("flip angle must lie in (0, 180], got {0}")]
    BadFlipAngle(f64),
}

/// MR sequence parameters of one converted series. Times are milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceParams {
    pub fa_deg: Option<f64>,
    pub ir: bool,
    pub ss: Option<Vec<String>>,
    pub te_ms: Option<f64>,
    pub ti_ms: Option<f64>,
    pub tr_ms: Option<f64>,
}

impl SequenceParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        for (field, value) in [
            ("te_ms", self.te_ms),
            ("ti_ms", self.ti_ms),
            ("tr_ms", self.tr_ms),
        ] {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    return Err(ParamError::NegativeTime { field, value: v });
                }
            }
        }
        if let Some(fa) = self.fa_deg {
            if !(fa > 0.0 && fa <= 180.0) {
                return Err(ParamError::BadFlipAngle(fa));
            }
        }
        Ok(())
    }

    /// True when the scanning-sequence list contains `code` exactly.
    pub fn has_sequence(&self, code: &str) -> bool {
        self.ss
            .as_deref()
            .is_some_and(|codes| codes.iter().any(|c| c == code))
    }

    /// Inversion-recovery branch: explicit flag or an inversion time.
    pub fn is_inversion_recovery(&self) -> bool {
        self.ir || self.ti_ms.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_label("01").unwrap(), "01");
        assert_eq!(normalize_label("sub-01").unwrap(), "01");
        assert_eq!(normalize_label("ses-pre").unwrap(), "pre");
        assert!(matches!(
            normalize_label("s@b"),
            Err(LabelError::IllegalCharacter { ch: '@', .. })
        ));
        assert_eq!(normalize_label(""), Err(LabelError::EmptyLabel));
        assert_eq!(normalize_label("sub-"), Err(LabelError::EmptyLabel));
        assert!(matches!(
            normalize_label("a-b"),
            Err(LabelError::IllegalCharacter { ch: '-', .. })
        ));
    }

    #[test]
    fn typed_labels_strip_only_their_prefix() {
        assert_eq!(SubjectLabel::parse("sub-07").unwrap().as_str(), "07");
        assert!(SubjectLabel::parse("ses-07").is_err());
        assert_eq!(SessionLabel::parse("ses-b").unwrap().as_str(), "b");
    }

    #[test]
    fn pair_table() {
        assert!(pair_is_legal(Modality::Anat, Suffix::T1w));
        assert!(!pair_is_legal(Modality::Func, Suffix::T1w));
        assert!(pair_is_legal(Modality::Dwi, Suffix::Dwi));
        for s in Suffix::ALL {
            assert!(!pair_is_legal(Modality::Fmap, s));
        }
        assert!(Classification::new(Modality::Anat, Suffix::Bold, "x").is_err());
    }

    #[test]
    fn enum_strings_round_trip() {
        for m in Modality::ALL {
            assert_eq!(m.as_str().parse::<Modality>().unwrap(), m);
        }
        for s in Suffix::ALL {
            assert_eq!(s.as_str().parse::<Suffix>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert!("ANAT".parse::<Modality>().is_err());
    }

    #[test]
    fn params_validation() {
        let ok = SequenceParams {
            fa_deg: Some(180.0),
            te_ms: Some(1.0),
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        let bad = SequenceParams {
            fa_deg: Some(0.0),
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(ParamError::BadFlipAngle(0.0)));
        let bad = SequenceParams {
            tr_ms: Some(-3.0),
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(ParamError::NegativeTime { field: "tr_ms", .. })
        ));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in "(sub-|ses-)?[A-Za-z0-9]{1,12}") {
            let once = normalize_label(&raw).unwrap();
            prop_assert_eq!(normalize_label(&once).unwrap(), once);
        }

        #[test]
        fn accepted_labels_are_alphanumeric(raw in "[A-Za-z0-9@_ .-]{0,12}") {
            if let Ok(label) = normalize_label(&raw) {
                prop_assert!(!label.is_empty());
                prop_assert!(label.chars().all(|c| c.is_ascii_alphanumeric()));
            }
        }
    }
}
