//! Scan-type detection from converter output.
//!
//! A series is classified by, in order: the first user override whose tag
//! occurs in the series name, then the first decision-table rule whose
//! conditions all hold. A condition on an absent parameter never holds.
//!
//! The built-in table:
//!
//! | rule              | conditions                                         | result                          |
//! |-------------------|----------------------------------------------------|---------------------------------|
//! | `diffusion-files` | `.bval` and `.bvec` written                        | dwi / dwi                       |
//! | `R2`              | SS contains `RM`                                   | unclassifiable: research mode   |
//! | `R3a`             | IR, TI in [1800, 3200] ms, TE >= 80 ms             | anat / FLAIR                    |
//! | `R3b`             | IR, TI in [400, 1400] ms                           | anat / T1w                      |
//! | `R3c`             | IR                                                 | unclassifiable: ambiguous IR    |
//! | `R4`              | SS contains `EP`, TR in [300, 5000], TE in [20, 60]| func / bold                     |
//! | `R5`              | TE >= 80 ms, TR >= 2000 ms                         | anat / T2w                      |
//! | `R6`              | TE <= 30 ms, TR <= 800 ms, FA >= 50 deg            | anat / T1w                      |
//! | `R7`              | (always)                                           | unclassifiable: no rule matched |
//!
//! "IR" means the inversion-recovery flag is set or an inversion time exists.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::converter::{detect_diffusion, ConvertedSeries};
use crate::model::{pair_is_legal, Classification, Modality, SequenceParams, Suffix, UnclassifiableSeries};
use crate::request::ModalityOverride;

pub const OVERRIDE_RULE_ID: &str = "override";
pub const DIFFUSION_RULE_ID: &str = "diffusion-files";

pub const REASON_RESEARCH_MODE: &str = "research mode";
pub const REASON_AMBIGUOUS_IR: &str = "ambiguous inversion recovery";
pub const REASON_NO_RULE: &str = "no rule matched";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Param {
    #[serde(rename = "fa_deg")]
    FlipAngle,
    #[serde(rename = "te_ms")]
    EchoTime,
    #[serde(rename = "ti_ms")]
    InversionTime,
    #[serde(rename = "tr_ms")]
    RepetitionTime,
}

impl Param {
    fn read(self, p: &SequenceParams) -> Option<f64> {
        match self {
            Param::FlipAngle => p.fa_deg,
            Param::EchoTime => p.te_ms,
            Param::InversionTime => p.ti_ms,
            Param::RepetitionTime => p.tr_ms,
        }
    }

    fn label(self) -> (&'static str, &'static str) {
        match self {
            Param::FlipAngle => ("FA", "deg"),
            Param::EchoTime => ("TE", "ms"),
            Param::InversionTime => ("TI", "ms"),
            Param::RepetitionTime => ("TR", "ms"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Condition {
    GradientFiles,
    SequenceContains {
        code: String,
    },
    InversionRecovery,
    /// Inclusive bounds; at least one must be set.
    Range {
        param: Param,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
}

impl Condition {
    fn holds(&self, params: &SequenceParams, has_gradients: bool) -> bool {
        match self {
            Condition::GradientFiles => has_gradients,
            Condition::SequenceContains { code } => params.has_sequence(code),
            Condition::InversionRecovery => params.is_inversion_recovery(),
            Condition::Range { param, min, max } => param
                .read(params)
                .is_some_and(|v| min.is_none_or(|lo| v >= lo) && max.is_none_or(|hi| v <= hi)),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::GradientFiles => f.write_str(".bval and .bvec present"),
            Condition::SequenceContains { code } => write!(f, "SS contains {code}"),
            Condition::InversionRecovery => f.write_str("IR (flag set or TI present)"),
            Condition::Range { param, min, max } => {
                let (name, unit) = param.label();
                match (min, max) {
                    (Some(lo), Some(hi)) => write!(f, "{name} in [{lo}, {hi}] {unit}"),
                    (Some(lo), None) => write!(f, "{name} >= {lo} {unit}"),
                    (None, Some(hi)) => write!(f, "{name} <= {hi} {unit}"),
                    (None, None) => write!(f, "{name} present"),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleResult {
    Classify { modality: Modality, suffix: Suffix },
    Unclassifiable { reason: String },
}

impl fmt::Display for RuleResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleResult::Classify { modality, suffix } => write!(f, "{modality}/{suffix}"),
            RuleResult::Unclassifiable { reason } => write!(f, "unclassifiable ({reason})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRule {
    pub rule_id: String,
    #[serde(default)]
    pub conditions: Vec<Condition>,
    pub result: RuleResult,
}

impl DecisionRule {
    pub fn matches(&self, params: &SequenceParams, has_gradients: bool) -> bool {
        self.conditions.iter().all(|c| c.holds(params, has_gradients))
    }

    pub fn predicate_text(&self) -> String {
        if self.conditions.is_empty() {
            return "always".to_string();
        }
        self.conditions
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" AND ")
    }
}

/// Human-readable view of one rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleDescriptor {
    pub rule_id: String,
    pub predicate: String,
    pub result: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("rule table is not valid JSON: {0}")]
    Malformed(String),
    #[error("rule table is empty")]
    Empty,
    #[error("rule id {0:?} is duplicated or reserved")]
    DuplicateRuleId(String),
    #[error("rule {0:?} has an empty id")]
    EmptyRuleId(usize),
    #[error("last rule {0:?} must have no conditions")]
    NoCatchAll(String),
    #[error("rule {rule_id:?}: type {suffix} is not valid for modality {modality}")]
    IllegalPair {
        rule_id: String,
        modality: Modality,
        suffix: Suffix,
    },
    #[error("rule {0:?} has a range condition with neither bound")]
    UnboundedRange(String),
}

/// Ordered, first-match-wins rule list. Always total: the final rule has
/// no conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTable {
    rules: Vec<DecisionRule>,
}

impl DecisionTable {
    pub fn new(rules: Vec<DecisionRule>) -> Result<Self, TableError> {
        let last = rules.last().ok_or(TableError::Empty)?;
        if !last.conditions.is_empty() {
            return Err(TableError::NoCatchAll(last.rule_id.clone()));
        }
        let mut seen: HashSet<&str> = HashSet::from([OVERRIDE_RULE_ID]);
        for (i, rule) in rules.iter().enumerate() {
            if rule.rule_id.is_empty() {
                return Err(TableError::EmptyRuleId(i));
            }
            if !seen.insert(&rule.rule_id) {
                return Err(TableError::DuplicateRuleId(rule.rule_id.clone()));
            }
            if let RuleResult::Classify { modality, suffix } = rule.result {
                if !pair_is_legal(modality, suffix) {
                    return Err(TableError::IllegalPair {
                        rule_id: rule.rule_id.clone(),
                        modality,
                        suffix,
                    });
                }
            }
            if rule.conditions.iter().any(|c| {
                matches!(
                    c,
                    Condition::Range {
                        min: None,
                        max: None,
                        ..
                    }
                )
            }) {
                return Err(TableError::UnboundedRange(rule.rule_id.clone()));
            }
        }
        Ok(Self { rules })
    }

    /// Loads a table from a JSON array of rules.
    pub fn from_json(text: &[u8]) -> Result<Self, TableError> {
        let rules: Vec<DecisionRule> =
            serde_json::from_slice(text).map_err(|e| TableError::Malformed(e.to_string()))?;
        Self::new(rules)
    }

    pub fn from_file(path: &Path) -> Result<Self, TableError> {
        let text =
            std::fs::read(path).map_err(|e| TableError::Malformed(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rules).expect("rules always serialize")
    }

    /// The built-in table, shared.
    pub fn builtin() -> &'static DecisionTable {
        static TABLE: OnceLock<DecisionTable> = OnceLock::new();
        TABLE.get_or_init(|| DecisionTable::new(builtin_rules()).expect("built-in table is valid"))
    }

    pub fn rules(&self) -> &[DecisionRule] {
        &self.rules
    }

    pub fn describe(&self) -> Vec<RuleDescriptor> {
        self.rules
            .iter()
            .map(|r| RuleDescriptor {
                rule_id: r.rule_id.clone(),
                predicate: r.predicate_text(),
                result: r.result.to_string(),
            })
            .collect()
    }

    /// The rule that fires for these inputs.
    pub fn first_match(&self, params: &SequenceParams, has_gradients: bool) -> &DecisionRule {
        self.rules
            .iter()
            .find(|r| r.matches(params, has_gradients))
            .expect("the last rule is unconditional")
    }

    pub fn classify(
        &self,
        series_name: &str,
        params: &SequenceParams,
        has_gradients: bool,
        overrides: &[ModalityOverride],
    ) -> Result<Classification, UnclassifiableSeries> {
        if let Some(o) = matching_override(series_name, overrides) {
            return Ok(Classification::new(o.modality, o.suffix, OVERRIDE_RULE_ID)
                .expect("overrides are validated at parse time"));
        }
        let rule = self.first_match(params, has_gradients);
        match &rule.result {
            RuleResult::Classify { modality, suffix } => {
                Ok(Classification::new(*modality, *suffix, rule.rule_id.clone())
                    .expect("table pairs are validated on construction"))
            }
            RuleResult::Unclassifiable { reason } => Err(UnclassifiableSeries {
                series_name: series_name.to_string(),
                reason: reason.clone(),
            }),
        }
    }

    pub fn classify_series(
        &self,
        series: &ConvertedSeries,
        overrides: &[ModalityOverride],
    ) -> Result<Classification, UnclassifiableSeries> {
        self.classify(
            series.series_name(),
            series.params(),
            detect_diffusion(series),
            overrides,
        )
    }
}

impl Default for DecisionTable {
    fn default() -> Self {
        Self::builtin().clone()
    }
}

/// First override, in request order, whose tag occurs in `series_name`
/// ignoring case.
pub fn matching_override<'a>(
    series_name: &str,
    overrides: &'a [ModalityOverride],
) -> Option<&'a ModalityOverride> {
    let name = series_name.to_lowercase();
    overrides.iter().find(|o| name.contains(&o.tag.to_lowercase()))
}

/// Classifies with the built-in table.
pub fn classify_series(
    series: &ConvertedSeries,
    overrides: &[ModalityOverride],
) -> Result<Classification, UnclassifiableSeries> {
    DecisionTable::builtin().classify_series(series, overrides)
}

/// Descriptors of the built-in table in evaluation order.
pub fn decision_table() -> Vec<RuleDescriptor> {
    DecisionTable::builtin().describe()
}

fn range(param: Param, min: Option<f64>, max: Option<f64>) -> Condition {
    Condition::Range { param, min, max }
}

fn classify(modality: Modality, suffix: Suffix) -> RuleResult {
    RuleResult::Classify { modality, suffix }
}

fn reject(reason: &str) -> RuleResult {
    RuleResult::Unclassifiable {
        reason: reason.to_string(),
    }
}

fn rule(id: &str, conditions: Vec<Condition>, result: RuleResult) -> DecisionRule {
    DecisionRule {
        rule_id: id.to_string(),
        conditions,
        result,
    }
}

fn builtin_rules() -> Vec<DecisionRule> {
    use Param::*;
    let seq = |code: &str| Condition::SequenceContains {
        code: code.to_string(),
    };
    vec![
        rule(
            DIFFUSION_RULE_ID,
            vec![Condition::GradientFiles],
            classify(Modality::Dwi, Suffix::Dwi),
        ),
        rule("R2", vec![seq("RM")], reject(REASON_RESEARCH_MODE)),
        rule(
            "R3a",
            vec![
                Condition::InversionRecovery,
                range(InversionTime, Some(1800.0), Some(3200.0)),
                range(EchoTime, Some(80.0), None),
            ],
            classify(Modality::Anat, Suffix::Flair),
        ),
        rule(
            "R3b",
            vec![
                Condition::InversionRecovery,
                range(InversionTime, Some(400.0), Some(1400.0)),
            ],
            classify(Modality::Anat, Suffix::T1w),
        ),
        rule(
            "R3c",
            vec![Condition::InversionRecovery],
            reject(REASON_AMBIGUOUS_IR),
        ),
        rule(
            "R4",
            vec![
                seq("EP"),
                range(RepetitionTime, Some(300.0), Some(5000.0)),
                range(EchoTime, Some(20.0), Some(60.0)),
            ],
            classify(Modality::Func, Suffix::Bold),
        ),
        rule(
            "R5",
            vec![
                range(EchoTime, Some(80.0), None),
                range(RepetitionTime, Some(2000.0), None),
            ],
            classify(Modality::Anat, Suffix::T2w),
        ),
        rule(
            "R6",
            vec![
                range(EchoTime, None, Some(30.0)),
                range(RepetitionTime, None, Some(800.0)),
                range(FlipAngle, Some(50.0), None),
            ],
            classify(Modality::Anat, Suffix::T1w),
        ),
        rule("R7", vec![], reject(REASON_NO_RULE)),
    ]
}
