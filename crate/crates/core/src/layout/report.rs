use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::model::{Modality, SessionLabel, SubjectLabel, Suffix, UnclassifiableSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportStatus {
    Created,
    Updated,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub subject: SubjectLabel,
    pub session: SessionLabel,
    pub series_name: String,
    pub modality: Modality,
    pub suffix: Suffix,
    pub rule_id: String,
    pub destination: String,
}

/// Wall-clock split: whole operation vs. the conversion phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_s: f64,
    pub converter_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub status: ReportStatus,
    pub dataset_path: PathBuf,
    pub subjects: usize,
    pub sessions: usize,
    pub series: usize,
    pub classifications: Vec<SeriesSummary>,
    pub timing: Timing,
    pub failures: Vec<UnclassifiableSeries>,
}

impl DatasetReport {
    pub fn converter_share(&self) -> f64 {
        if self.timing.total_s > 0.0 {
            self.timing.converter_s / self.timing.total_s
        } else {
            0.0
        }
    }
}
