use std::fmt;
use std::num::NonZeroU32;

use crate::model::{Classification, SessionLabel, SubjectLabel};

/// File extensions the builder writes for a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extension {
    NiftiGz,
    Json,
    Bval,
    Bvec,
}

impl Extension {
    pub fn as_str(self) -> &'static str {
        match self {
            Extension::NiftiGz => ".nii.gz",
            Extension::Json => ".json",
            Extension::Bval => ".bval",
            Extension::Bvec => ".bvec",
        }
    }
}

impl fmt::Display for Extension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `sub-<sub>/ses-<ses>/<modality>/sub-<sub>_ses-<ses>[_run-<n>]_<suffix><ext>`,
/// always with `/` separators.
pub fn bids_path(
    sub: &SubjectLabel,
    ses: &SessionLabel,
    cls: &Classification,
    run: Option<NonZeroU32>,
    extension: Extension,
) -> String {
    let run = run.map(|n| format!("_run-{n}")).unwrap_or_default();
    format!(
        "sub-{sub}/ses-{ses}/{modality}/sub-{sub}_ses-{ses}{run}_{suffix}{extension}",
        modality = cls.modality(),
        suffix = cls.suffix(),
    )
}
