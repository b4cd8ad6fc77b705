//! Build and update BIDS neuroimaging datasets from DICOM series.
//!
//! The pipeline for every session in a request:
//!
//! 1. [`converter::convert_session`] runs the external DICOM to NIfTI
//!    converter (or the fixture-driven mock) and reads each series' sidecar.
//! 2. [`classifier`] picks a modality and suffix from user overrides, the
//!    presence of gradient files, or the sequence-parameter decision table.
//! 3. [`layout`] places files at their BIDS paths, writes
//!    `dataset_description.json` and the hidden `.bidstoolbox` state file,
//!    and commits atomically.
//! 4. [`validator::validate_layout`] checks the result.

pub mod classifier;
pub mod converter;
pub mod error;
pub mod layout;
pub mod model;
pub mod request;
pub mod validator;

pub use classifier::{classify_series, decision_table, DecisionTable};
pub use converter::{convert_session, detect_diffusion, parse_sidecar, ConvertedSeries, ConverterHandle};
pub use error::{ErrorBody, ErrorClass, ToolboxError};
pub use layout::{
    bids_path, create_dataset, read_state, update_dataset, write_state, DatasetReport, Toolbox, ToolboxState,
};
pub use model::{
    normalize_label, pair_is_legal, Classification, Modality, SequenceParams, SessionLabel, SubjectLabel,
    Suffix, UnclassifiableSeries,
};
pub use request::{parse_request, serialize_request, ConversionRequest, ModalityOverride, RequestKind};
pub use validator::{validate_layout, Violation, ViolationCode};

/// Crate version, reported by `/health` and `--version`.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
