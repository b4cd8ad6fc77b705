use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "bids-toolbox",
    version,
    about = "Build and update BIDS datasets from DICOM series"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a new dataset from a request document.
    Create(RequestArgs),
    /// Add sessions or metadata to an existing dataset.
    Update(RequestArgs),
    /// Classify one series from its sidecar JSON.
    Classify(ClassifyArgs),
    /// Print the decision table in evaluation order.
    Rules(RulesArgs),
    /// Check a dataset directory against the naming grammar.
    Validate(ValidateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RequestArgs {
    /// Request document (JSON).
    #[arg(long, short)]
    pub request: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    /// DICOM to NIfTI converter executable.
    #[arg(long, env = "BIDS_TOOLBOX_CONVERTER", default_value = "dcm2niix")]
    pub converter: PathBuf,
    /// Extra argument passed to the converter; repeat for several.
    #[arg(
        long = "converter-arg",
        env = "BIDS_TOOLBOX_CONVERTER_ARGS",
        value_delimiter = ' ',
        allow_hyphen_values = true
    )]
    pub converter_args: Vec<String>,
    /// Use fixture directories instead of running a converter.
    #[arg(long, env = "BIDS_TOOLBOX_MOCK_FIXTURES")]
    pub mock_fixtures: Option<PathBuf>,
    /// Sessions converted concurrently.
    #[arg(long, env = "BIDS_TOOLBOX_PARALLELISM", value_parser = clap::value_parser!(u64).range(1..))]
    pub parallelism: Option<u64>,
    /// Per-session converter timeout in seconds.
    #[arg(long = "converter-timeout", env = "BIDS_TOOLBOX_CONVERTER_TIMEOUT")]
    pub converter_timeout: Option<f64>,
    /// Decision table JSON replacing the built-in rules.
    #[arg(long, env = "BIDS_TOOLBOX_RULES")]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Sidecar JSON written by the converter.
    #[arg(long)]
    pub sidecar: PathBuf,
    /// Treat the series as having bval/bvec files.
    #[arg(long)]
    pub has_gradients: bool,
    /// Series name used for reporting; defaults to the sidecar file stem.
    #[arg(long)]
    pub series_name: Option<String>,
    #[arg(long, env = "BIDS_TOOLBOX_RULES")]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RulesArgs {
    #[arg(long, env = "BIDS_TOOLBOX_RULES")]
    pub rules: Option<PathBuf>,
    /// Print the full machine-readable table instead of summaries.
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "BIDS_TOOLBOX_BIND", default_value = bids_toolbox_service::DEFAULT_BIND)]
    pub bind: SocketAddr,
    /// Whole-request timeout in seconds.
    #[arg(
        long = "request-timeout",
        env = "BIDS_TOOLBOX_REQUEST_TIMEOUT",
        default_value_t = 3600.0
    )]
    pub request_timeout: f64,
    /// Browser origin allowed by CORS, e.g. http://localhost:5173.
    #[arg(long, env = "BIDS_TOOLBOX_ALLOWED_ORIGIN")]
    pub allowed_origin: Option<String>,
    /// Maximum request body size in bytes.
    #[arg(long, env = "BIDS_TOOLBOX_BODY_LIMIT", default_value_t = bids_toolbox_service::DEFAULT_BODY_LIMIT)]
    pub body_limit: usize,
    #[command(flatten)]
    pub engine: EngineArgs,
}
