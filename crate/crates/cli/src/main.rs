mod cli;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::Duration;

use bids_toolbox::classifier::DecisionTable;
use bids_toolbox::{
    parse_request, parse_sidecar, validate_layout, ConverterHandle, ErrorBody, ErrorClass, RequestKind,
    Toolbox, ToolboxError,
};
use bids_toolbox_service::ServiceConfig;
use clap::Parser;
use serde_json::{json, Value};

use crate::cli::{ClassifyArgs, Cli, Command, EngineArgs, RequestArgs, RulesArgs, ServeArgs, ValidateArgs};

/// A failed command: exit status plus the error document for stderr.
struct Failure {
    exit: u8,
    body: ErrorBody,
}

impl Failure {
    fn new(class: ErrorClass, code: &str, message: impl Into<String>) -> Self {
        Self {
            exit: exit_code(class),
            body: ErrorBody::new(code, message),
        }
    }
}

impl From<ToolboxError> for Failure {
    fn from(e: ToolboxError) -> Self {
        Self {
            exit: exit_code(e.class()),
            body: e.to_body(),
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    u8::try_from(class.exit_code()).unwrap_or(1)
}

type Outcome = Result<(Value, u8), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Create(args) => run_request(args, RequestKind::Create),
        Command::Update(args) => run_request(args, RequestKind::Update),
        Command::Classify(args) => classify(args),
        Command::Rules(args) => rules(args),
        Command::Validate(args) => validate(args),
        Command::Serve(args) => serve(args),
    };
    match result {
        Ok((value, code)) => {
            if !value.is_null() {
                let text = serde_json::to_string_pretty(&value).expect("JSON values serialize");
                // A closed pipe on stdout is not worth a panic.
                let _ = writeln!(std::io::stdout(), "{text}");
            }
            ExitCode::from(code)
        }
        Err(failure) => {
            let text = serde_json::to_string_pretty(&failure.body).expect("error bodies serialize");
            let _ = writeln!(std::io::stderr(), "{text}");
            ExitCode::from(failure.exit)
        }
    }
}

fn load_rules(path: Option<&Path>) -> Result<DecisionTable, Failure> {
    match path {
        None => Ok(DecisionTable::builtin().clone()),
        Some(p) => DecisionTable::from_file(p).map_err(|e| {
            Failure::new(
                ErrorClass::Validation,
                "BadRuleTable",
                format!("{}: {e}", p.display()),
            )
        }),
    }
}

fn toolbox(engine: &EngineArgs) -> Result<Toolbox, Failure> {
    let mut handle = match &engine.mock_fixtures {
        Some(dir) => ConverterHandle::mock(dir),
        None => ConverterHandle::external(&engine.converter, engine.converter_args.clone())
            .map_err(|e| Failure::new(ErrorClass::Validation, e.code(), e.to_string()))?,
    };
    if let Some(secs) = engine.converter_timeout {
        let timeout = Duration::try_from_secs_f64(secs).map_err(|_| {
            Failure::new(
                ErrorClass::Validation,
                "BadArgument",
                format!("invalid converter timeout {secs}"),
            )
        })?;
        handle = handle.with_timeout(timeout);
    }
    let mut toolbox = Toolbox::new(handle).with_rules(load_rules(engine.rules.as_deref())?);
    if let Some(n) = engine.parallelism {
        toolbox = toolbox.with_parallelism(n as usize);
    }
    Ok(toolbox)
}

fn run_request(args: RequestArgs, kind: RequestKind) -> Outcome {
    let text = fs::read(&args.request).map_err(|e| {
        Failure::new(
            ErrorClass::Validation,
            "RequestUnreadable",
            format!("reading {}: {e}", args.request.display()),
        )
    })?;
    let req = parse_request(&text, kind).map_err(ToolboxError::from)?;
    let toolbox = toolbox(&args.engine)?;
    let report = match kind {
        RequestKind::Create => toolbox.create(&req)?,
        RequestKind::Update => toolbox.update(&req)?,
    };
    Ok((serde_json::to_value(report).expect("reports serialize"), 0))
}

fn classify(args: ClassifyArgs) -> Outcome {
    let text = fs::read(&args.sidecar).map_err(|e| {
        Failure::new(
            ErrorClass::Validation,
            "SidecarUnreadable",
            format!("reading {}: {e}", args.sidecar.display()),
        )
    })?;
    let params = parse_sidecar(&text)
        .map_err(|e| Failure::new(ErrorClass::Validation, "BadSidecar", e.to_string()))?;
    let table = load_rules(args.rules.as_deref())?;
    let series_name = args.series_name.unwrap_or_else(|| {
        args.sidecar
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let rule_id = table.first_match(&params, args.has_gradients).rule_id.clone();
    match table.classify(&series_name, &params, args.has_gradients, &[]) {
        Ok(cls) => Ok((
            json!({
                "series_name": series_name,
                "modality": cls.modality(),
                "suffix": cls.suffix(),
                "rule_id": cls.rule_id(),
            }),
            0,
        )),
        Err(u) => Ok((
            json!({
                "series_name": u.series_name,
                "unclassifiable": true,
                "reason": u.reason,
                "rule_id": rule_id,
            }),
            exit_code(ErrorClass::Classification),
        )),
    }
}

fn rules(args: RulesArgs) -> Outcome {
    let table = load_rules(args.rules.as_deref())?;
    let value = if args.full {
        serde_json::from_str(&table.to_json()).expect("table JSON is valid")
    } else {
        serde_json::to_value(table.describe()).expect("descriptors serialize")
    };
    Ok((value, 0))
}

fn validate(args: ValidateArgs) -> Outcome {
    let violations = validate_layout(&args.dataset)
        .map_err(|e| Failure::new(ErrorClass::Validation, "NotADirectory", e.to_string()))?;
    let code = if violations.is_empty() {
        0
    } else {
        exit_code(ErrorClass::Validation)
    };
    Ok((json!({ "dataset": args.dataset, "violations": violations }), code))
}

fn serve(args: ServeArgs) -> Outcome {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let request_timeout = Duration::try_from_secs_f64(args.request_timeout).map_err(|_| {
        Failure::new(
            ErrorClass::Validation,
            "BadArgument",
            format!("invalid request timeout {}", args.request_timeout),
        )
    })?;
    let config = ServiceConfig {
        bind: args.bind,
        request_timeout,
        body_limit: args.body_limit,
        allowed_origin: args.allowed_origin,
    };
    let toolbox = toolbox(&args.engine)?;
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| Failure::new(ErrorClass::Internal, "IoError", format!("starting runtime: {e}")))?;
    runtime
        .block_on(bids_toolbox_service::serve(toolbox, config))
        .map_err(|e| Failure::new(ErrorClass::Internal, "IoError", e.to_string()))?;
    Ok((Value::Null, 0))
}
