//! Configuration, execution and serialization behind the `coalition` binary.

pub mod config;
pub mod report;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use coalition_core::engine::{decompose, DecomposeError, DecompositionReport};
use serde_json::json;
use thiserror::Error;

pub use config::Experiment;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{message}")]
    Config { kind: &'static str, message: String },
    #[error("{message}")]
    Estimation { subset: Option<String>, message: String },
    #[error("{path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn config(kind: &'static str, message: impl Into<String>) -> Self {
        CliError::Config {
            kind,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Estimation { .. } | CliError::Output { .. } => 3,
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let body = match self {
            CliError::Config { kind, message } => json!({"category": "config", "kind": kind, "message": message}),
            CliError::Estimation { subset, message } => {
                json!({"category": "estimation", "subset": subset, "message": message})
            }
            CliError::Output { .. } => json!({"category": "output", "message": self.to_string()}),
        };
        json!({ "error": body }).to_string()
    }
}

impl From<DecomposeError> for CliError {
    fn from(e: DecomposeError) -> Self {
        match e {
            DecomposeError::Config(inner) => CliError::config("incompatible_qoi", inner.to_string()),
            DecomposeError::DimensionCap(_) => CliError::config("dimension_cap", e.to_string()),
            DecomposeError::Subset { ref subset, .. } => CliError::Estimation {
                subset: Some(subset.clone()),
                message: e.to_string(),
            },
            other => CliError::Estimation {
                subset: None,
                message: other.to_string(),
            },
        }
    }
}

/// Reads and cross-checks a configuration file without sampling.
pub fn validate(config_path: &Path) -> Result<Experiment, CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::config("unreadable", format!("{}: {e}", config_path.display())))?;
    Experiment::from_json(&text)
}

#[derive(Debug, Default, Clone)]
pub struct RunOptions {
    /// Overrides the configured output directory.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: DecompositionReport,
    pub report_path: PathBuf,
    pub csv_path: Option<PathBuf>,
    pub shapley_path: Option<PathBuf>,
}

/// Serialized report JSON, newline-terminated.
pub fn report_string(report: &DecompositionReport, experiment: &Experiment) -> String {
    let mut text =
        serde_json::to_string_pretty(&report::report_json(report, &experiment.echo)).expect("report values serialize");
    text.push('\n');
    text
}

fn output_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Output {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

/// Runs the decomposition described by `config_path` and writes its artifacts.
///
/// Artifacts are named after the config file stem: `<stem>.report.json`,
/// `<stem>.csv` and `<stem>.shapley.csv`. A relative `output_dir` in the config
/// is resolved against the config file's directory.
pub fn run(config_path: &Path, options: &RunOptions) -> Result<RunOutcome, CliError> {
    let experiment = validate(config_path)?;
    let report = decompose(
        &experiment.model,
        &experiment.inputs,
        &experiment.qoi,
        &experiment.budget,
    )?;

    let config_dir = config_path.parent().unwrap_or(Path::new("."));
    let dir = match (&options.output_dir, &experiment.output_dir) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => config_dir.join(dir),
        (None, None) => config_dir.to_path_buf(),
    };
    fs::create_dir_all(&dir).map_err(output_error(&dir))?;
    let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");

    let report_path = dir.join(format!("{stem}.report.json"));
    fs::write(&report_path, report_string(&report, &experiment)).map_err(output_error(&report_path))?;

    let csv_path = if experiment.emit_csv {
        let path = dir.join(format!("{stem}.csv"));
        let file = File::create(&path).map_err(output_error(&path))?;
        report::write_csv(&report, BufWriter::new(file)).map_err(|e| csv_error(&path, e))?;
        Some(path)
    } else {
        None
    };

    let shapley_path = match (experiment.emit_shapley, report.attribution()) {
        (true, Some(attribution)) => {
            let path = dir.join(format!("{stem}.shapley.csv"));
            let file = File::create(&path).map_err(output_error(&path))?;
            report::write_shapley_csv(&attribution, BufWriter::new(file)).map_err(|e| csv_error(&path, e))?;
            Some(path)
        }
        _ => None,
    };

    Ok(RunOutcome {
        report,
        report_path,
        csv_path,
        shapley_path,
    })
}
