use std::error::Error as StdError;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("{0}")]
    Failed(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
    exit_code: i32,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::MissingFile(_) => 4,
            CliError::Failed(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "invalid_config",
            CliError::MissingFile(_) => "missing_file",
            CliError::Failed(_) => "failed",
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        let body = ErrorBody {
            kind: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        };
        serde_json::json!({ "error": body }).to_string()
    }

    pub fn from_io(e: std::io::Error, path: &Path) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingFile(path.display().to_string())
        } else {
            CliError::Failed(format!("{}: {e}", path.display()))
        }
    }

    /// Any library error; a not-found I/O error anywhere in the chain maps to
    /// the missing-file code.
    pub fn from_error(e: &(dyn StdError + 'static)) -> Self {
        let mut cur: Option<&(dyn StdError + 'static)> = Some(e);
        while let Some(err) = cur {
            if let Some(io) = err.downcast_ref::<std::io::Error>() {
                if io.kind() == std::io::ErrorKind::NotFound {
                    return CliError::MissingFile(e.to_string());
                }
            }
            cur = err.source();
        }
        CliError::Failed(e.to_string())
    }
}

macro_rules! from_lib {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::from_error(&e)
            }
        }
    )*};
}

from_lib!(
    evact::event::EventError,
    evact::repr::ReprError,
    evact::features::FeatureError,
    evact::classifier::ClassifierError,
    evact::bayes::BayesError,
    evact::calibration::CalibrationError,
    evact::blob::BlobError,
    evact::synth::SynthError,
    evact::pipeline::PipelineError,
    std::io::Error,
    serde_json::Error
);

/// Fails with the missing-file code when `path` does not exist.
pub fn need(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingFile(path.display().to_string()))
    }
}

/// Maps a validation failure to the invalid-config code.
pub fn invalid<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}
