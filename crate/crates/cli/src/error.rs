use std::path::PathBuf;
use std::process::ExitCode;

use serde_json::{json, Value};
use thiserror::Error;

use deepquali_core::canonical;
use deepquali_core::config::ConfigError;
use deepquali_core::engine::{AssessError, BackendError};
use deepquali_core::harness::HarnessError;
use deepquali_core::quality_model::ModelError;
use deepquali_core::story::StoryError;
use deepquali_service::ServiceError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Story(#[from] StoryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Assess(#[from] AssessError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Several independent failures, each listed in the details.
    #[error("{message}")]
    Listing {
        code: &'static str,
        message: String,
        errors: Vec<Value>,
        summary: Value,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Harness(e) => e.code(),
            CliError::Story(StoryError::Format { .. }) => "format",
            CliError::Story(_) | CliError::Model(_) => "validation",
            CliError::Backend(_) => "backend",
            CliError::Assess(AssessError::Input(_)) => "validation",
            CliError::Assess(_) => "assessment",
            CliError::Service(e) => e.code(),
            CliError::Io { .. } => "io",
            CliError::Listing { code, .. } => code,
        }
    }

    fn details(&self) -> Value {
        match self {
            CliError::Harness(HarnessError::Coverage(missing)) => json!({ "missing": missing }),
            CliError::Harness(HarnessError::ExpertCount { company, found }) => {
                json!({ "company_id": company, "experts": found })
            }
            CliError::Story(StoryError::MissingFields(fields)) => json!({ "fields": fields }),
            CliError::Config(ConfigError::Format {
                path, line, column, ..
            }) => json!({ "path": path, "line": line, "column": column }),
            CliError::Listing {
                errors, summary, ..
            } => json!({ "errors": errors, "summary": summary }),
            _ => Value::Null,
        }
    }

    /// Usage errors exit with 2, everything else with 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// Writes one JSON object to stderr and returns the exit code.
    pub fn report(&self) -> ExitCode {
        let body = json!({
            "code": self.code(),
            "message": self.to_string(),
            "details": self.details(),
        });
        eprintln!("{}", canonical::canonicalize(&body));
        ExitCode::from(self.exit_code())
    }
}
