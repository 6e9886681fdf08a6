use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] helipatch_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Serialize)]
struct Record<'a> {
    error: &'a str,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::Core(e) => e.kind(),
            CliError::Io(_) => "Io",
            CliError::Csv(_) => "Csv",
            CliError::Json(_) => "Json",
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        serde_json::to_string(&Record { error: self.kind(), message: self.to_string() })
            .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind()))
    }
}
