use std::fmt;

use pcinf_core::Error;
use serde::Serialize;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_COMPUTATION: i32 = 3;

/// A fatal error reported as one JSON object on stderr.
#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub stage: String,
    pub code: String,
    pub message: String,
    #[serde(skip)]
    pub exit: i32,
}

impl Failure {
    pub fn config(stage: &str, message: impl Into<String>) -> Self {
        Self {
            stage: stage.to_string(),
            code: "config".into(),
            message: message.into(),
            exit: EXIT_INPUT,
        }
    }

    pub fn io(stage: &str, what: impl fmt::Display, err: std::io::Error) -> Self {
        Self {
            stage: stage.to_string(),
            code: "io".into(),
            message: format!("{what}: {err}"),
            exit: EXIT_INPUT,
        }
    }

    pub fn core(stage: &str, err: Error) -> Self {
        let exit = match err {
            Error::Parse { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::InsufficientDates(_)
            | Error::NoLiquidStocks
            | Error::MissingIndex(_)
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::InsufficientSample(_)
            | Error::MissingSector(_) => EXIT_INPUT,
            _ => EXIT_COMPUTATION,
        };
        Self {
            stage: stage.to_string(),
            code: err.code().to_string(),
            message: err.to_string(),
            exit,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.stage, self.code, self.message)
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;

/// Attaches a stage name to core results.
pub trait StageExt<T> {
    fn stage(self, stage: &str) -> Outcome<T>;
}

impl<T> StageExt<T> for pcinf_core::Result<T> {
    fn stage(self, stage: &str) -> Outcome<T> {
        self.map_err(|e| Failure::core(stage, e))
    }
}
