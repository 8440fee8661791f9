use std::fmt;

use serde_json::json;
use shiprec::Error;

/// A command failure with its process exit code.
#[derive(Clone, Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: "config", code: 2, message: message.into() }
    }

    pub fn dataset(message: impl Into<String>) -> Self {
        Self { kind: "dataset", code: 3, message: message.into() }
    }

    pub fn other(message: impl Into<String>) -> Self {
        Self { kind: "other", code: 1, message: message.into() }
    }

    /// Single-line JSON for stderr.
    pub fn to_json_line(&self) -> String {
        json!({ "error": self.kind, "exit_code": self.code, "message": self.message }).to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (kind, code) = match e {
            Error::InvalidConfig(_) | Error::InfeasibleCenters { .. } | Error::Json(_) => ("config", 2),
            Error::MissingDataset { .. }
            | Error::EmptyClass { .. }
            | Error::EmptyDataset
            | Error::UnreadableFile { .. }
            | Error::NonGrayscale { .. }
            | Error::ClassTooSmall { .. }
            | Error::SizeMismatch { .. } => ("dataset", 3),
            Error::NonFiniteLoss { .. } => ("non_finite_loss", 4),
            Error::VersionMismatch { .. } => ("checkpoint_version", 5),
            _ => ("other", 1),
        };
        Self { kind, code, message }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::other(e.to_string())
    }
}
