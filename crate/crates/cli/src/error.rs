use serde::Serialize;

/// Process exit codes.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ACCURACY: i32 = 3;
pub const EXIT_PRECONDITION: i32 = 4;
pub const EXIT_INTERNAL: i32 = 5;

/// Machine-readable failure record, printed as one JSON line on stderr.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: "config",
            exit_code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn missing_seed() -> Self {
        Self {
            kind: "missing_seed",
            exit_code: EXIT_CONFIG,
            message: "no master seed: set `seed` in the config or pass --seed".into(),
        }
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Self {
            kind: "schema",
            exit_code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            kind: "io",
            exit_code: EXIT_INTERNAL,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            kind: "internal",
            exit_code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

impl From<shf_core::Error> for CliError {
    fn from(e: shf_core::Error) -> Self {
        use shf_core::Error::*;
        let (kind, exit_code) = match &e {
            Domain(_) => ("domain", EXIT_CONFIG),
            OutOfRange(_) => ("out_of_range", EXIT_CONFIG),
            Config(_) => ("config", EXIT_CONFIG),
            Accuracy { .. } => ("accuracy", EXIT_ACCURACY),
            Precondition(_) => ("precondition", EXIT_PRECONDITION),
            Infeasible(_) => ("infeasible", EXIT_PRECONDITION),
        };
        Self {
            kind,
            exit_code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::internal(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::internal(format!("json: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
