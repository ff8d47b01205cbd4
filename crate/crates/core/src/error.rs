use thiserror::Error;

/// Errors raised by the solver library and the experiment harness.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("coefficient table does not match solver configuration: {0}")]
    Configuration(String),

    #[error("solution diverged at step {step} (t = {t}): {reason}; recent sup-norms {history:?}")]
    Divergence {
        step: usize,
        t: f64,
        reason: String,
        history: Vec<f64>,
    },

    #[error("query time {t} outside [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SolverError>;

impl SolverError {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            SolverError::Parameter(_) => "parameter",
            SolverError::Shape { .. } => "shape",
            SolverError::GridMismatch(_) => "grid_mismatch",
            SolverError::Configuration(_) => "configuration",
            SolverError::Divergence { .. } => "divergence",
            SolverError::OutOfRange { .. } => "out_of_range",
            SolverError::Empty(_) => "empty",
            SolverError::Config(_) => "config",
            SolverError::Io(_) => "io",
            SolverError::Json(_) => "json",
        }
    }

    /// JSON failure report for front ends.
    pub fn report(&self) -> serde_json::Value {
        let mut v = serde_json::json!({ "status": "failed", "kind": self.kind(), "message": self.to_string() });
        match self {
            SolverError::Divergence {
                step, t, history, ..
            } => {
                v["step"] = serde_json::json!(step);
                v["t"] = serde_json::json!(t);
                v["history"] = serde_json::json!(history);
            }
            SolverError::Config(problems) => v["problems"] = serde_json::json!(problems),
            _ => {}
        }
        v
    }
}
