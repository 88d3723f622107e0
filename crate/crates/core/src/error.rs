use thiserror::Error;

/// Errors raised by the library.
///
/// Solver infeasibility is *not* an error: it is reported through
/// [`SolveResult::feasible`](crate::ocp::SolveResult::feasible). Errors are
/// reserved for malformed arguments, model evaluation failures and limits that
/// make a requested solve impossible.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    Argument { name: &'static str, reason: String },

    #[error("model evaluation produced a non-finite state from x = {state:?}, u = {input:?}")]
    ModelEvaluation { state: Vec<f64>, input: Vec<f64> },

    #[error("cruise input undefined: {0}")]
    CruiseUndefined(String),

    #[error("blocked sequence built for k = {built_for} used at k = {used_at}")]
    Consistency { built_for: usize, used_at: usize },

    #[error(
        "{candidates} candidate sequences exceed the enumeration cap of {cap}; \
         use the continuous backend or a larger block length"
    )]
    CandidateCap { candidates: u128, cap: u64 },

    #[error("every candidate violates the hard state constraints at k = {k}")]
    HardInfeasible { k: usize },

    #[error("{0}")]
    Unsupported(String),

    #[error("{path}: {reason}")]
    Io { path: String, reason: String },

    /// Every validation problem found in a scenario file, each prefixed with
    /// its field name.
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Scenario(Vec<String>),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_error(path: &std::path::Path, e: impl std::fmt::Display) -> Error {
    Error::Io { path: path.display().to_string(), reason: e.to_string() }
}

pub(crate) fn arg_error(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Argument { name, reason: reason.into() }
}
