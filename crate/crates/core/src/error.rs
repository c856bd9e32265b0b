use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss or gradient")]
    TrainingDiverged { epoch: usize, step: usize },

    #[error("compute budget exceeded: {candidates} candidates x {dim} dims > {budget}")]
    BudgetExceeded {
        candidates: u64,
        dim: usize,
        budget: u64,
    },

    #[error("malformed message at byte {offset}: {reason}")]
    MalformedMessage { offset: usize, reason: String },

    #[error("invalid Renyi order {0}")]
    InvalidOrder(f64),

    #[error(
        "importance-sampling overhead {overhead:e} is not below delta {delta:e}; \
         raise the number of communicated bits or reduce the number of rounds"
    )]
    OverheadExceedsDelta { delta: f64, overhead: f64 },

    #[error("vacuous bitrate bound: target bias {xi} exceeds test-function bound {g}")]
    VacuousBound { xi: f64, g: f64 },

    #[error("privacy target infeasible: {0}")]
    Infeasible(String),

    #[error("history desynchronised: {0}")]
    Desync(String),

    #[error("unknown mechanism `{0}`")]
    UnknownMechanism(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
