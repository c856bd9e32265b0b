use thiserror::Error;

use dprec_core::Error as CoreError;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    PrivacyInfeasible(String),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::PrivacyInfeasible(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Runtime(_) => "runtime",
            CliError::PrivacyInfeasible(_) => "privacy-infeasible",
        }
    }

    /// Single line `error kind=<kind> reason=<message>` for scripts.
    pub fn report_line(&self) -> String {
        format!(
            "error kind={} reason={}",
            self.kind(),
            self.to_string().replace('\n', " ")
        )
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidConfig(_)
            | CoreError::UnknownMechanism(_)
            | CoreError::InvalidOrder(_) => CliError::Usage(msg),
            CoreError::OverheadExceedsDelta { .. } | CoreError::Infeasible(_) => {
                CliError::PrivacyInfeasible(msg)
            }
            _ => CliError::Runtime(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o error: {e}"))
    }
}
