use thiserror::Error;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] combent::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// 2 config, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        use combent::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::Io(_) => 4,
                E::InvalidArgument(_)
                | E::DimensionMismatch(_)
                | E::NotSymmetric { .. }
                | E::Format(_)
                | E::Json(_)
                | E::InsufficientData(_) => 2,
                E::Unphysical(_)
                | E::AboveThreshold { .. }
                | E::Unstable { .. }
                | E::ConjugationSymmetry { .. }
                | E::FitFailed(_)
                | E::ProjectionInfeasible { .. }
                | E::IqCorrelated { .. } => 3,
            },
        }
    }
}

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}
