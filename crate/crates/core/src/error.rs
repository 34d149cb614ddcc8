use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e} exceeds {tolerance:.1e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("unphysical covariance matrix: {0}")]
    Unphysical(String),

    #[error("above parametric threshold: smallest singular value of the mode matrix is {smallest_singular_value:.3e} (condition number {condition:.3e})")]
    AboveThreshold {
        smallest_singular_value: f64,
        condition: f64,
    },

    #[error("above parametric threshold: the Langevin system is unstable (growth rate {growth_rate:.3e} rad/s)")]
    Unstable { growth_rate: f64 },

    #[error("conjugation symmetry violated: imaginary residue {residue:.3e} in quadrature transform")]
    ConjugationSymmetry { residue: f64 },

    #[error("calibration fit failed: {0}")]
    FitFailed(String),

    #[error("projection infeasible at objective bound {bound:.3e}; review the calibration and uncertainty inputs")]
    ProjectionInfeasible { bound: f64 },

    #[error("IQ cross-correlations too large for the bipartition test (relative norm {relative:.3e}); rotate modes first")]
    IqCorrelated { relative: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
