use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Argument outside the domain of a special function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid order or degree combination.
    #[error("order error: {0}")]
    Order(String),

    #[error("invalid layer stack: {0}")]
    InvalidStack(String),

    #[error("invalid atom placement: {0}")]
    InvalidPlacement(String),

    /// Interface matching produced a singular or badly conditioned system.
    #[error("numerical conditioning: {0}")]
    Conditioning(String),

    #[error("spectrum has no interior peak")]
    NoInteriorPeak,

    #[error("half maximum not bracketed on the {0} side of the peak")]
    HalfMaxNotBracketed(&'static str),

    /// Passivity forbids a negative local density of states; seeing one
    /// means a computation bug upstream.
    #[error("negative diagonal coupling {value:e} for atom {atom}")]
    NegativeDiagonal { atom: usize, value: f64 },

    #[error("coupling matrix is not symmetric: relative difference {0:e}")]
    AsymmetricCoupling(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ill-conditioned mode amplitude system (condition number {0:e})")]
    IllConditioned(f64),

    #[error("photon cutoff must be at least 1, got {0}")]
    Cutoff(usize),

    #[error("density matrix lost positivity: minimum eigenvalue {min_eigenvalue:e} at tau = {tau}")]
    PositivityViolation { tau: f64, min_eigenvalue: f64 },

    #[error("matrix is not positive semidefinite: minimum eigenvalue {0:e}")]
    NotPositive(f64),
}
