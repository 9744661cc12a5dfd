use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A factorization or guard failed at working precision.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("combined support of {size} atoms exceeds the metric cap of {cap}; subsample first")]
    Capacity { size: usize, cap: usize },

    #[error("LP solver failed: {0}")]
    Solver(String),

    #[error("Girsanov certificate violated for modes {modes:?}")]
    Certificate {
        modes: Vec<usize>,
        certificate: Box<crate::girsanov::GirsanovCertificate>,
    },

    #[error("fixed-point iteration did not converge in {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
