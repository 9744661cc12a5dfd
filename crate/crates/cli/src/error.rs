use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] mkvcyl_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Machine-readable error, written to the manifest and stderr.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub status: &'static str,
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        use mkvcyl_core::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Csv(_) => "io",
            CliError::Core(e) => match e {
                E::Domain(_) => "domain",
                E::Numerical(_) => "numerical",
                E::Capacity { .. } => "capacity",
                E::Solver(_) => "solver",
                E::Certificate { .. } => "certificate",
                E::NonConvergence { .. } => "non_convergence",
                E::LatticeMismatch(_) => "lattice_mismatch",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn record(&self) -> ErrorRecord {
        let details = match self {
            CliError::Core(mkvcyl_core::Error::Certificate { certificate, .. }) => serde_json::to_value(certificate).ok(),
            CliError::Core(mkvcyl_core::Error::Capacity { size, cap }) => {
                Some(serde_json::json!({ "size": size, "cap": cap }))
            }
            CliError::Core(mkvcyl_core::Error::NonConvergence { iterations }) => {
                Some(serde_json::json!({ "iterations": iterations }))
            }
            _ => None,
        };
        ErrorRecord {
            status: "error",
            kind: self.kind(),
            message: self.to_string(),
            details,
        }
    }
}
