use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(
        "Jacobi SVD did not converge after {sweeps} sweeps \
         (best estimate sigma_min={sigma_min}, sigma_max={sigma_max})"
    )]
    NonConvergence {
        sweeps: usize,
        sigma_min: f64,
        sigma_max: f64,
    },

    #[error("singular saturation matrix: d_f[{index}] = 0")]
    SingularSaturation { index: usize },

    #[error("non-finite value at timestep {step}")]
    NumericFault { step: usize },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error ({location}): {message}")]
    Config { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
