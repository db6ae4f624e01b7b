use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("input trajectory lasts {available} but a horizon of {requested} was requested")]
    Coverage { requested: f64, available: f64 },

    #[error("horizon {tau} is not an integer multiple of segment length {h}")]
    Alignment { tau: f64, h: f64 },

    #[error(
        "no time quantization tau <= {tau_max} satisfies eps*||exp((A+BC)tau)|| < eta/2 \
         (best: {best_value} at tau = {best_tau}, target {target})"
    )]
    Synthesis {
        tau_max: f64,
        best_tau: f64,
        best_value: f64,
        target: f64,
    },

    #[error("construction error: {0}")]
    Construction(String),
}

pub type Result<T> = std::result::Result<T, Error>;
