use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs that do not fit together (grid mismatch, wrong lengths, ...).
    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular tridiagonal system: zero pivot at row {row}")]
    SingularSystem { row: usize },

    #[error("time step {dt:e} violates the CFL condition; need dt <= {required:e}")]
    Cfl { dt: f64, required: f64 },

    #[error("non-finite value in the wave state at step {step}")]
    NonFinite { step: usize },

    #[error("mode k={k} too small: kappa_m = {kappa_m:e} <= 0")]
    KTooSmall { k: i64, kappa_m: f64 },

    #[error("inconsistent internal data: nonpositive value at node {index}")]
    DataInconsistency { index: usize },

    #[error("singular integrand: h' = {value:e} below guard at node {index}")]
    SingularIntegrand { index: usize, value: f64 },

    #[error("observability time not reached: T = {t} <= 2 theta H = {t_min}")]
    ObservabilityTime { t: f64, t_min: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularSystem { .. }
            | Error::Cfl { .. }
            | Error::NonFinite { .. }
            | Error::KTooSmall { .. }
            | Error::DataInconsistency { .. }
            | Error::SingularIntegrand { .. } => true,
            Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
