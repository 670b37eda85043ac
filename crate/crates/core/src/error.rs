use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("corrupt field: {0}")]
    CorruptField(String),
    #[error("cube extends outside domain: center {center:?}, side {side}")]
    CubeOutsideDomain { center: Vec<f64>, side: f64 },
    #[error("epsilon out of range: {0}")]
    EpsilonOutOfRange(f64),
    #[error("shift outside Q_eps(0): {0:?}")]
    ShiftOutOfRange(Vec<f64>),
    #[error("non-integral cube {index}: flux {flux}")]
    NonIntegralCube { index: usize, flux: f64 },
    #[error("face too coarse: {0}")]
    FaceTooCoarse(String),
    #[error("incompatible Neumann data: boundary integral {0}")]
    IncompatibleData(f64),
    #[error("extension not p-integrable: p = {p} >= {limit}")]
    NotIntegrable { p: f64, limit: f64 },
    #[error("evaluation at singularity")]
    Singularity,
    #[error("unbalanced charges: total degree {0} and no boundary point")]
    Unbalanced(i64),
    #[error("projection failed: L^p distance {distance} exceeds tolerance {tol}")]
    ProjectionFailed { distance: f64, tol: f64 },
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
