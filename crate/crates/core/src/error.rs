use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate parameters: {0}")]
    DegenerateParameters(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("model evaluation failed at {point:?}: {reason}")]
    ModelEvaluation { point: Vec<f64>, reason: String },

    #[error("gradient evaluation failed at stencil point {point:?}: {reason}")]
    GradientEvaluation { point: Vec<f64>, reason: String },

    #[error("gradient evaluation failed at {} point(s), first at index {}", .0.len(), .0[0].0)]
    GradientBatch(Vec<(usize, Error)>),

    #[error("symmetric eigensolver did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("degenerate spectrum: all eigenvalues are zero")]
    DegenerateSpectrum,

    #[error("basis columns are not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),

    #[error("region index {index} out of range for a grid of {total} regions")]
    RegionOutOfRange { index: u64, total: u64 },

    #[error("output variance is zero; Sobol' indices are undefined")]
    ZeroVariance,

    #[error("under-determined fit: {points} points for {coefficients} coefficients")]
    UnderDetermined { points: usize, coefficients: usize },

    #[error("invalid AIC inputs: {points} points for {params} parameters")]
    InvalidAic { points: usize, params: usize },

    #[error("no admissible surrogate candidate")]
    NoCandidate,

    #[error("region {index}: {source}")]
    Region { index: u64, source: Box<Error> },
}

impl Error {
    pub(crate) fn in_region(self, index: u64) -> Error {
        match self {
            e @ Error::Region { .. } => e,
            e => Error::Region { index, source: Box::new(e) },
        }
    }
}
