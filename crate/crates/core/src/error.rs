use thiserror::Error;

/// Errors raised by the simulation and reconstruction pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not unitary (max deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("population inversion (p1 = {p1}) has no positive temperature")]
    PopulationInversion { p1: f64 },

    #[error("infinite inverse temperature is not supported here")]
    InfiniteBeta,

    #[error("non-uniform sampling grid (relative spacing error {0:.3e})")]
    NonUniformGrid(f64),

    #[error("found {found} local maxima, {requested} requested")]
    TooFewPeaks { found: usize, requested: usize },

    #[error("rank-deficient design matrix: {0}")]
    RankDeficient(String),

    #[error("fit did not converge after {iterations} iterations (best cost {best_cost:.6e}, omegas {best_omegas:?}, gamma {best_gamma:.6e})")]
    NonConvergence {
        iterations: usize,
        best_cost: f64,
        best_omegas: Vec<f64>,
        best_gamma: f64,
    },

    #[error("amplitude sum vanishes; distribution undefined")]
    DegenerateModel,

    #[error("zero marginal population for initial level {level}")]
    ZeroMarginal { level: usize },

    #[error("no backward atom within {tolerance} kHz of W = {work} kHz")]
    Unpairable { work: f64, tolerance: f64 },

    #[error("zero or negative probability in the pair at W = {work} kHz")]
    ZeroProbability { work: f64 },

    #[error("linear fit is degenerate: {0}")]
    DegenerateFit(String),

    #[error("covariance matrix is not positive semi-definite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("channel responses are not consistent with a linear map (residual {0:.3e})")]
    NonLinearChannel(f64),

    #[error("process does not preserve trace (deviation {0:.3e})")]
    TraceViolation(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
