//! Error type shared by all solver stages.

use thiserror::Error;

/// Everything that can go wrong in a solve or a simulation run.
#[derive(Debug, Error)]
pub enum Error {
    /// Krylov iteration did not reach the requested residual.
    #[error("iterative solver stalled after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// A field that must be strictly positive touched zero; usually
    /// a sign of an under-resolved grid.
    #[error("field is not strictly positive (min value {min_value:.3e})")]
    NotPositive { min_value: f64 },

    /// The right-hand side of a cell problem violates the solvability
    /// (zero-mean) condition by more than discretization noise.
    #[error("cell problem right-hand side violates compatibility (mean {mean:.3e})")]
    CompatibilityViolated { mean: f64 },

    #[error("operation not supported in dimension {dims}")]
    DimensionUnsupported { dims: usize },

    /// The symmetrized diffusion matrix has a non-positive eigenvalue.
    #[error("diffusion matrix is not coercive (min eigenvalue {min_eigenvalue:.3e})")]
    NotCoercive { min_eigenvalue: f64 },

    /// Bisection on the profile amplitude could not bracket the target mass.
    #[error("profile shooting failed: {message}")]
    ShootingFailed { message: String },

    #[error("solution magnitude exceeded {limit:.3e} (sup {sup:.3e}); reduce the time step")]
    BlowUp { sup: f64, limit: f64 },

    #[error("time step {dt:.3e} exceeds the advective stability bound {dt_max:.3e}")]
    CflViolation { dt: f64, dt_max: f64 },

    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:.3e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    /// Perturbation mass reached the edge of the periodic box.
    #[error("perturbation mass {band_mass:.3e} in the outer band exceeds {threshold:.3e}")]
    WrapContamination { band_mass: f64, threshold: f64 },

    /// The rescaled support no longer fits on the self-similar grid.
    #[error("rescaled field leaves the target grid (outer-band fraction {fraction:.3e})")]
    OutOfDomain { fraction: f64 },

    #[error("weight exponent m = {m} must exceed {min} in dimension {dims}")]
    WeightTooSmall { m: f64, min: f64, dims: usize },

    #[error("flux hypothesis violated: {message}")]
    HypothesisViolated { message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
