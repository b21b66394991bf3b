use std::path::PathBuf;

/// Errors shared across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("mesh resolution {0} invalid: n_per_side must be a positive multiple of 4 so the block boundaries 0.25 and 0.75 fall on mesh lines")]
    MeshResolution(usize),

    #[error("invalid cell parameter: {0}")]
    InvalidParam(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("right-hand side incompatible with the quotient space (constant component, mean {mean:.3e})")]
    IncompatibleRhs { mean: f64 },

    #[error("solver did not converge within {iterations} iterations (relative residual {residual:.3e}, target {target:.3e})")]
    NoConvergence { iterations: usize, residual: f64, target: f64 },

    #[error("conjugate gradients broke down: non-positive curvature {curvature:.3e}")]
    SolverBreakdown { curvature: f64 },

    #[error("reduced system not positive definite ({context})")]
    NotPositiveDefinite { context: String },

    #[error("empty training sample")]
    EmptySample,

    #[error("basis size bound violated: N_max = {n_max} exceeds 2 x sample size = {limit}")]
    BasisSizeBound { n_max: usize, limit: usize },

    #[error("certified bound violated at parameter {param_id} direction {direction}: effectivity {effectivity:.6} outside [1, {allowed:.3}]")]
    BoundViolation { param_id: usize, direction: usize, effectivity: f64, allowed: f64 },

    #[error("basis file {path:?}: {reason}")]
    BasisFile { path: PathBuf, reason: String },

    #[error("basis fingerprint mismatch: basis was built for n_per_side = {basis}, system has n_per_side = {system}")]
    FingerprintMismatch { basis: usize, system: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("parameter field leaves the admissible box at x = ({x1}, {x2}): {reason}")]
    FieldOutOfBox { x1: f64, x2: f64, reason: String },

    #[error("macro stage {stage} failed: {source}")]
    MacroStage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numerical, 4 bound violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::MeshResolution(_)
            | Error::InvalidParam(_)
            | Error::FieldOutOfBox { .. }
            | Error::EmptySample
            | Error::BasisSizeBound { .. } => 2,
            Error::BoundViolation { .. } => 4,
            Error::MacroStage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
