use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0} emitters requested but at most {max} are supported", max = crate::dynamics::MAX_EMITTERS)]
    TooManyEmitters(usize),

    #[error("zero collected intensity at {0}")]
    ZeroIntensity(String),

    #[error("integrator failed at t = {t} ns after {steps} steps (last step {step:e} ns): {reason}")]
    Integrator {
        t: f64,
        steps: usize,
        step: f64,
        reason: String,
    },

    #[error("grid spacing {spacing} ns is coarser than fwhm/10 = {limit} ns")]
    GridTooCoarse { spacing: f64, limit: f64 },

    #[error("grid is not uniform: {0}")]
    NonUniformGrid(String),

    #[error("baseline window contains {found} bins, need at least {needed}")]
    EmptyWindow { found: usize, needed: usize },

    #[error("baseline counts average to zero")]
    ZeroBaseline,

    #[error("fit did not converge: {0}")]
    NoConvergence(String),

    #[error("singular curvature matrix")]
    SingularCurvature,

    #[error("spatial frequency exceeds the Nyquist limit: {0}")]
    Aliasing(String),

    #[error("waist {waist} um is under-resolved (pixel pitch {pitch} um)")]
    UnderResolved { waist: f64, pitch: f64 },

    #[error("field and mask grids do not match")]
    GridMismatch,

    #[error("all spot weights are zero")]
    AllZeroWeights,

    #[error("wavefront matching stalled at iteration {iteration}; coupling history {history:?}")]
    Stall { iteration: usize, history: Vec<f64> },

    #[error("model assumption violated: {0}")]
    ModelAssumption(String),

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes and error records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Config(_) => ErrorClass::Usage,
            Integrator { .. } | NoConvergence(_) | SingularCurvature | Stall { .. } => {
                ErrorClass::Numerical
            }
            _ => ErrorClass::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            InvalidParameter(_) => "invalid-parameter",
            TooManyEmitters(_) => "too-many-emitters",
            ZeroIntensity(_) => "zero-intensity",
            Integrator { .. } => "integrator",
            GridTooCoarse { .. } => "grid-too-coarse",
            NonUniformGrid(_) => "non-uniform-grid",
            EmptyWindow { .. } => "empty-window",
            ZeroBaseline => "zero-baseline",
            NoConvergence(_) => "no-convergence",
            SingularCurvature => "singular-curvature",
            Aliasing(_) => "aliasing",
            UnderResolved { .. } => "under-resolved",
            GridMismatch => "grid-mismatch",
            AllZeroWeights => "all-zero-weights",
            Stall { .. } => "stall",
            ModelAssumption(_) => "model-assumption",
            DivisionByZero(_) => "division-by-zero",
            Parse { .. } => "parse",
            Config(_) => "config",
            Io(_) => "io",
            Json(_) => "json",
        }
    }
}
