use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector has a zero entry at index {index}")]
    ZeroEntry { index: usize },

    #[error("cone rank k = {k} outside 1..={n}")]
    RankOutOfRange { k: usize, n: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sign pattern needs n >= 3, got {0}")]
    PatternTooSmall(usize),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("spectral classification failed: {0}")]
    Lemma1Violation(String),

    #[error("transformation matrix is ill-conditioned (cond ~ {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("equilibrium {0:?} is not in the interior of the box")]
    EquilibriumNotInterior([f64; 3]),

    #[error("angle margin not established at this resolution (xi = {xi:.3e})")]
    AngleMargin { xi: f64 },

    #[error("invariant-set construction requires a certified model")]
    NotCertified,

    #[error("step size underflow at t = {t:.6e} (h = {h:.3e}); the system may be too stiff for the explicit integrator, try a shorter t_end or rescaling the box")]
    StepUnderflow { t: f64, h: f64, state: [f64; 3] },

    #[error("non-finite state at t = {t:.6e}")]
    NonFinite { t: f64 },

    #[error("expression error: {0}")]
    Expr(String),

    #[error("model spec error: {0}")]
    ModelSpec(String),

    #[error("empty sweep: {0}")]
    EmptySweep(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
