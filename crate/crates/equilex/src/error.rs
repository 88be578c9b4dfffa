use thiserror::Error;

/// Crate-wide error type. Construction-level failures carry enough context to
/// be reported without re-deriving state.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite coordinate at position {index}")]
    NonFinite { index: usize },

    #[error("zero vector has no support functional")]
    ZeroVector,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("norm is not uniformly smooth for p = {p}")]
    NotUniformlySmooth { p: f64 },

    #[error("dual norm {dual_norm} of support functional deviates from 1 beyond {tol}")]
    NonSmoothPoint { dual_norm: f64, tol: f64 },

    #[error("tail window [{start}, {end}) did not stabilize: spread {spread:e} > tol {tol:e}")]
    NonStabilizing {
        start: usize,
        end: usize,
        spread: f64,
        tol: f64,
    },

    #[error("tail window [{start}, {end}) exceeds usable index range {max_index}")]
    TailOutOfRange {
        start: usize,
        end: usize,
        max_index: usize,
    },

    #[error("common distance lambda = {lambda} leaves no smoothness margin (needs > {floor})")]
    LambdaTooSmall { lambda: f64, floor: f64 },

    #[error("no sign change on rescale bracket [0, {upper}] at index {index}")]
    RootBracketing { index: usize, upper: f64 },

    #[error("functional-limit ratio at pair index {index} divides by |b| = {denominator:e} < 1e-12")]
    DivisionGuard { index: usize, denominator: f64 },

    #[error("matrix is numerically singular (pivot {pivot:e})")]
    SingularMatrix { pivot: f64 },

    #[error("guard certificate failed at radius {radius:e} after {halvings} halvings (id dev {max_id_deviation:e}, taylor {max_taylor_ratio:e})")]
    GuardFailed {
        radius: f64,
        halvings: u32,
        max_id_deviation: f64,
        max_taylor_ratio: f64,
    },

    #[error("newton iteration did not reach tolerance in {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("newton iterate left the working ball: |x| = {norm:e} > radius {radius:e}")]
    LeftDomain { norm: f64, radius: f64 },

    #[error("candidate pool exhausted at step {step} ({candidates_tried} candidates tried)")]
    ExhaustedPool { step: usize, candidates_tried: usize },

    #[error("invariant violation at step {step}: property ({property}) measured {measured:e} against threshold {threshold:e}")]
    InvariantViolation {
        step: usize,
        property: String,
        measured: f64,
        threshold: f64,
    },

    #[error("final defect {defect:e} exceeds final_tol {tol:e}")]
    FinalDefect { defect: f64, tol: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("report error: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Step attribution for construction failures surfaced in reports.
    pub fn with_step(self, step: usize) -> Error {
        match self {
            Error::InvariantViolation {
                property,
                measured,
                threshold,
                ..
            } => Error::InvariantViolation {
                step,
                property,
                measured,
                threshold,
            },
            other => other,
        }
    }
}
