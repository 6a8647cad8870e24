use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
///
/// Verdict-style failures (an assumption that does not hold on a sample, a
/// region that is not g-convex) are reported as data in the various report
/// types; only conditions that prevent a computation from finishing are
/// errors.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("unknown generating-function family `{0}`")]
    UnknownFamily(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("derivative order {0} exceeds the supported maximum of 4")]
    OrderTooHigh(usize),

    #[error("finite-difference stencil leaves the domain at {0}")]
    StencilExitsDomain(String),

    #[error("point outside the domain: {0}")]
    OutsideDomain(String),

    #[error("matrix E is singular: |det E| = {det:e} below floor {floor:e}")]
    SingularE { det: f64, floor: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("Newton iterate left the domain at iteration {iteration}")]
    LeftDomain { iteration: usize },

    #[error("value {u} is outside the achievable range [{lo}, {hi}]")]
    OutOfRange { u: f64, lo: f64, hi: f64 },

    #[error("no admissible grid point for dual point {0:?}")]
    EmptyAdmissibleSet(Vec<f64>),

    #[error("g-segment leaves the domain at parameter {theta}")]
    SegmentExitsDomain { theta: f64, x: Vec<f64> },

    #[error("offset g-segment leaves the potential's grid at eps = {eps}, theta = {theta}")]
    SegmentExitsGrid { eps: f64, theta: f64 },

    #[error("differential-inequality hypothesis fails at t = {t}: h'' + K|h'| = {violation:e}")]
    HypothesisFails { t: f64, violation: f64 },

    #[error("inadmissible fraction {fraction} exceeds the limit {limit}")]
    InadmissibleFraction { fraction: f64, limit: f64 },

    #[error("probe precondition failed: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
