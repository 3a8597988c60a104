use thiserror::Error;

/// Errors raised by the numerical modules.
///
/// Numeric payloads are reported as `f64` regardless of the scalar type in use.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("grid size {0} must be a power of two and at least 8")]
    GridSize(usize),
    #[error("empty domain: x_min = {x_min} is not below x_max = {x_max}")]
    Domain { x_min: f64, x_max: f64 },
    #[error("operands live on different grids")]
    GridMismatch,
    #[error("expected {expected} samples, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("multiplier is not finite at xi = {xi}")]
    MultiplierOverflow { xi: f64 },
    #[error("weight `{weight}` overflows at {at} (non-membership of the weighted space)")]
    WeightOverflow { weight: &'static str, at: f64 },
    #[error("spectrum not resolved: tail magnitude {tail:e} relative to the peak")]
    Unresolved { tail: f64 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("shifted packet carries relative mass {relative:e} at the domain boundary")]
    BoundaryMass { relative: f64 },
    #[error("degenerate decay fit: only {usable} usable tail samples")]
    DegenerateFit { usable: usize },
    #[error("{steps} time steps violate the stability bound of {required}")]
    StepBound { steps: usize, required: usize },
    #[error("derivative order {order} exceeds the supported cap {cap}")]
    DerivativeCap { order: usize, cap: usize },
    #[error("dense quantization of n = {n} points exceeds the limit {limit}")]
    DenseLimit { n: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
