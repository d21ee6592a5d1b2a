use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of construction, evaluation and certification.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no root b_n for n={index}: existence condition fails ({detail})")]
    NoRoot { index: usize, detail: String },

    #[error("underflow at n={index}: {what} vanished at {bits} bits")]
    Underflow {
        index: usize,
        what: &'static str,
        bits: usize,
    },

    #[error("quadrature needs at least {min} nodes per axis, got {radial}x{angular}")]
    Quadrature {
        min: usize,
        radial: usize,
        angular: usize,
    },

    #[error("finite-difference stencil left the domain of the function at {0}")]
    Stencil(String),

    #[error("sample region is empty after exclusion")]
    EmptyRegion,

    #[error("point is not on the cusp variety (residual {0})")]
    NotOnVariety(f64),

    #[error("point lies outside every tube of half-width d_n (distance {0})")]
    OutsideTube(String),

    #[error("point lies inside the core ball where the projection is undefined")]
    InsideCore,

    #[error("corrector Levi form is not positive on the sampled shell (min {0})")]
    NonPositiveCorrector(String),

    #[error("direction is not a positive multiple of the disc derivative")]
    NotParallel,

    #[error("a passing containment certificate is required")]
    CertRequired,

    #[error("parse error: {0}")]
    Parse(String),
}
