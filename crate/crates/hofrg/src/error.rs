use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("determinant violation: |det - 1| = {defect:e}")]
    Determinant { defect: f64 },
    #[error("argument {x} outside domain [-{r}, {r}]")]
    Domain { x: f64, r: f64 },
    #[error("series mismatch: degree {n1}/{n2}, radius {r1}/{r2}")]
    Mismatch { n1: usize, n2: usize, r1: f64, r2: f64 },
    #[error("no sign change in [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },
    #[error("angle tracking failed at step {step}")]
    Branch { step: usize },
    #[error("energy {e} lies inside band [{lo}, {hi}]")]
    InsideBand { e: f64, lo: f64, hi: f64 },
    #[error("blowup after {step} steps")]
    Blowup { step: usize },
    #[error("not converged: {0}")]
    NotConverged(String),
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("non-finite value encountered")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, Error>;
