use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymError {
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("metric is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("input lacks the required symmetry (relative defect {0:e})")]
    Symmetry(f64),
    #[error("point {0:?} lies outside the chart domain")]
    OutsideDomain(Vec<f64>),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("jet order exhausted: need {need}, have {have}")]
    JetOrder { need: usize, have: usize },
    #[error("quadrature order {got} is insufficient, need at least {need}")]
    Quadrature { got: usize, need: usize },
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("not trace-free (|ju| = {0:e})")]
    NotTraceFree(f64),
}

pub type Result<T> = std::result::Result<T, SymError>;
