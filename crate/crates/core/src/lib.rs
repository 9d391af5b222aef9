//! Symmetric tensor fields on Riemannian charts.

pub mod boundary_coeffs;
pub mod ckt;
pub mod error;
pub mod decomp;
pub mod geom;
pub mod grid;
pub mod jet;
pub mod kinetic;
pub mod linalg;
pub mod metric_ops;
pub mod scalar;
pub mod sphere;
pub mod symcore;
pub mod verify;

pub use error::{Result, SymError};
pub use jet::Jet;
pub use metric_ops::{Metric, MetricPoint};
pub use scalar::{Rational, Scalar};
pub use symcore::{RawTensor, SymTensor};
