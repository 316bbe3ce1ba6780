//! Numerical toolkit for Bourgain-Morrey spaces with matrix weights.

pub mod compactness;
pub mod dyadic;
pub mod error;
pub mod field;
pub mod linalg;
pub mod operators;
pub mod policy;
pub mod quadrature;
pub mod reducing;
pub mod spaces;
pub mod weights;

pub use error::{BmError, Result};
