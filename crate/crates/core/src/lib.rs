pub mod error;
pub mod exec;
pub mod harness;
pub mod matcore;
pub mod sensing;
pub mod solvers;
pub mod tangent;
pub mod theory;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use matcore::DenseMatrix;
