//! Integer-flux vector fields: auditing, cubic decomposition, and strong
//! approximation by fields with finitely many topological singularities.

pub mod error;
pub mod field;

pub use error::{Error, Result};
pub mod audit;
pub mod decomposition;
pub mod smoothing;
pub mod trace;
pub mod extension;
pub mod approximant;
pub mod connections;
pub mod oned;
