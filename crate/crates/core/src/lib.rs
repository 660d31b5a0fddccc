//! Bulk-surface parabolic problems with heterogeneous dynamic boundary
//! conditions, discretized as a saddle-point PDAE with a Petrov-Galerkin LOD
//! space on the boundary.

pub mod assembly;
pub mod coefficients;
pub mod error;
pub mod errors;
pub mod experiments;
pub mod lod;
pub mod mesh;
pub mod par;
pub mod pdae;
pub mod plot;
pub mod sparse;

pub use error::{Error, Result};
pub use par::Execution;
