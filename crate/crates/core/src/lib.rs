//! Locally conservative, bound-preserving enriched Galerkin solver for
//! linear reaction-diffusion problems on triangular meshes.

pub mod analysis;
pub mod assembly;
pub mod checks;
pub mod error;
pub mod fespace;
pub mod limiter;
pub mod mesh;
pub mod par;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod study;

pub use error::{Error, Result};
