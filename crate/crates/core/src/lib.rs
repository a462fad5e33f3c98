//! Isogeometric advection-diffusion solver stabilized by element-local
//! discontinuous subscales.

pub mod analysis;
pub mod assembly;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod legendre;
pub mod linalg;
pub mod problem;
pub mod quadrature;
pub mod solver;

pub use error::{Error, Result};
