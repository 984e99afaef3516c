//! Multiscale Darcy-flow toolkit.
//!
//! Generates high-contrast fractured permeability fields, solves the pressure
//! equation with a fine-scale mixed FEM and a mixed multiscale reduction
//! (snapshot space → local spectral problem → offline basis → coarse solve →
//! downscaling), and trains a two-stage neural operator on the resulting
//! datasets: a data-driven basis-function reconstructor and a
//! physics-informed pressure reconstructor.

pub mod dataset;
pub mod error;
pub mod fem;
pub mod gmsfem;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod perm;
pub mod tensor;

pub use error::{Error, Result};
