//! Finite-volume solver for the spinorial matrix drift-diffusion model.
//!
//! The crate discretizes the charge density `n0`, the spin vector `n`, and the
//! electric potential `V` on admissible two-dimensional meshes. Fluxes use the
//! Scharfetter-Gummel scheme and time stepping is implicit Euler.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod device;
pub mod diagnostics;
pub mod error;
pub mod flux;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod solver;
pub mod vec3;

pub use error::{Error, Result};
pub use flux::State;
pub use mesh::Mesh;
pub use model::ModelParams;
