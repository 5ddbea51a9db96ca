//! Flatness-preserving sampled-data control.
//!
//! Implicit-Euler discretization of structurally flat triangular forms,
//! discrete parameterizing maps built by block-wise solves, and a dynamic
//! feedback tracking controller. The planar VTOL aircraft is the reference
//! plant.

// `!(a < b)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod discretize;
pub mod error;
pub mod numeric;
pub mod param;
pub mod sim;
pub mod system;
pub mod trajgen;
pub mod triangular;
pub mod validate;
pub mod vtol;
pub mod window;

pub use error::{Error, FaultStage, Result};
pub use numeric::{Matrix, Vector};
