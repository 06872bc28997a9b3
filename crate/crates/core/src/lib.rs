//! Numerical laboratory for two-dimensional harmonic map flow into the unit sphere.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod calculus;
pub mod config;
pub mod corpus;
pub mod digest;
pub mod error;
pub mod field;
pub mod flow;
pub mod grid;
pub mod inequality;
pub mod presets;
pub mod radial;
pub mod singularity;
pub mod snapshot;
pub mod vec3;
pub mod weighted;

pub use error::{Error, Result};
pub use field::{make_bubble, Rotation, ScalarField, SphereField, SymTensorField, VectorField3};
pub use grid::Grid;
