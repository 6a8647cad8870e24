//! Numerical toolkit for generated Jacobian equations: generating functions
//! and their contact maps, Monge-Ampere type coefficients, the weak
//! regularity conditions, g-segments, g*-transforms, g-Monge-Ampere
//! measures and a two-dimensional strict-convexity probe.

// `!(a < b)` is used on purpose so NaN falls on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod duality;
pub mod error;
pub mod genfun;
pub mod height;
pub mod linalg;
pub mod mate;
pub mod measure;
pub mod polygon;
pub mod potential;
pub mod probe;
pub mod report;
pub mod segments;

pub use error::{Error, Result};
pub use genfun::{DerivSpec, DomainBox, GeneratingFunction, Var};
