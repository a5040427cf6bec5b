//! Contaminant transport through a periodically perforated layered medium.
//!
//! The crate solves the microscopic convection–diffusion–decay problem on a
//! domain perforated by a periodic array of thin leaking alveoli, its
//! homogenized interface-jump limit, the boundary-layer cell problems and
//! the matched asymptotic expansion built from them, and measures the
//! convergence of the approximations as the period shrinks.

// Index loops mirror the stencil formulas; `!(x > 0.0)` rejects NaN on purpose.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cell;
pub mod coefficients;
pub mod error;
pub mod expansion;
pub mod field;
pub mod fv;
pub mod geometry;
pub mod grid;
pub mod limit;
pub mod linalg;
pub mod micro;
pub mod scenario;
pub mod study;
pub mod transient;

pub use error::{Error, Result};
