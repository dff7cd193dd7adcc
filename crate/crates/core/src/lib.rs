//! Numerical toolkit for semiclassical nonlinear Schrödinger equations with
//! focusing quadratic-phase data: spectral grids, split-step solvers, the lens
//! (conformal) transform, phase-shift cascades and the hydrodynamic flow.

// `!(x > 0.0)` guards are written that way so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cascade;
pub mod conformal;
pub mod error;
pub mod fit;
pub mod grenier;
pub mod grid;
pub mod linear;
pub mod model;
pub mod series;
pub mod solver;

pub use error::{CascadeError, Result};
