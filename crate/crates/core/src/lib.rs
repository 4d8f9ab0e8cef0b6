//! Numerical toolkit for the Lagrangian mean curvature equation
//! `Σ arctan λᵢ(D²u) = g(x)` with a supercritical phase `g` that converges to
//! a constant at infinity.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod barrier;
pub mod dirichlet;
pub mod envelope;
pub mod error;
pub mod numerics;
pub mod phase;
pub mod radial;

pub use error::{Error, Result};
