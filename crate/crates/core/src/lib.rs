//! Pseudo-spectral simulation and control of the Cahn-Hilliard equation on the torus.
//!
//! The guide in `book/` walks through each module with runnable examples.

// Comparisons such as `!(x > 0.0)` are written that way on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod io;
pub mod linear_null;
pub mod modal;
pub mod nonlinear_null;
pub mod saturation;
pub mod schedule;
pub mod spectral;
pub mod steering;
pub mod verify;
