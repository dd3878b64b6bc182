//! Spectral discretization and numerical experiments for the relativistic
//! Schrödinger–Poisson system on a Dirichlet box: Casimir-class stationary
//! states, their dual variational characterization, Strang-split evolution
//! and nonlinear-stability checks.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod casimir;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod solver;
pub mod spectral;
pub mod state;

pub use error::{Error, Result};
