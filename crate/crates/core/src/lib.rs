//! Reconstruction of a spatiotemporal load on a simply supported, damped
//! Euler–Bernoulli beam from the slopes measured at its two ends.
//!
//! The forward model is `rho_A u_tt + mu u_t - (T_r u_x)_x + (r u_xx + kappa u_xxt)_xx = F`
//! with zero deflection and zero moment at both ends and the beam at rest at
//! `t = 0`. The outputs are `theta_0(t) = u_x(0, t)` and `theta_l(t) = u_x(l, t)`.
//! The load is recovered by minimizing the least-squares output misfit with
//! gradients from a backward (adjoint) solve.

pub mod adjoint;
pub mod banded;
pub mod bounds;
pub mod cli;
pub mod config;
pub mod discretization;
pub mod error;
pub mod forward;
pub mod inversion;
pub mod io;
pub mod measurements;
pub mod model;
pub mod objective;

pub use error::{Error, Result};
