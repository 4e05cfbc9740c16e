//! Simulation and verification toolkit for the fixed-delay CIR process
//!
//! ```text
//! dX(t) = [a (gamma(t) - X(t)) + b X(t - tau)] dt + sigma sqrt(X(t)) dW(t)
//! ```
//!
//! The process is simulated through `Y = sqrt(X)` with a drift-implicit step
//! that stays positive by construction.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod cli;
pub mod experiments;
pub mod model;
pub mod montecarlo;
pub mod noise;
pub mod quadrature;
pub mod scheme;
