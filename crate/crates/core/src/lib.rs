//! Zero-noise limits of rare-event probabilities for one-dimensional
//! diffusions dY = b(Y,t) dt + sqrt(eps) dW.
//!
//! The crate computes the threshold probability u_eps and its cost
//! q_eps = -eps ln u_eps from a backward PDE, the classical least-action
//! cost q_0 by shooting and by direct minimisation, Monte Carlo estimates
//! under the optimally controlled dynamics, and conditional law of
//! bridges pinned at their endpoint.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod classical;
pub mod commands;
pub mod config;
pub mod drift;
pub mod error;
pub mod export;
pub mod normal;
pub mod pde;
pub mod quad;
pub mod sde;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
