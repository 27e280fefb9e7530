//! Spectral-Galerkin simulation of slow-fast stochastic reaction-diffusion
//! systems driven by Q-Wiener and compensated Poisson noise, together with the
//! frozen-fast averaging machinery and an ε-sweep convergence harness.

// `!(v > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod averaging;
pub mod cli;
pub mod config;
pub mod error;
pub mod expr;
pub mod func;
pub mod harness;
pub mod integrator;
pub mod model;
pub mod noise;
pub mod plot;
pub mod profile;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
