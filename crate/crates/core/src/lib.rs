//! Simulation and analysis of spectrally resolved ghost imaging with
//! correlated photon pairs.

// NaN must fail parameter checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod detection;
pub mod error;
pub mod filter;
pub mod noise;
pub mod rng;
pub mod savgol;
pub mod source;
pub mod spectral;
pub mod workflow;

pub use error::{Error, ErrorFamily, Result};
