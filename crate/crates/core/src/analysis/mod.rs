//! Coincidence statistics, ghost reconstruction and peak fitting.

pub mod car;
pub mod gaussfit;
pub mod ghost;
pub mod resolve;

pub use car::{compute_car, fit_exp_decay, CarPoint, ExpDecayFit};
pub use gaussfit::{fit_gaussians, FitSettings, GaussianFitResult, GaussianParams, Peak};
pub use ghost::{reconstruct_ghost, GhostOptions};
pub use resolve::{resolving_power, sweep_resolving_power, sweep_resolving_power_with, two_peak_ghost, RpMap};
