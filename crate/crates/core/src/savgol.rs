//! Savitzky-Golay smoothing.
//!
//! Interior bins use the symmetric convolution kernel. The first and last
//! `(window-1)/2` bins are evaluated from a polynomial fitted on the truncated
//! one-sided window at the edge, so polynomials up to `order` are reproduced
//! everywhere. Negative outputs are clamped to zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spectral::Spectrum;

/// Least-squares weights that evaluate, at position `at`, the degree-`order`
/// polynomial fitted to `window` equally spaced samples at positions `0..window`.
pub fn savgol_weights(window: usize, order: usize, at: usize) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let scale = if c > 0.0 { c } else { 1.0 };
    let k = order + 1;
    let design = DMatrix::from_fn(window, k, |r, j| ((r as f64 - c) / scale).powi(j as i32));
    let gram = design.transpose() * &design;
    let t = (at as f64 - c) / scale;
    let phi = DVector::from_fn(k, |j, _| t.powi(j as i32));
    let z = gram
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&phi))
        .or_else(|| gram.lu().solve(&phi))
        .expect("Vandermonde Gram matrix is positive definite for window > order");
    (design * z).iter().copied().collect()
}

/// Smooths a spectrum with a Savitzky-Golay filter of odd `window` and polynomial `order`.
pub fn savgol_smooth(s: &Spectrum, window: usize, order: usize) -> Result<Spectrum> {
    let n = s.grid().n_bins;
    if window.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("window must be odd, got {window}")));
    }
    if window < order + 2 {
        return Err(Error::InvalidParameter(format!(
            "window {window} must be at least order + 2 = {}",
            order + 2
        )));
    }
    if window > n {
        return Err(Error::InvalidParameter(format!(
            "window {window} exceeds the {n} available bins"
        )));
    }
    let half = window / 2;
    let y = s.values();
    let mut out = vec![0.0; n];

    let center = savgol_weights(window, order, half);
    for i in half..n - half {
        out[i] = dot(&center, &y[i - half..=i + half]);
    }
    for i in 0..half {
        let w = savgol_weights(window, order, i);
        out[i] = dot(&w, &y[..window]);
        // mirror image for the right edge
        let w_r: Vec<f64> = w.iter().rev().copied().collect();
        out[n - 1 - i] = dot(&w_r, &y[n - window..]);
    }
    for v in &mut out {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Spectrum::new(*s.grid(), out, s.kind())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
