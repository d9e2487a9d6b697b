//! Ghost spectrum: the spectrometer-pixel histogram of coincidences.

use serde::{Deserialize, Serialize};

use crate::detection::CoincidenceData;
use crate::error::{Error, Result};
use crate::savgol::savgol_smooth;
use crate::spectral::{normalize_area, partner_wavelength, Spectrum, SpectrumKind, WavelengthGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhostOptions {
    pub subtract_accidentals: bool,
    /// Savitzky-Golay `(window, order)`; `None` leaves the histogram unsmoothed.
    pub smooth: Option<(usize, usize)>,
    pub map_to_bucket_arm: bool,
    /// Pump wavelength used for the axis mapping.
    pub lambda_p_nm: f64,
}

impl Default for GhostOptions {
    fn default() -> Self {
        Self {
            subtract_accidentals: false,
            smooth: Some((11, 3)),
            map_to_bucket_arm: false,
            lambda_p_nm: 532.0,
        }
    }
}

pub fn reconstruct_ghost(data: &CoincidenceData, opts: &GhostOptions) -> Result<Spectrum> {
    if data.n_cc() == 0 {
        return Err(Error::EmptyData("no aligned coincidences".into()));
    }
    let values: Vec<f64> = data
        .aligned
        .iter()
        .zip(&data.shifted)
        .map(|(&a, &s)| {
            if opts.subtract_accidentals {
                (a as f64 - s as f64).max(0.0)
            } else {
                a as f64
            }
        })
        .collect();
    let mut s = Spectrum::new(data.grid, values, SpectrumKind::Counts)?;
    if let Some((window, order)) = opts.smooth {
        s = savgol_smooth(&s, window, order)?;
    }
    let s = normalize_area(&s)?;
    if opts.map_to_bucket_arm {
        map_to_partner_axis(&s, opts.lambda_p_nm)
    } else {
        Ok(s)
    }
}

/// Re-expresses a density on the phase-matching partner axis.
///
/// The partner map reverses and stretches the axis, so the bin edges are
/// mapped and the mass of each source bin is spread uniformly over its image;
/// the result is rebinned onto a uniform grid with the same number of bins
/// spanning the image exactly. Total area is preserved.
pub fn map_to_partner_axis(s: &Spectrum, lambda_p_nm: f64) -> Result<Spectrum> {
    let g = s.grid();
    let n = g.n_bins;
    // mapped edges in increasing order; image of source bin n-1-k is [f[k], f[k+1]]
    let f: Vec<f64> = (0..=n)
        .rev()
        .map(|k| partner_wavelength(g.edge(k), lambda_p_nm))
        .collect::<Result<_>>()?;
    let mass: Vec<f64> = s.values().iter().rev().map(|v| v * g.step_nm).collect();
    let out_grid = WavelengthGrid::from_edges(f[0], f[n], n)?;

    // cumulative mass at each mapped edge
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for m in &mass {
        cum.push(cum.last().unwrap() + m);
    }
    let cdf = |x: f64| -> f64 {
        if x <= f[0] {
            return 0.0;
        }
        if x >= f[n] {
            return cum[n];
        }
        let k = f.partition_point(|&e| e <= x) - 1;
        cum[k] + mass[k] * (x - f[k]) / (f[k + 1] - f[k])
    };
    let mut values = Vec::with_capacity(n);
    let mut lo = cdf(out_grid.edge(0));
    for j in 0..n {
        let hi = if j + 1 == n { cum[n] } else { cdf(out_grid.edge(j + 1)) };
        values.push(((hi - lo) / out_grid.step_nm).max(0.0));
        lo = hi;
    }
    Spectrum::new(out_grid, values, SpectrumKind::Density)
}
