//! Resolving power of two-peak fits, and its map over peak separation and
//! colored-noise fraction.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gaussfit::{fit_gaussians, FitSettings, GaussianFitResult, GaussianParams, Peak};
use crate::error::{Error, Result};
use crate::noise::{ColoredNoise, NoiseModel};
use crate::spectral::{normalize_area, Spectrum, SpectrumKind, FWHM_PER_SIGMA};

/// `(x₂ − x₁)/(σ₁ + σ₂)` for a two-peak fit.
pub fn resolving_power(fit: &GaussianFitResult) -> Result<f64> {
    if fit.peaks.len() != 2 {
        return Err(Error::Arity {
            expected: 2,
            got: fit.peaks.len(),
        });
    }
    let (a, b) = (fit.peaks[0], fit.peaks[1]);
    if !(a.sigma_nm > 0.0 && b.sigma_nm > 0.0) {
        return Err(Error::InvalidParameter("peak widths must be positive".into()));
    }
    Ok((b.center_nm - a.center_nm).abs() / (a.sigma_nm + b.sigma_nm))
}

/// Two equal Gaussians `separation_nm` apart around `center_nm`, area-normalized.
pub fn two_peak_ghost(
    grid: crate::spectral::WavelengthGrid,
    center_nm: f64,
    separation_nm: f64,
    peak_fwhm_nm: f64,
) -> Result<Spectrum> {
    let sigma = peak_fwhm_nm / FWHM_PER_SIGMA;
    let (x1, x2) = (center_nm - 0.5 * separation_nm, center_nm + 0.5 * separation_nm);
    let s = Spectrum::from_fn(grid, SpectrumKind::Counts, |x| {
        let (z1, z2) = ((x - x1) / sigma, (x - x2) / sigma);
        (-0.5 * z1 * z1).exp() + (-0.5 * z2 * z2).exp()
    })?;
    normalize_area(&s)
}

/// Best of two fits: the peak-picked start, and a concentric narrow-plus-broad
/// start that lets a broad background be taken up by one of the components.
/// Returns `None` if neither converges.
pub fn fit_two_peaks(s: &Spectrum, peak_fwhm_nm: f64, settings: &FitSettings) -> Result<Option<GaussianFitResult>> {
    let picked = fit_gaussians(s, 2, None, settings)?;

    let v = s.values();
    let i = s.argmax();
    let base = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let height = v[i] - base;
    let sigma = peak_fwhm_nm / FWHM_PER_SIGMA;
    let x = s.grid().center(i);
    let step = s.grid().step_nm;
    let halo = GaussianParams {
        offset: base,
        peaks: vec![
            Peak {
                amplitude: 0.9 * height,
                center_nm: x - step,
                sigma_nm: sigma,
            },
            Peak {
                amplitude: 0.1 * height,
                center_nm: x + step,
                sigma_nm: 4.0 * sigma,
            },
        ],
    };
    let core_halo = fit_gaussians(s, 2, Some(&halo), settings)?;

    Ok([picked, core_halo]
        .into_iter()
        .filter(|f| f.converged)
        .min_by(|a, b| a.residual_norm.total_cmp(&b.residual_norm)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpMap {
    pub separations_nm: Vec<f64>,
    pub noise_fractions: Vec<f64>,
    /// `rp[i][j]` for separation `i` and noise fraction `j`; NaN where no fit converged.
    pub rp: Vec<Vec<f64>>,
    pub resolvable: Vec<Vec<bool>>,
    pub non_converged: usize,
}

impl RpMap {
    /// `separation_nm,noise_fraction,rp,resolvable`, separation-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("separation_nm,noise_fraction,rp,resolvable\n");
        for (i, d) in self.separations_nm.iter().enumerate() {
            for (j, n) in self.noise_fractions.iter().enumerate() {
                let _ = writeln!(out, "{d},{n},{},{}", self.rp[i][j], self.resolvable[i][j]);
            }
        }
        out
    }

    /// Noise fraction at which `rp` first drops from ≥ 1 to below 1, by linear
    /// interpolation between the bracketing fractions. NaN cells are skipped.
    pub fn crossing(&self, separation_index: usize) -> Option<f64> {
        let row = &self.rp[separation_index];
        let pts: Vec<(f64, f64)> = self
            .noise_fractions
            .iter()
            .zip(row)
            .filter(|(_, r)| !r.is_nan())
            .map(|(&n, &r)| (n, r))
            .collect();
        if pts.first().is_none_or(|p| p.1 < 1.0) {
            return None;
        }
        pts.windows(2).find(|w| w[0].1 >= 1.0 && w[1].1 < 1.0).map(|w| {
            let ((n0, r0), (n1, r1)) = (w[0], w[1]);
            n0 + (r0 - 1.0) / (r0 - r1) * (n1 - n0)
        })
    }
}

/// Fits every (separation, noise fraction) cell of two-peak ghosts centred on
/// `center_nm` mixed with `source`.
pub fn sweep_resolving_power(
    separations_nm: &[f64],
    noise_fractions: &[f64],
    peak_fwhm_nm: f64,
    center_nm: f64,
    source: &Spectrum,
    settings: &FitSettings,
) -> Result<RpMap> {
    sweep_resolving_power_with(
        &ColoredNoise,
        separations_nm,
        noise_fractions,
        peak_fwhm_nm,
        center_nm,
        source,
        settings,
    )
}

/// As [`sweep_resolving_power`] with any background model.
pub fn sweep_resolving_power_with(
    model: &dyn NoiseModel,
    separations_nm: &[f64],
    noise_fractions: &[f64],
    peak_fwhm_nm: f64,
    center_nm: f64,
    source: &Spectrum,
    settings: &FitSettings,
) -> Result<RpMap> {
    let grid = *source.grid();
    if !(peak_fwhm_nm > 0.0) {
        return Err(Error::InvalidParameter("peak FWHM must be positive".into()));
    }
    if let Some(d) = separations_nm.iter().find(|&&d| !(d > 0.0 && d < grid.span_nm())) {
        return Err(Error::InvalidParameter(format!("separation {d} outside (0, grid span)")));
    }
    let source = normalize_area(source)?;
    let cells: Vec<(usize, usize)> = (0..separations_nm.len())
        .flat_map(|i| (0..noise_fractions.len()).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| -> Result<f64> {
            let ghost = two_peak_ghost(grid, center_nm, separations_nm[i], peak_fwhm_nm)?;
            let mixed = model.mix(&ghost, &source, noise_fractions[j])?;
            match fit_two_peaks(&mixed, peak_fwhm_nm, settings)? {
                Some(fit) => resolving_power(&fit),
                None => Ok(f64::NAN),
            }
        })
        .collect::<Result<_>>()?;

    let nf = noise_fractions.len();
    let rp: Vec<Vec<f64>> = values.chunks(nf.max(1)).map(|c| c.to_vec()).collect();
    let rp = if nf == 0 { vec![Vec::new(); separations_nm.len()] } else { rp };
    let resolvable = rp.iter().map(|r| r.iter().map(|&v| v > 1.0).collect()).collect();
    Ok(RpMap {
        separations_nm: separations_nm.to_vec(),
        noise_fractions: noise_fractions.to_vec(),
        non_converged: values.iter().filter(|v| v.is_nan()).count(),
        rp,
        resolvable,
    })
}
