//! Wavelength grids, binned spectra and the phase-matching wavelength algebra.
//!
//! All wavelengths are vacuum nanometres. The two arms of the source are
//! referred to by role: the *spectrometer arm* (visible, ~810 nm, resolved on
//! pixels) and the *bucket arm* (near infrared, ~1550 nm, single-pixel
//! detector behind the interference filter).

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `2·sqrt(2·ln 2)`, the FWHM of a unit-sigma Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// A uniform wavelength axis described by its first bin centre and spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavelengthGrid {
    pub start_nm: f64,
    pub step_nm: f64,
    pub n_bins: usize,
}

impl WavelengthGrid {
    pub fn new(start_nm: f64, step_nm: f64, n_bins: usize) -> Result<Self> {
        if !start_nm.is_finite() || !step_nm.is_finite() || step_nm <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "grid needs finite start and positive step (start={start_nm}, step={step_nm})"
            )));
        }
        if n_bins < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 2 bins, got {n_bins}"
            )));
        }
        Ok(Self {
            start_nm,
            step_nm,
            n_bins,
        })
    }

    /// Grid whose bin edges span exactly `[lo_nm, hi_nm]`.
    pub fn from_edges(lo_nm: f64, hi_nm: f64, n_bins: usize) -> Result<Self> {
        if !(hi_nm > lo_nm) {
            return Err(Error::InvalidParameter(format!(
                "grid edges must be increasing ({lo_nm} .. {hi_nm})"
            )));
        }
        let step = (hi_nm - lo_nm) / n_bins as f64;
        Self::new(lo_nm + 0.5 * step, step, n_bins)
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.start_nm + i as f64 * self.step_nm
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_bins).map(move |i| self.center(i))
    }

    pub fn lower_edge(&self) -> f64 {
        self.start_nm - 0.5 * self.step_nm
    }

    pub fn upper_edge(&self) -> f64 {
        self.start_nm + (self.n_bins as f64 - 0.5) * self.step_nm
    }

    /// Edge `k` for `k in 0..=n_bins`.
    #[inline]
    pub fn edge(&self, k: usize) -> f64 {
        self.start_nm + (k as f64 - 0.5) * self.step_nm
    }

    pub fn span_nm(&self) -> f64 {
        self.step_nm * self.n_bins as f64
    }

    /// Bin containing `lambda_nm`, if any.
    #[inline]
    pub fn bin_index(&self, lambda_nm: f64) -> Option<usize> {
        let x = (lambda_nm - self.lower_edge()) / self.step_nm;
        if x >= 0.0 && x < self.n_bins as f64 {
            Some(x as usize)
        } else {
            None
        }
    }

    pub fn same_as(&self, other: &WavelengthGrid) -> bool {
        let tol = 1e-9 * self.step_nm;
        self.n_bins == other.n_bins
            && (self.start_nm - other.start_nm).abs() <= tol
            && (self.step_nm - other.step_nm).abs() <= 1e-12 * self.step_nm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumKind {
    Counts,
    Density,
}

/// Non-negative values on a [`WavelengthGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    grid: WavelengthGrid,
    values: Vec<f64>,
    kind: SpectrumKind,
}

impl Spectrum {
    pub fn new(grid: WavelengthGrid, values: Vec<f64>, kind: SpectrumKind) -> Result<Self> {
        if values.len() != grid.n_bins {
            return Err(Error::InvalidParameter(format!(
                "{} values for a grid of {} bins",
                values.len(),
                grid.n_bins
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidParameter(format!(
                "spectrum value {v} at bin {i} is negative or not finite"
            )));
        }
        Ok(Self { grid, values, kind })
    }

    pub fn counts(grid: WavelengthGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, values, SpectrumKind::Counts)
    }

    /// Samples `f` at the bin centres.
    pub fn from_fn(grid: WavelengthGrid, kind: SpectrumKind, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.centers().map(f).collect();
        Self::new(grid, values, kind)
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> SpectrumKind {
        self.kind
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn area(&self) -> f64 {
        self.total() * self.grid.step_nm
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Writes the `wavelength_nm,value` CSV representation.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(24 * (self.values.len() + 1));
        out.push_str("wavelength_nm,value\n");
        for (x, v) in self.grid.centers().zip(&self.values) {
            let _ = writeln!(out, "{x},{v}");
        }
        out
    }

    /// Reads a `wavelength_nm,value` CSV. The wavelength column must be uniform.
    pub fn from_csv(reader: impl BufRead, kind: SpectrumKind) -> Result<Self> {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        let mut lines = reader.lines();
        match lines.next() {
            Some(header) => {
                let header = header?;
                if header.trim() != "wavelength_nm,value" {
                    return Err(Error::Format(format!("unexpected header `{header}`")));
                }
            }
            None => return Err(Error::Format("empty spectrum file".into())),
        }
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let (Some(x), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Format(format!("line {}: expected 2 columns", n + 2)));
            };
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", n + 2)))
            };
            xs.push(parse(x)?);
            vs.push(parse(v)?);
        }
        if xs.len() < 2 {
            return Err(Error::Format("spectrum needs at least 2 rows".into()));
        }
        let step = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
        for (i, x) in xs.iter().enumerate() {
            if (x - (xs[0] + i as f64 * step)).abs() > 1e-6 * step.abs().max(1e-12) {
                return Err(Error::Format(format!(
                    "wavelength column is not uniform at row {}",
                    i + 2
                )));
            }
        }
        let grid = WavelengthGrid::new(xs[0], step, xs.len())?;
        Spectrum::new(grid, vs, kind)
    }
}

/// Pump laser parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpSpec {
    pub lambda_p_nm: f64,
    pub bandwidth_fwhm_nm: f64,
    pub rep_rate_hz: f64,
}

impl Default for PumpSpec {
    fn default() -> Self {
        Self {
            lambda_p_nm: 532.0,
            bandwidth_fwhm_nm: 0.23,
            rep_rate_hz: 4.0e7,
        }
    }
}

/// Wavelength of the partner photon under energy conservation with the pump:
/// `(1/λp − 1/λ)⁻¹`. The map is an involution on `λ > λp`.
pub fn partner_wavelength(lambda_nm: f64, lambda_p_nm: f64) -> Result<f64> {
    if !(lambda_p_nm > 0.0) || !(lambda_nm > lambda_p_nm) || !lambda_nm.is_finite() {
        return Err(Error::Domain(format!(
            "partner wavelength needs 0 < λp < λ (λ={lambda_nm}, λp={lambda_p_nm})"
        )));
    }
    Ok(1.0 / (1.0 / lambda_p_nm - 1.0 / lambda_nm))
}

/// First-order transfer of a bandwidth across the phase-matching map,
/// `Δ·(λ_to/λ_from)²`.
pub fn convert_bandwidth(delta_nm: f64, lambda_from_nm: f64, lambda_to_nm: f64) -> Result<f64> {
    if !(delta_nm > 0.0 && lambda_from_nm > 0.0 && lambda_to_nm > 0.0) {
        return Err(Error::Domain(format!(
            "bandwidth conversion needs positive arguments ({delta_nm}, {lambda_from_nm}, {lambda_to_nm})"
        )));
    }
    let r = lambda_to_nm / lambda_from_nm;
    Ok(delta_nm * r * r)
}

/// Rescales so that `Σ values·step = 1`.
pub fn normalize_area(s: &Spectrum) -> Result<Spectrum> {
    let area = s.area();
    if !(area > 0.0) {
        return Err(Error::EmptySpectrum);
    }
    let values = s.values.iter().map(|v| v / area).collect();
    Ok(Spectrum {
        grid: s.grid,
        values,
        kind: SpectrumKind::Density,
    })
}

/// Full width at half maximum around the global maximum, with the two
/// half-max crossings located by linear interpolation.
pub fn empirical_fwhm(s: &Spectrum) -> Result<f64> {
    let v = s.values();
    let n = v.len();
    let peak = s.argmax();
    if peak == 0 || peak == n - 1 {
        return Err(Error::Shape(format!("maximum on boundary bin {peak}")));
    }
    let half = 0.5 * v[peak];
    if !(half > 0.0) {
        return Err(Error::EmptySpectrum);
    }
    let grid = s.grid();

    let mut j = peak;
    while j > 0 && v[j - 1] >= half {
        j -= 1;
    }
    if j == 0 {
        return Err(Error::Shape("no half-max crossing left of the peak".into()));
    }
    // v[j-1] < half <= v[j]
    let left = grid.center(j - 1) + (half - v[j - 1]) / (v[j] - v[j - 1]) * grid.step_nm;

    let mut k = peak;
    while k < n - 1 && v[k + 1] >= half {
        k += 1;
    }
    if k == n - 1 {
        return Err(Error::Shape("no half-max crossing right of the peak".into()));
    }
    // v[k] >= half > v[k+1]
    let right = grid.center(k) + (v[k] - half) / (v[k] - v[k + 1]) * grid.step_nm;
    Ok(right - left)
}

/// Area-normalized Gaussian density sampled at bin centres.
pub fn gaussian_density(grid: WavelengthGrid, center_nm: f64, fwhm_nm: f64) -> Result<Spectrum> {
    if !(fwhm_nm > 0.0) {
        return Err(Error::InvalidParameter(format!("fwhm must be positive, got {fwhm_nm}")));
    }
    let sigma = fwhm_nm / FWHM_PER_SIGMA;
    let s = Spectrum::from_fn(grid, SpectrumKind::Counts, |x| {
        let z = (x - center_nm) / sigma;
        (-0.5 * z * z).exp()
    })?;
    normalize_area(&s)
}

/// `Σ |p − q|·step` between two spectra on the same grid, each area-normalized first.
pub fn l1_distance(a: &Spectrum, b: &Spectrum) -> Result<f64> {
    ensure_same_grid(a, b)?;
    let a = normalize_area(a)?;
    let b = normalize_area(b)?;
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(p, q)| (p - q).abs())
        .sum::<f64>()
        * a.grid().step_nm)
}

pub(crate) fn ensure_same_grid(a: &Spectrum, b: &Spectrum) -> Result<()> {
    if a.grid().same_as(b.grid()) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!("{:?} vs {:?}", a.grid(), b.grid())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(start: f64, step: f64, n: usize) -> WavelengthGrid {
        WavelengthGrid::new(start, step, n).unwrap()
    }

    #[test]
    fn partner_of_1550_is_810() {
        let l = partner_wavelength(1550.0, 532.0).unwrap();
        assert!((l - 810.0).abs() < 0.1, "{l}");
    }

    #[test]
    fn partner_degenerate_point() {
        let l = partner_wavelength(1064.0, 532.0).unwrap();
        assert!((l - 1064.0).abs() < 1e-9);
    }

    #[test]
    fn partner_of_810() {
        let l = partner_wavelength(810.0, 532.0).unwrap();
        assert!((l - 1550.07).abs() < 0.01, "{l}");
    }

    #[test]
    fn partner_domain_error() {
        assert!(matches!(partner_wavelength(500.0, 532.0), Err(Error::Domain(_))));
        assert!(matches!(partner_wavelength(532.0, 532.0), Err(Error::Domain(_))));
    }

    #[test]
    fn bandwidth_examples() {
        let d = convert_bandwidth(10.0, 1550.0, 810.0).unwrap();
        assert!((d - 2.73).abs() < 0.01, "{d}");
        assert_eq!(convert_bandwidth(3.3, 700.0, 700.0).unwrap(), 3.3);
        let d = convert_bandwidth(0.5, 810.0, 1550.0).unwrap();
        assert!((d - 1.83).abs() < 0.01, "{d}");
        assert!(convert_bandwidth(0.0, 810.0, 1550.0).is_err());
        assert!(convert_bandwidth(1.0, -810.0, 1550.0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let g = grid(0.0, 0.5, 100);
        let s = Spectrum::counts(g, vec![1.0; 100]).unwrap();
        let n = normalize_area(&s).unwrap();
        assert!(n.values().iter().all(|v| (v - 0.02).abs() < 1e-15));
        assert_eq!(n.kind(), SpectrumKind::Density);

        let again = normalize_area(&n).unwrap();
        for (a, b) in n.values().iter().zip(again.values()) {
            assert!((a - b).abs() < 1e-12);
        }

        let s = Spectrum::counts(grid(1.0, 1.0, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let n = normalize_area(&s).unwrap();
        let want = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        for (a, b) in n.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }

        let z = Spectrum::counts(grid(1.0, 1.0, 3), vec![0.0; 3]).unwrap();
        assert!(matches!(normalize_area(&z), Err(Error::EmptySpectrum)));
    }

    #[test]
    fn fwhm_of_gaussian() {
        let g = grid(790.0, 0.05, 801);
        let s = gaussian_density(g, 810.0, 1.19 * FWHM_PER_SIGMA).unwrap();
        let w = empirical_fwhm(&s).unwrap();
        assert!((w - 2.80).abs() < 0.02, "{w}");
    }

    #[test]
    fn fwhm_of_rectangle() {
        let g = grid(0.0, 0.25, 80);
        let s = Spectrum::from_fn(g, SpectrumKind::Counts, |x| {
            if (5.0..9.0).contains(&x) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let w = empirical_fwhm(&s).unwrap();
        assert!((w - 4.0).abs() <= 0.25, "{w}");
    }

    #[test]
    fn fwhm_of_mixture_exceeds_narrow_component() {
        let g = grid(760.0, 0.05, 2001);
        let narrow = gaussian_density(g, 810.0, 2.8).unwrap();
        let broad = gaussian_density(g, 810.0, 25.0).unwrap();
        let mix: Vec<f64> = narrow
            .values()
            .iter()
            .zip(broad.values())
            .map(|(a, b)| 0.7 * a + 0.3 * b)
            .collect();
        let s = Spectrum::counts(g, mix).unwrap();
        assert!(empirical_fwhm(&s).unwrap() > 2.8);
    }

    #[test]
    fn fwhm_shape_errors() {
        let g = grid(0.0, 1.0, 5);
        let s = Spectrum::counts(g, vec![5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        assert!(matches!(empirical_fwhm(&s), Err(Error::Shape(_))));
        let s = Spectrum::counts(g, vec![1.0, 2.0, 3.0, 2.5, 2.0]).unwrap();
        assert!(matches!(empirical_fwhm(&s), Err(Error::Shape(_))));
    }

    #[test]
    fn csv_round_trip() {
        let g = grid(800.0, 0.2, 11);
        let s = gaussian_density(g, 801.0, 0.7).unwrap();
        let text = s.to_csv();
        assert!(text.starts_with("wavelength_nm,value\n"));
        let back = Spectrum::from_csv(text.as_bytes(), SpectrumKind::Density).unwrap();
        assert_eq!(back.values(), s.values());
        assert!(back.grid().same_as(s.grid()));
    }

    #[test]
    fn rejects_negative_values() {
        let g = grid(0.0, 1.0, 2);
        assert!(Spectrum::counts(g, vec![1.0, -1.0]).is_err());
        assert!(Spectrum::counts(g, vec![1.0, f64::NAN]).is_err());
        assert!(WavelengthGrid::new(0.0, 1.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn partner_is_involution(l in 532.0001f64..5320.0) {
            let back = partner_wavelength(partner_wavelength(l, 532.0).unwrap(), 532.0).unwrap();
            prop_assert!(((back - l) / l).abs() < 1e-9);
        }

        #[test]
        fn bandwidth_round_trip(d in 0.01f64..100.0, a in 300.0f64..3000.0, b in 300.0f64..3000.0) {
            let there = convert_bandwidth(d, a, b).unwrap();
            let back = convert_bandwidth(there, b, a).unwrap();
            prop_assert!(((back - d) / d).abs() < 1e-12);
        }

        #[test]
        fn fwhm_scale_invariant(k in 0.001f64..1000.0, w in 0.5f64..5.0) {
            let g = grid(790.0, 0.1, 401);
            let s = gaussian_density(g, 810.0, w).unwrap();
            let scaled = Spectrum::counts(g, s.values().iter().map(|v| v * k).collect()).unwrap();
            let a = empirical_fwhm(&s).unwrap();
            let b = empirical_fwhm(&scaled).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
