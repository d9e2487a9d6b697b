//! Photon-pair source: pump power to pairs per pulse, and the joint spectral
//! density that pair wavelengths are drawn from.

use std::fmt::Write as _;

use libm::erf;
use rand::distr::Distribution;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::spectral::{
    convert_bandwidth, partner_wavelength, PumpSpec, Spectrum, SpectrumKind, WavelengthGrid,
    FWHM_PER_SIGMA,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub pump: PumpSpec,
    /// Central wavelength on the spectrometer arm.
    pub center_spect_nm: f64,
    /// FWHM of the source spectrum on the spectrometer arm.
    pub jsd_marginal_fwhm_nm: f64,
    /// FWHM of the spectrometer-arm wavelength spread at fixed bucket-arm wavelength.
    pub correlation_width_nm: f64,
    /// Mean pairs per pulse per unit pump power density (pairs·mm²/(pulse·mW)).
    pub brightness_coeff: f64,
}

impl Default for SourceModel {
    fn default() -> Self {
        let pump = PumpSpec::default();
        Self {
            pump,
            center_spect_nm: 810.0,
            jsd_marginal_fwhm_nm: 25.0,
            correlation_width_nm: default_correlation_width(&pump, 810.0),
            brightness_coeff: 0.01,
        }
    }
}

/// Pump bandwidth carried over to the spectrometer arm.
pub fn default_correlation_width(pump: &PumpSpec, center_spect_nm: f64) -> f64 {
    pump.bandwidth_fwhm_nm * (center_spect_nm / pump.lambda_p_nm).powi(2)
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        let p = &self.pump;
        if !(p.lambda_p_nm > 0.0 && p.bandwidth_fwhm_nm > 0.0 && p.rep_rate_hz > 0.0) {
            return Err(Error::InvalidParameter(
                "pump wavelength, bandwidth and repetition rate must be positive".into(),
            ));
        }
        if !(self.jsd_marginal_fwhm_nm > 0.0) || !(self.correlation_width_nm >= 0.0) {
            return Err(Error::InvalidParameter("source widths must be positive".into()));
        }
        if !(self.brightness_coeff > 0.0) {
            return Err(Error::InvalidParameter("brightness_coeff must be positive".into()));
        }
        partner_wavelength(self.center_spect_nm, p.lambda_p_nm)?;
        Ok(())
    }

    /// Bucket-arm centre wavelength, the phase-matching partner of the spectrometer centre.
    pub fn center_bucket_nm(&self) -> Result<f64> {
        partner_wavelength(self.center_spect_nm, self.pump.lambda_p_nm)
    }
}

/// Mean number of pairs per pulse, linear in pump power density.
pub fn mean_pairs_per_pulse(power_density_mw_mm2: f64, model: &SourceModel) -> Result<f64> {
    if !(power_density_mw_mm2 >= 0.0) || !power_density_mw_mm2.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "power density must be non-negative, got {power_density_mw_mm2}"
        )));
    }
    Ok(model.brightness_coeff * power_density_mw_mm2)
}

/// Poisson pair-number sampler. Small means use an inverse-CDF table, which
/// also supports drawing conditionally on at least one pair.
#[derive(Debug, Clone)]
pub enum PairCountSampler {
    Zero,
    Table { cdf: Vec<f64> },
    Large(Poisson<f64>),
}

const TABLE_MAX_MEAN: f64 = 30.0;

impl PairCountSampler {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mean pair number must be >= 0, got {mu}")));
        }
        if mu == 0.0 {
            return Ok(Self::Zero);
        }
        if mu > TABLE_MAX_MEAN {
            let p = Poisson::new(mu).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            return Ok(Self::Large(p));
        }
        let mut cdf = Vec::new();
        let mut pk = (-mu).exp();
        let mut acc = 0.0;
        let mut k = 0u32;
        loop {
            acc += pk;
            cdf.push(acc);
            k += 1;
            pk *= mu / k as f64;
            if 1.0 - acc < 1e-17 || pk < 1e-300 {
                break;
            }
        }
        Ok(Self::Table { cdf })
    }

    /// Probability of zero pairs.
    pub fn p_zero(&self) -> f64 {
        match self {
            Self::Zero => 1.0,
            Self::Table { cdf } => cdf[0],
            Self::Large(_) => 0.0,
        }
    }

    #[inline]
    pub fn sample(&self, rng: &mut RandomStream) -> u32 {
        match self {
            Self::Zero => 0,
            Self::Table { cdf } => lookup(cdf, rng.uniform()),
            Self::Large(p) => p.sample(rng) as u32,
        }
    }

    /// Draw conditioned on `k >= 1`.
    #[inline]
    pub fn sample_nonzero(&self, rng: &mut RandomStream) -> u32 {
        match self {
            Self::Zero => 1,
            Self::Table { cdf } => {
                let p0 = cdf[0];
                lookup(cdf, p0 + (1.0 - p0) * rng.uniform()).max(1)
            }
            Self::Large(p) => loop {
                let k = p.sample(rng) as u32;
                if k > 0 {
                    break k;
                }
            },
        }
    }
}

#[inline]
fn lookup(cdf: &[f64], u: f64) -> u32 {
    for (k, c) in cdf.iter().enumerate() {
        if u < *c {
            return k as u32;
        }
    }
    cdf.len() as u32
}

/// Poisson-distributed number of pairs in one pulse.
pub fn sample_pair_count(mu: f64, rng: &mut RandomStream) -> Result<u32> {
    Ok(PairCountSampler::new(mu)?.sample(rng))
}

/// Joint density of (spectrometer-arm, bucket-arm) wavelengths on a 2-D grid,
/// stored row-major with the spectrometer axis outermost, in units of 1/nm².
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpectralDensity {
    grid_spect: WavelengthGrid,
    grid_bucket: WavelengthGrid,
    density: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Spect,
    Bucket,
}

impl JointSpectralDensity {
    /// Wraps an arbitrary non-negative table, normalizing it to unit integral.
    pub fn from_density(
        grid_spect: WavelengthGrid,
        grid_bucket: WavelengthGrid,
        mut density: Vec<f64>,
    ) -> Result<Self> {
        if density.len() != grid_spect.n_bins * grid_bucket.n_bins {
            return Err(Error::InvalidParameter(format!(
                "density has {} cells, grids need {}",
                density.len(),
                grid_spect.n_bins * grid_bucket.n_bins
            )));
        }
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidParameter("density must be finite and non-negative".into()));
        }
        let cell = grid_spect.step_nm * grid_bucket.step_nm;
        let mass: f64 = density.iter().sum::<f64>() * cell;
        if !(mass > 0.0) {
            return Err(Error::EmptySpectrum);
        }
        for d in &mut density {
            *d /= mass;
        }
        Ok(Self {
            grid_spect,
            grid_bucket,
            density,
        })
    }

    pub fn grid_spect(&self) -> &WavelengthGrid {
        &self.grid_spect
    }

    pub fn grid_bucket(&self) -> &WavelengthGrid {
        &self.grid_bucket
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    #[inline]
    pub fn at(&self, i_spect: usize, j_bucket: usize) -> f64 {
        self.density[i_spect * self.grid_bucket.n_bins + j_bucket]
    }

    /// Bucket-axis slice at spectrometer bin `i`.
    pub fn row(&self, i_spect: usize) -> &[f64] {
        let nb = self.grid_bucket.n_bins;
        &self.density[i_spect * nb..(i_spect + 1) * nb]
    }

    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.grid_spect.step_nm * self.grid_bucket.step_nm
    }

    /// CSV with header `lambda_spect_nm,lambda_bucket_nm,density`, row-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda_spect_nm,lambda_bucket_nm,density\n");
        for i in 0..self.grid_spect.n_bins {
            let ls = self.grid_spect.center(i);
            for j in 0..self.grid_bucket.n_bins {
                let _ = writeln!(out, "{ls},{},{}", self.grid_bucket.center(j), self.at(i, j));
            }
        }
        out
    }
}

/// Mass of a Gaussian `N(mu, sigma²)` inside `[a, b]`. A zero sigma is a point mass.
fn gaussian_mass(a: f64, b: f64, mu: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return if mu >= a && mu < b { 1.0 } else { 0.0 };
    }
    let s = sigma * std::f64::consts::SQRT_2;
    0.5 * (erf((b - mu) / s) - erf((a - mu) / s))
}

/// Bucket grid covering the phase-matching partners of `grid_spect` with a
/// margin of eight conditional sigmas on either side.
pub fn default_bucket_grid(
    model: &SourceModel,
    grid_spect: &WavelengthGrid,
    step_nm: f64,
) -> Result<WavelengthGrid> {
    let lp = model.pump.lambda_p_nm;
    let hi = partner_wavelength(grid_spect.lower_edge(), lp)?;
    let lo = partner_wavelength(grid_spect.upper_edge(), lp)?;
    let sigma_max = if model.correlation_width_nm > 0.0 {
        convert_bandwidth(model.correlation_width_nm, grid_spect.lower_edge(), hi)? / FWHM_PER_SIGMA
    } else {
        0.0
    };
    let margin = 8.0 * sigma_max + step_nm;
    let n = ((hi - lo + 2.0 * margin) / step_nm).ceil() as usize;
    WavelengthGrid::new(lo - margin + 0.5 * step_nm, step_nm, n.max(2))
}

/// Gaussian source marginal on the spectrometer axis times a Gaussian
/// conditional on the bucket axis centred on the phase-matching partner.
///
/// The conditional is renormalized per spectrometer bin, so the marginal over
/// the bucket axis is exactly the binned source spectrum.
pub fn build_jsd(
    model: &SourceModel,
    grid_spect: &WavelengthGrid,
    grid_bucket: &WavelengthGrid,
) -> Result<JointSpectralDensity> {
    model.validate()?;
    let lp = model.pump.lambda_p_nm;
    let sigma_m = model.jsd_marginal_fwhm_nm / FWHM_PER_SIGMA;
    let ns = grid_spect.n_bins;
    let nb = grid_bucket.n_bins;

    let marginal: Vec<f64> = (0..ns)
        .map(|i| {
            gaussian_mass(
                grid_spect.edge(i),
                grid_spect.edge(i + 1),
                model.center_spect_nm,
                sigma_m,
            )
        })
        .collect();
    let spect_mass: f64 = marginal.iter().sum();
    let mut lost = 1.0 - spect_mass;

    let mut density = vec![0.0; ns * nb];
    for i in 0..ns {
        if marginal[i] == 0.0 {
            continue;
        }
        let ls = grid_spect.center(i);
        let lb = partner_wavelength(ls, lp)?;
        let sigma_b = if model.correlation_width_nm > 0.0 {
            convert_bandwidth(model.correlation_width_nm, ls, lb)? / FWHM_PER_SIGMA
        } else {
            0.0
        };
        let row = &mut density[i * nb..(i + 1) * nb];
        let mut covered = 0.0;
        for (j, cell) in row.iter_mut().enumerate() {
            let m = gaussian_mass(grid_bucket.edge(j), grid_bucket.edge(j + 1), lb, sigma_b);
            *cell = m;
            covered += m;
        }
        lost += marginal[i] * (1.0 - covered);
        if covered > 0.0 {
            let w = marginal[i] / covered;
            for cell in row.iter_mut() {
                *cell *= w;
            }
        }
    }
    if lost > 0.01 {
        return Err(Error::GridCoverage {
            lost_fraction: lost,
        });
    }
    JointSpectralDensity::from_density(*grid_spect, *grid_bucket, density)
}

/// Normalized marginal density on one arm.
pub fn source_marginal(jsd: &JointSpectralDensity, arm: Arm) -> Result<Spectrum> {
    let (gs, gb) = (jsd.grid_spect, jsd.grid_bucket);
    let values = match arm {
        Arm::Spect => (0..gs.n_bins)
            .map(|i| jsd.row(i).iter().sum::<f64>() * gb.step_nm)
            .collect(),
        Arm::Bucket => {
            let mut v = vec![0.0; gb.n_bins];
            for i in 0..gs.n_bins {
                for (acc, d) in v.iter_mut().zip(jsd.row(i)) {
                    *acc += d;
                }
            }
            v.iter().map(|x| x * gs.step_nm).collect()
        }
    };
    let grid = match arm {
        Arm::Spect => gs,
        Arm::Bucket => gb,
    };
    crate::spectral::normalize_area(&Spectrum::new(grid, values, SpectrumKind::Density)?)
}

/// Alias-table sampler over the non-empty cells of a joint density.
#[derive(Debug, Clone)]
pub struct JsdSampler {
    grid_spect: WavelengthGrid,
    grid_bucket: WavelengthGrid,
    cells: Vec<(u32, u32)>,
    alias: WeightedAliasIndex<f64>,
}

impl JsdSampler {
    pub fn new(jsd: &JointSpectralDensity) -> Result<Self> {
        let nb = jsd.grid_bucket.n_bins;
        let mut cells = Vec::new();
        let mut weights = Vec::new();
        for (idx, &d) in jsd.density.iter().enumerate() {
            if d > 0.0 {
                cells.push(((idx / nb) as u32, (idx % nb) as u32));
                weights.push(d);
            }
        }
        let alias = WeightedAliasIndex::new(weights)
            .map_err(|e| Error::InvalidParameter(format!("joint density: {e}")))?;
        Ok(Self {
            grid_spect: jsd.grid_spect,
            grid_bucket: jsd.grid_bucket,
            cells,
            alias,
        })
    }

    /// Draws `(λ_spect, λ_bucket)` with uniform jitter inside the chosen cell.
    #[inline]
    pub fn sample(&self, rng: &mut RandomStream) -> (f64, f64) {
        let (i, j) = self.cells[self.alias.sample(rng)];
        let ls = self.grid_spect.center(i as usize) + (rng.uniform() - 0.5) * self.grid_spect.step_nm;
        let lb =
            self.grid_bucket.center(j as usize) + (rng.uniform() - 0.5) * self.grid_bucket.step_nm;
        (ls, lb)
    }
}

/// One correlated pair drawn from `jsd`.
pub fn sample_pair_wavelengths(jsd: &JointSpectralDensity, rng: &mut RandomStream) -> Result<(f64, f64)> {
    Ok(JsdSampler::new(jsd)?.sample(rng))
}
