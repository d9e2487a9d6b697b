//! Analytic noise injection on spectra, and extraction and classification of
//! the accidental background of simulated runs.
//!
//! Noise fraction `n` is the share of detected coincidences that are
//! accidental. With accidentals counted inside the coincidence total,
//! `n = N_acc / N_cc = 1 / CAR`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::car::compute_car;
use crate::detection::CoincidenceData;
use crate::error::{Error, Result};
use crate::savgol::savgol_smooth;
use crate::spectral::{ensure_same_grid, l1_distance, normalize_area, Spectrum, SpectrumKind};

/// A way of mixing a noise background into a normalized spectrum.
pub trait NoiseModel: Send + Sync {
    fn name(&self) -> &'static str;

    /// Normalized mixture `(1−n)·ghost + n·background`. `reference` is the
    /// source spectrum; models that do not need it ignore it.
    fn mix(&self, ghost: &Spectrum, reference: &Spectrum, n: f64) -> Result<Spectrum>;
}

/// Accidentals between photons of different pairs, distributed like the source.
#[derive(Debug, Clone, Copy, Default)]
pub struct ColoredNoise;

impl NoiseModel for ColoredNoise {
    fn name(&self) -> &'static str {
        "colored"
    }

    fn mix(&self, ghost: &Spectrum, reference: &Spectrum, n: f64) -> Result<Spectrum> {
        mix_colored(ghost, reference, n)
    }
}

/// Spectrally flat background from dark counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhiteNoise;

impl NoiseModel for WhiteNoise {
    fn name(&self) -> &'static str {
        "white"
    }

    fn mix(&self, ghost: &Spectrum, _reference: &Spectrum, n: f64) -> Result<Spectrum> {
        mix_white(ghost, n)
    }
}

#[derive(Clone)]
pub struct NoiseRegistry(BTreeMap<&'static str, Arc<dyn NoiseModel>>);

impl NoiseRegistry {
    pub fn empty() -> Self {
        Self(BTreeMap::new())
    }

    pub fn register(&mut self, model: Arc<dyn NoiseModel>) {
        self.0.insert(model.name(), model);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn NoiseModel>> {
        self.0.get(name).cloned().ok_or_else(|| Error::UnknownStrategy {
            kind: "noise model",
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.0.keys().copied().collect()
    }
}

impl Default for NoiseRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(ColoredNoise));
        r.register(Arc::new(WhiteNoise));
        r
    }
}

/// A noise model with its fraction and reference spectrum.
#[derive(Clone)]
pub struct NoiseMix {
    pub model: Arc<dyn NoiseModel>,
    pub fraction: f64,
    pub reference: Spectrum,
}

impl fmt::Debug for NoiseMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseMix")
            .field("model", &self.model.name())
            .field("fraction", &self.fraction)
            .finish()
    }
}

impl NoiseMix {
    pub fn new(model: Arc<dyn NoiseModel>, fraction: f64, reference: &Spectrum) -> Result<Self> {
        check_fraction(fraction)?;
        Ok(Self {
            model,
            fraction,
            reference: normalize_area(reference)?,
        })
    }

    pub fn apply(&self, ghost: &Spectrum) -> Result<Spectrum> {
        self.model.mix(ghost, &self.reference, self.fraction)
    }
}

fn check_fraction(n: f64) -> Result<()> {
    if (0.0..=1.0).contains(&n) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("noise fraction {n} outside [0, 1]")))
    }
}

/// `(1−n)·ghost + n·source`, both area-normalized first.
pub fn mix_colored(ghost: &Spectrum, source: &Spectrum, n: f64) -> Result<Spectrum> {
    ensure_same_grid(ghost, source)?;
    check_fraction(n)?;
    let g = normalize_area(ghost)?;
    let s = normalize_area(source)?;
    let values = g
        .values()
        .iter()
        .zip(s.values())
        .map(|(a, b)| (1.0 - n) * a + n * b)
        .collect();
    Spectrum::new(*g.grid(), values, SpectrumKind::Density)
}

/// `(1−n)·ghost + n·uniform`, with the uniform density `1/(n_bins·step)`.
pub fn mix_white(ghost: &Spectrum, n: f64) -> Result<Spectrum> {
    check_fraction(n)?;
    let g = normalize_area(ghost)?;
    let u = 1.0 / g.grid().span_nm();
    let values = g.values().iter().map(|a| (1.0 - n) * a + n * u).collect();
    Spectrum::new(*g.grid(), values, SpectrumKind::Density)
}

/// Normalized, smoothed shifted-window histogram.
pub fn noise_spectrum(data: &CoincidenceData, window: usize, order: usize) -> Result<Spectrum> {
    if data.n_acc() == 0 {
        return Err(Error::EmptyData("no shifted-window coincidences".into()));
    }
    let raw = Spectrum::counts(data.grid, data.shifted.iter().map(|&c| c as f64).collect())?;
    normalize_area(&savgol_smooth(&raw, window, order)?)
}

/// `(max − min) / mean`; zero for a flat spectrum.
pub fn flatness(s: &Spectrum) -> f64 {
    let v = s.values();
    let max = v.iter().cloned().fold(f64::MIN, f64::max);
    let min = v.iter().cloned().fold(f64::MAX, f64::min);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (max - min) / mean
}

/// L1 distance between the noise spectrum and the source marginal.
pub fn source_distance_l1(noise: &Spectrum, source: &Spectrum) -> Result<f64> {
    l1_distance(noise, source)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseRegime {
    White,
    Colored,
    Negligible,
}

impl fmt::Display for NoiseRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseRegime::White => "white",
            NoiseRegime::Colored => "colored",
            NoiseRegime::Negligible => "negligible",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseClassification {
    pub regime: NoiseRegime,
    /// `None` when the run has no accidentals.
    pub car: Option<f64>,
    pub car_err: Option<f64>,
    pub n_white: f64,
    pub n_colored: f64,
}

/// Regime of a run from its CAR and the causes of its aligned coincidences.
/// A run without accidentals counts as negligible.
pub fn classify_noise(data: &CoincidenceData, car_min_threshold: f64) -> NoiseClassification {
    let t = data.class_tally;
    let total = data.n_cc();
    let (n_white, n_colored) = if total > 0 {
        (
            t.dark_involved as f64 / total as f64,
            t.multipair_accidental as f64 / total as f64,
        )
    } else {
        (0.0, 0.0)
    };
    let (car, car_err) = match compute_car(data) {
        Ok(p) => (Some(p.car), Some(p.car_err)),
        Err(_) => (None, None),
    };
    let regime = match car {
        Some(c) if c < car_min_threshold => {
            if t.dark_involved > t.multipair_accidental {
                NoiseRegime::White
            } else {
                NoiseRegime::Colored
            }
        }
        _ => NoiseRegime::Negligible,
    };
    NoiseClassification {
        regime,
        car,
        car_err,
        n_white,
        n_colored,
    }
}

/// Classification report: `{car, car_err, regime, n_white, n_colored, flatness, source_distance_l1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub car: Option<f64>,
    pub car_err: Option<f64>,
    pub regime: NoiseRegime,
    pub n_white: f64,
    pub n_colored: f64,
    pub flatness: Option<f64>,
    pub source_distance_l1: Option<f64>,
}

pub fn noise_report(
    data: &CoincidenceData,
    source_marginal: &Spectrum,
    car_min_threshold: f64,
    window: usize,
    order: usize,
) -> Result<NoiseReport> {
    let c = classify_noise(data, car_min_threshold);
    let (flat, dist) = match noise_spectrum(data, window, order) {
        Ok(ns) => (Some(flatness(&ns)), Some(source_distance_l1(&ns, source_marginal)?)),
        Err(Error::EmptyData(_)) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(NoiseReport {
        car: c.car,
        car_err: c.car_err,
        regime: c.regime,
        n_white: c.n_white,
        n_colored: c.n_colored,
        flatness: flat,
        source_distance_l1: dist,
    })
}
