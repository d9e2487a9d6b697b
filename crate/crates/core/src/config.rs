//! Run configuration in TOML.
//!
//! Every key is optional; an empty document is a complete configuration.
//! Unknown keys are rejected. After parsing, derived defaults are written
//! back so that a serialized config fully describes a run.

use serde::{Deserialize, Serialize};

use crate::analysis::gaussfit::FitSettings;
use crate::detection::{DetectionConfig, DetectorModel, Experiment};
use crate::error::{Error, Result};
use crate::filter::{FilterProfile, FilterShapeRegistry};
use crate::noise::{NoiseModel, NoiseRegistry};
use crate::source::{default_correlation_width, SourceModel};
use crate::spectral::{PumpSpec, WavelengthGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub lambda_p_nm: f64,
    pub pump_bandwidth_fwhm_nm: f64,
    pub rep_rate_hz: f64,
    pub center_spect_nm: f64,
    pub jsd_marginal_fwhm_nm: f64,
    /// Derived from the pump bandwidth when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation_width_nm: Option<f64>,
    pub brightness_coeff: f64,
    /// Bucket-axis resolution of the joint density.
    pub bucket_step_nm: f64,
}

impl Default for SourceSection {
    fn default() -> Self {
        let m = SourceModel::default();
        Self {
            lambda_p_nm: m.pump.lambda_p_nm,
            pump_bandwidth_fwhm_nm: m.pump.bandwidth_fwhm_nm,
            rep_rate_hz: m.pump.rep_rate_hz,
            center_spect_nm: m.center_spect_nm,
            jsd_marginal_fwhm_nm: m.jsd_marginal_fwhm_nm,
            correlation_width_nm: None,
            brightness_coeff: m.brightness_coeff,
            bucket_step_nm: crate::detection::DEFAULT_BUCKET_STEP_NM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    /// Arm-specific default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<f64>,
    pub dark_prob_per_gate: f64,
    pub dead_time_gates: u32,
    pub afterpulse_prob: f64,
}

impl DetectorSection {
    fn model(&self, default_efficiency: f64) -> DetectorModel {
        DetectorModel {
            efficiency: self.efficiency.unwrap_or(default_efficiency),
            dark_prob_per_gate: self.dark_prob_per_gate,
            dead_time_gates: self.dead_time_gates,
            afterpulse_prob: self.afterpulse_prob,
        }
    }
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectionConfig::default().spect;
        Self {
            efficiency: None,
            dark_prob_per_gate: d.dark_prob_per_gate,
            dead_time_gates: d.dead_time_gates,
            afterpulse_prob: d.afterpulse_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub center_nm: f64,
    pub fwhm_nm: f64,
    pub shape: String,
    pub peak_transmission: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        let f = FilterProfile::default();
        Self {
            center_nm: f.center_nm,
            fwhm_nm: f.fwhm_nm,
            shape: f.shape.name().to_string(),
            peak_transmission: f.peak_transmission,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub start_nm: f64,
    pub step_nm: f64,
    pub n_bins: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = DetectionConfig::default().spect_grid;
        Self {
            start_nm: g.start_nm,
            step_nm: g.step_nm,
            n_bins: g.n_bins,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSection {
    pub spect: DetectorSection,
    pub bucket: DetectorSection,
    pub filter: FilterSection,
    /// Spectrometer pixel grid.
    pub grid: GridSection,
    pub shift_gates: u32,
}

impl Default for DetectionSection {
    fn default() -> Self {
        let d = DetectionConfig::default();
        Self {
            spect: DetectorSection::default(),
            bucket: DetectorSection::default(),
            filter: FilterSection::default(),
            grid: GridSection::default(),
            shift_gates: d.shift_gates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub sg_window: usize,
    pub sg_order: usize,
    /// Lowest power density (mW/mm²) included in the CAR decay fit.
    pub tail_start: f64,
    pub car_min_threshold: f64,
    pub separations_nm: Vec<f64>,
    pub noise_fractions: Vec<f64>,
    pub peak_fwhm_nm: f64,
    /// Background mixed into the resolving-power sweep.
    pub noise_model: String,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            sg_window: 11,
            sg_order: 3,
            tail_start: 2.0,
            car_min_threshold: 6.5,
            separations_nm: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            noise_fractions: (0..=10).map(|k| k as f64 * 0.05).collect(),
            peak_fwhm_nm: 2.8,
            noise_model: "colored".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub n_gates: u64,
    /// Pump power densities in mW/mm².
    pub power_densities: Vec<f64>,
    pub source: SourceSection,
    pub detection: DetectionSection,
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_gates: 10_000_000,
            power_densities: vec![0.1, 0.2, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 31.58, 50.0, 100.0],
            source: SourceSection::default(),
            detection: DetectionSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Parses, validates and resolves a TOML configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        Error::Parse {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    cfg.validate()?;
    cfg.resolve();
    Ok(cfg)
}

fn check(ok: bool, key: &str, constraint: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::validation(key, constraint))
    }
}

impl RunConfig {
    /// Fills derived defaults in place.
    pub fn resolve(&mut self) {
        if self.source.correlation_width_nm.is_none() {
            self.source.correlation_width_nm =
                Some(default_correlation_width(&self.pump(), self.source.center_spect_nm));
        }
        let defaults = DetectionConfig::default();
        self.detection.spect.efficiency.get_or_insert(defaults.spect.efficiency);
        self.detection.bucket.efficiency.get_or_insert(defaults.bucket.efficiency);
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        check(self.n_gates >= 1, "n_gates", "at least 1")?;
        for p in &self.power_densities {
            check(p.is_finite() && *p >= 0.0, "power_densities", "power density ≥ 0")?;
        }

        let s = &self.source;
        check(s.lambda_p_nm > 0.0, "source.lambda_p_nm", "must be positive")?;
        check(s.pump_bandwidth_fwhm_nm >= 0.0, "source.pump_bandwidth_fwhm_nm", "must be ≥ 0")?;
        check(s.rep_rate_hz > 0.0, "source.rep_rate_hz", "must be positive")?;
        check(
            s.center_spect_nm > s.lambda_p_nm,
            "source.center_spect_nm",
            "must exceed the pump wavelength",
        )?;
        check(s.jsd_marginal_fwhm_nm > 0.0, "source.jsd_marginal_fwhm_nm", "must be positive")?;
        if let Some(w) = s.correlation_width_nm {
            check(w >= 0.0, "source.correlation_width_nm", "must be ≥ 0")?;
        }
        check(s.brightness_coeff >= 0.0, "source.brightness_coeff", "must be ≥ 0")?;
        check(s.bucket_step_nm > 0.0, "source.bucket_step_nm", "must be positive")?;

        let g = &self.detection.grid;
        check(g.step_nm > 0.0, "detection.grid.step_nm", "must be positive")?;
        check(g.n_bins >= 2, "detection.grid.n_bins", "at least 2")?;
        check(
            g.start_nm - 0.5 * g.step_nm > s.lambda_p_nm,
            "detection.grid.start_nm",
            "grid must lie above the pump wavelength",
        )?;
        FilterShapeRegistry::default()
            .get(&self.detection.filter.shape)
            .map_err(|e| Error::validation("detection.filter.shape", e.to_string()))?;
        self.detection_config()?.validate()?;

        let a = &self.analysis;
        check(a.sg_window % 2 == 1, "analysis.sg_window", "window must be odd")?;
        check(
            a.sg_window >= a.sg_order + 2,
            "analysis.sg_window",
            "window must be at least sg_order + 2",
        )?;
        check(a.sg_window <= g.n_bins, "analysis.sg_window", "window must not exceed the pixel count")?;
        check(a.tail_start >= 0.0, "analysis.tail_start", "must be ≥ 0")?;
        check(a.car_min_threshold > 0.0, "analysis.car_min_threshold", "must be positive")?;
        for d in &a.separations_nm {
            check(
                *d > 0.0 && *d < g.step_nm * g.n_bins as f64,
                "analysis.separations_nm",
                "separation in (0, grid span)",
            )?;
        }
        for n in &a.noise_fractions {
            check((0.0..=1.0).contains(n), "analysis.noise_fractions", "fraction in [0,1]")?;
        }
        check(a.peak_fwhm_nm > 0.0, "analysis.peak_fwhm_nm", "must be positive")?;
        NoiseRegistry::default()
            .get(&a.noise_model)
            .map_err(|e| Error::validation("analysis.noise_model", e.to_string()))?;
        Ok(())
    }

    pub fn pump(&self) -> PumpSpec {
        PumpSpec {
            lambda_p_nm: self.source.lambda_p_nm,
            bandwidth_fwhm_nm: self.source.pump_bandwidth_fwhm_nm,
            rep_rate_hz: self.source.rep_rate_hz,
        }
    }

    pub fn source_model(&self) -> SourceModel {
        let pump = self.pump();
        SourceModel {
            pump,
            center_spect_nm: self.source.center_spect_nm,
            jsd_marginal_fwhm_nm: self.source.jsd_marginal_fwhm_nm,
            correlation_width_nm: self
                .source
                .correlation_width_nm
                .unwrap_or_else(|| default_correlation_width(&pump, self.source.center_spect_nm)),
            brightness_coeff: self.source.brightness_coeff,
        }
    }

    pub fn spect_grid(&self) -> Result<WavelengthGrid> {
        let g = &self.detection.grid;
        WavelengthGrid::new(g.start_nm, g.step_nm, g.n_bins)
    }

    pub fn detection_config(&self) -> Result<DetectionConfig> {
        let d = &self.detection;
        let defaults = DetectionConfig::default();
        let shape = FilterShapeRegistry::default().get(&d.filter.shape)?;
        Ok(DetectionConfig {
            bucket: d.bucket.model(defaults.bucket.efficiency),
            spect: d.spect.model(defaults.spect.efficiency),
            filter: FilterProfile {
                center_nm: d.filter.center_nm,
                fwhm_nm: d.filter.fwhm_nm,
                shape,
                peak_transmission: d.filter.peak_transmission,
            },
            spect_grid: self.spect_grid()?,
            shift_gates: d.shift_gates,
        })
    }

    pub fn experiment(&self) -> Result<Experiment> {
        Experiment::with_bucket_step(self.source_model(), self.detection_config()?, self.source.bucket_step_nm)
    }

    pub fn noise_model(&self) -> Result<std::sync::Arc<dyn NoiseModel>> {
        NoiseRegistry::default().get(&self.analysis.noise_model)
    }

    pub fn fit_settings(&self) -> FitSettings {
        FitSettings {
            pick_window: self.analysis.sg_window,
            pick_order: self.analysis.sg_order,
            ..FitSettings::default()
        }
    }
}
