//! End-to-end workflows. Each returns its files as in-memory text so that
//! callers decide where they go.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::car::{fit_exp_decay, CarPoint};
use crate::analysis::gaussfit::{fit_gaussians, FitSettings};
use crate::analysis::ghost::{reconstruct_ghost, GhostOptions};
use crate::analysis::resolve::{resolving_power, sweep_resolving_power_with};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::noise::{classify_noise, noise_report, noise_spectrum};
use crate::source::{mean_pairs_per_pulse, source_marginal, Arm};
use crate::spectral::{empirical_fwhm, gaussian_density, Spectrum};

/// A named output file.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

impl OutputFile {
    fn new(name: &str, contents: String) -> Self {
        Self {
            name: name.to_string(),
            contents,
        }
    }

    fn json(name: &str, value: &impl Serialize) -> Result<Self> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        Ok(Self::new(name, text))
    }
}

fn fmt_ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "inf".to_string(), |x| x.to_string())
}

/// CAR against pump power, with the exponential tail fit.
///
/// Files: `car_sweep.csv`, `car_sweep.json`.
pub fn car_sweep(cfg: &RunConfig) -> Result<Vec<OutputFile>> {
    let exp = cfg.experiment()?;
    let model = cfg.source_model();
    let mut csv = String::from("power_density_mw_mm2,mean_pairs_per_pulse,n_cc,n_acc,car,car_err\n");
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for &p in &cfg.power_densities {
        let mu = mean_pairs_per_pulse(p, &model)?;
        let data = exp.run(p, cfg.n_gates, cfg.seed)?;
        let class = classify_noise(&data, cfg.analysis.car_min_threshold);
        let point = CarPoint::from_counts(data.n_cc(), data.n_acc(), p).ok();
        let _ = writeln!(
            csv,
            "{p},{mu},{},{},{},{}",
            data.n_cc(),
            data.n_acc(),
            fmt_ratio(point.map(|c| c.car)),
            fmt_ratio(point.map(|c| c.car_err)),
        );
        rows.push(json!({
            "power_density_mw_mm2": p,
            "mean_pairs_per_pulse": mu,
            "n_cc": data.n_cc(),
            "n_acc": data.n_acc(),
            "car": point.map(|c| c.car),
            "car_err": point.map(|c| c.car_err),
            "regime": class.regime,
            "n_white": class.n_white,
            "n_colored": class.n_colored,
            "class_tally": data.class_tally,
        }));
        if let Some(pt) = point {
            points.push(pt);
        }
    }
    let (fit, diagnostic) = match fit_exp_decay(&points, cfg.analysis.tail_start) {
        Ok(f) => (Some(f), None),
        Err(e @ (Error::InsufficientPoints { .. } | Error::NonDecay { .. } | Error::NonPositiveCar { .. })) => {
            (None, Some(format!("fit skipped: {e}")))
        }
        Err(e) => return Err(e),
    };
    let report = json!({
        "config": cfg,
        "points": rows,
        "fit": fit,
        "fit_diagnostic": diagnostic,
    });
    Ok(vec![
        OutputFile::new("car_sweep.csv", csv),
        OutputFile::json("car_sweep.json", &report)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhostFlags {
    pub power_density_mw_mm2: f64,
    pub subtract: bool,
    pub map_axis: bool,
}

/// Ghost spectrum at one pump power.
///
/// Files: `ghost.csv`, `ghost.json`.
pub fn ghost(cfg: &RunConfig, flags: GhostFlags) -> Result<Vec<OutputFile>> {
    let exp = cfg.experiment()?;
    let data = exp.run(flags.power_density_mw_mm2, cfg.n_gates, cfg.seed)?;
    let opts = GhostOptions {
        subtract_accidentals: flags.subtract,
        smooth: Some((cfg.analysis.sg_window, cfg.analysis.sg_order)),
        map_to_bucket_arm: flags.map_axis,
        lambda_p_nm: cfg.source.lambda_p_nm,
    };
    let spectrum = reconstruct_ghost(&data, &opts)?;
    let class = classify_noise(&data, cfg.analysis.car_min_threshold);
    let fwhm = empirical_fwhm(&spectrum).ok();
    let sidecar = json!({
        "config": cfg,
        "power_density_mw_mm2": flags.power_density_mw_mm2,
        "subtract_accidentals": flags.subtract,
        "map_to_bucket_arm": flags.map_axis,
        "n_cc": data.n_cc(),
        "n_acc": data.n_acc(),
        "car": class.car,
        "car_err": class.car_err,
        "regime": class.regime,
        "n_white": class.n_white,
        "n_colored": class.n_colored,
        "empirical_fwhm_nm": fwhm,
        "peak_nm": spectrum.grid().center(spectrum.argmax()),
    });
    Ok(vec![
        OutputFile::new("ghost.csv", spectrum.to_csv()),
        OutputFile::json("ghost.json", &sidecar)?,
    ])
}

/// Accidental-window spectrum and regime classification at one pump power.
///
/// Files: `noise_spectrum.csv` (absent when there are no accidentals),
/// `noise_report.json`, `coincidences.json`, optionally `jsd.csv`.
pub fn noise(cfg: &RunConfig, power_density_mw_mm2: f64, export_jsd: bool) -> Result<Vec<OutputFile>> {
    let exp = cfg.experiment()?;
    let data = exp.run(power_density_mw_mm2, cfg.n_gates, cfg.seed)?;
    let marginal = source_marginal(exp.jsd(), Arm::Spect)?;
    let (w, o) = (cfg.analysis.sg_window, cfg.analysis.sg_order);
    let report = noise_report(&data, &marginal, cfg.analysis.car_min_threshold, w, o)?;
    let mut files = Vec::new();
    match noise_spectrum(&data, w, o) {
        Ok(s) => files.push(OutputFile::new("noise_spectrum.csv", s.to_csv())),
        Err(Error::EmptyData(_)) => {}
        Err(e) => return Err(e),
    }
    files.push(OutputFile::json(
        "noise_report.json",
        &json!({
            "config": cfg,
            "power_density_mw_mm2": power_density_mw_mm2,
            "car": report.car,
            "car_err": report.car_err,
            "regime": report.regime,
            "n_white": report.n_white,
            "n_colored": report.n_colored,
            "flatness": report.flatness,
            "source_distance_l1": report.source_distance_l1,
        }),
    )?);
    files.push(OutputFile::new("coincidences.json", data.to_json()? + "\n"));
    if export_jsd {
        files.push(OutputFile::new("jsd.csv", exp.jsd().to_csv()));
    }
    Ok(files)
}

/// Resolving-power map of two-peak ghosts under added noise.
///
/// Files: `rpmap.csv`, `rpmap.json`.
pub fn resolve_sweep(cfg: &RunConfig) -> Result<Vec<OutputFile>> {
    let a = &cfg.analysis;
    let grid = cfg.spect_grid()?;
    let source = gaussian_density(grid, cfg.source.center_spect_nm, cfg.source.jsd_marginal_fwhm_nm)?;
    let settings = cfg.fit_settings();
    let model = cfg.noise_model()?;
    let map = sweep_resolving_power_with(
        model.as_ref(),
        &a.separations_nm,
        &a.noise_fractions,
        a.peak_fwhm_nm,
        cfg.source.center_spect_nm,
        &source,
        &settings,
    )?;
    let crossings: Vec<Value> = a
        .separations_nm
        .iter()
        .enumerate()
        .map(|(i, d)| json!({ "separation_nm": d, "n_star": map.crossing(i) }))
        .collect();
    let summary = json!({
        "config": cfg,
        "noise_model": model.name(),
        "crossings": crossings,
        "non_converged": map.non_converged,
        "fitter": settings,
    });
    Ok(vec![
        OutputFile::new("rpmap.csv", map.to_csv()),
        OutputFile::json("rpmap.json", &summary)?,
    ])
}

/// Fits a spectrum read from CSV.
///
/// Files: `fit.json`.
pub fn fit(spectrum: &Spectrum, n_peaks: usize, settings: &FitSettings) -> Result<Vec<OutputFile>> {
    let result = fit_gaussians(spectrum, n_peaks, None, settings)?;
    let rp = if n_peaks == 2 { resolving_power(&result).ok() } else { None };
    let report = json!({
        "n_peaks": n_peaks,
        "offset_d": result.offset_d,
        "peaks": result.peaks,
        "residual_norm": result.residual_norm,
        "converged": result.converged,
        "iterations": result.iterations,
        "resolving_power": rp,
        "fitter": settings,
    });
    Ok(vec![OutputFile::json("fit.json", &report)?])
}
