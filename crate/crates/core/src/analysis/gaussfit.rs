//! Sum-of-Gaussians fits with a shared constant offset,
//! `d + Σ a·exp(−(x−x0)²/(2σ²))`, by damped Gauss-Newton (Levenberg-Marquardt).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::savgol::savgol_smooth;
use crate::spectral::{Spectrum, FWHM_PER_SIGMA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub amplitude: f64,
    pub center_nm: f64,
    pub sigma_nm: f64,
}

impl Peak {
    pub fn fwhm_nm(&self) -> f64 {
        FWHM_PER_SIGMA * self.sigma_nm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub offset: f64,
    pub peaks: Vec<Peak>,
}

impl GaussianParams {
    fn to_vec(&self) -> Vec<f64> {
        let mut p = vec![self.offset];
        for pk in &self.peaks {
            p.extend([pk.amplitude, pk.center_nm, pk.sigma_nm]);
        }
        p
    }

    fn from_slice(p: &[f64]) -> Self {
        Self {
            offset: p[0],
            peaks: p[1..]
                .chunks(3)
                .map(|c| Peak {
                    amplitude: c[0],
                    center_nm: c[1],
                    sigma_nm: c[2],
                })
                .collect(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        model(&self.to_vec(), x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub max_iterations: usize,
    pub rel_cost_tol: f64,
    pub step_tol: f64,
    pub initial_damping: f64,
    /// Savitzky-Golay window used for peak picking.
    pub pick_window: usize,
    pub pick_order: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_cost_tol: 1e-10,
            step_tol: 1e-12,
            initial_damping: 1e-3,
            pick_window: 11,
            pick_order: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFitResult {
    pub offset_d: f64,
    /// Sorted by centre.
    pub peaks: Vec<Peak>,
    /// `√Σ(model − values)²`.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Cost `½Σr²` after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

impl GaussianFitResult {
    pub fn params(&self) -> GaussianParams {
        GaussianParams {
            offset: self.offset_d,
            peaks: self.peaks.clone(),
        }
    }
}

#[inline]
fn model(p: &[f64], x: f64) -> f64 {
    let mut y = p[0];
    for c in p[1..].chunks(3) {
        let z = (x - c[1]) / c[2];
        y += c[0] * (-0.5 * z * z).exp();
    }
    y
}

/// Analytic partial derivatives of the model at `x`, written into `row`.
#[inline]
pub(crate) fn gradient(p: &[f64], x: f64, row: &mut [f64]) {
    row[0] = 1.0;
    for (k, c) in p[1..].chunks(3).enumerate() {
        let (a, x0, s) = (c[0], c[1], c[2]);
        let u = x - x0;
        let e = (-0.5 * u * u / (s * s)).exp();
        row[1 + 3 * k] = e;
        row[2 + 3 * k] = a * e * u / (s * s);
        row[3 + 3 * k] = a * e * u * u / (s * s * s);
    }
}

/// Partials of the model with respect to the parameters, for testing.
pub fn model_gradient(params: &GaussianParams, x: f64) -> Vec<f64> {
    let p = params.to_vec();
    let mut row = vec![0.0; p.len()];
    gradient(&p, x, &mut row);
    row
}

/// Amplitudes non-negative; centres on the grid; widths positive and no
/// wider than the grid.
fn feasible(p: &[f64], lo: f64, hi: f64) -> bool {
    p.iter().all(|v| v.is_finite())
        && p[1..]
            .chunks(3)
            .all(|c| c[0] >= 0.0 && c[1] >= lo && c[1] <= hi && c[2] > 0.0 && c[2] <= hi - lo)
}

fn cost(p: &[f64], xs: &[f64], ys: &[f64]) -> f64 {
    0.5 * xs.iter().zip(ys).map(|(&x, &y)| (model(p, x) - y).powi(2)).sum::<f64>()
}

/// Fits `n_peaks` Gaussians plus a shared offset to `s`.
pub fn fit_gaussians(
    s: &Spectrum,
    n_peaks: usize,
    init: Option<&GaussianParams>,
    settings: &FitSettings,
) -> Result<GaussianFitResult> {
    if !(n_peaks == 1 || n_peaks == 2) {
        return Err(Error::InvalidParameter(format!("n_peaks must be 1 or 2, got {n_peaks}")));
    }
    let n = s.grid().n_bins;
    if n < 4 * n_peaks + 1 {
        return Err(Error::InvalidParameter(format!(
            "{n} bins are too few for {n_peaks} peaks"
        )));
    }
    let start = match init {
        Some(p) => {
            if p.peaks.len() != n_peaks {
                return Err(Error::Arity {
                    expected: n_peaks,
                    got: p.peaks.len(),
                });
            }
            let g = s.grid();
            if p.peaks.iter().any(|pk| !(pk.center_nm >= g.lower_edge() && pk.center_nm <= g.upper_edge())) {
                return Err(Error::InvalidParameter("initial centre outside the grid".into()));
            }
            split_coincident(p.clone(), g.step_nm)
        }
        None => initial_guess(s, n_peaks, settings)?,
    };
    Ok(levenberg_marquardt(s, start, settings))
}

fn split_coincident(mut p: GaussianParams, step: f64) -> GaussianParams {
    if p.peaks.len() == 2 && p.peaks[0].center_nm == p.peaks[1].center_nm {
        p.peaks[0].center_nm -= step;
        p.peaks[1].center_nm += step;
    }
    p
}

fn levenberg_marquardt(s: &Spectrum, start: GaussianParams, settings: &FitSettings) -> GaussianFitResult {
    let xs: Vec<f64> = s.grid().centers().collect();
    let ys = s.values();
    let m = xs.len();
    let (lo, hi) = (s.grid().lower_edge(), s.grid().upper_edge());
    let mut p = start.to_vec();
    let np = p.len();
    let mut c = cost(&p, &xs, ys);
    let mut history = vec![c];
    let mut lambda = settings.initial_damping;
    let mut converged = c == 0.0;
    let mut iterations = 0;
    let mut row = vec![0.0; np];
    let mut need_jacobian = true;
    let mut jtj = DMatrix::<f64>::zeros(np, np);
    let mut jtr = DVector::<f64>::zeros(np);

    while !converged && iterations < settings.max_iterations {
        iterations += 1;
        if need_jacobian {
            jtj.fill(0.0);
            jtr.fill(0.0);
            for i in 0..m {
                gradient(&p, xs[i], &mut row);
                let r = model(&p, xs[i]) - ys[i];
                for a in 0..np {
                    jtr[a] += row[a] * r;
                    for b in a..np {
                        jtj[(a, b)] += row[a] * row[b];
                    }
                }
            }
            for a in 0..np {
                for b in 0..a {
                    jtj[(a, b)] = jtj[(b, a)];
                }
            }
            need_jacobian = false;
        }
        let mut lhs = jtj.clone();
        for a in 0..np {
            lhs[(a, a)] += lambda * jtj[(a, a)].max(1e-300);
        }
        let step = match lhs.cholesky() {
            Some(ch) => ch.solve(&(-&jtr)),
            None => {
                lambda *= 10.0;
                continue;
            }
        };
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let step_norm = step.norm();
        let trial_cost = if feasible(&trial, lo, hi) {
            cost(&trial, &xs, ys)
        } else {
            f64::INFINITY
        };
        if trial_cost < c {
            let rel = (c - trial_cost) / c;
            p = trial;
            c = trial_cost;
            history.push(c);
            lambda = (lambda * 0.1).max(1e-15);
            need_jacobian = true;
            if c == 0.0 || rel < settings.rel_cost_tol || step_norm < settings.step_tol {
                converged = true;
            }
        } else {
            lambda *= 10.0;
            if step_norm < settings.step_tol || lambda > 1e20 {
                // no representable improvement left
                converged = true;
            }
        }
    }

    let mut params = GaussianParams::from_slice(&p);
    params
        .peaks
        .sort_by(|a, b| a.center_nm.total_cmp(&b.center_nm));
    GaussianFitResult {
        offset_d: params.offset,
        peaks: params.peaks,
        residual_norm: (2.0 * c).sqrt(),
        converged,
        iterations,
        cost_history: history,
    }
}

/// Half-maximum crossings of `v` above `base` around bin `i`, as distances
/// (left, right) in bins; `None` on a side where the level is never reached.
fn half_widths(v: &[f64], i: usize, base: f64) -> (Option<f64>, Option<f64>) {
    let half = base + 0.5 * (v[i] - base);
    let mut left = None;
    let mut j = i;
    while j > 0 {
        if v[j - 1] < half {
            left = Some((i - j) as f64 + (v[j] - half) / (v[j] - v[j - 1]));
            break;
        }
        j -= 1;
    }
    let mut right = None;
    let mut k = i;
    while k + 1 < v.len() {
        if v[k + 1] < half {
            right = Some((k - i) as f64 + (v[k] - half) / (v[k] - v[k + 1]));
            break;
        }
        k += 1;
    }
    (left, right)
}

/// Peak-picking start: local maxima of the smoothed spectrum, tallest first.
/// A single maximum for two peaks places the centres at ±FWHM/2 around it.
pub fn initial_guess(s: &Spectrum, n_peaks: usize, settings: &FitSettings) -> Result<GaussianParams> {
    let n = s.grid().n_bins;
    let step = s.grid().step_nm;
    let mut window = settings.pick_window.min(if n % 2 == 1 { n } else { n - 1 });
    if window % 2 == 0 {
        window -= 1;
    }
    let smoothed = if window >= settings.pick_order + 2 {
        savgol_smooth(s, window, settings.pick_order)?.into_values()
    } else {
        s.values().to_vec()
    };
    let v = &smoothed;
    let base = s.values().iter().cloned().fold(f64::INFINITY, f64::min);

    let top = v.iter().cloned().fold(f64::MIN, f64::max);
    // maxima below 1% of the tallest are ripple, not peaks
    let floor = base + 0.01 * (top - base);
    let mut maxima: Vec<usize> = (1..n - 1)
        .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1] && v[i] > floor)
        .collect();
    if maxima.is_empty() {
        let arg = (0..n).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        maxima.push(arg);
    }
    maxima.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));

    let hw_bins = |i: usize| -> f64 {
        match half_widths(v, i, base) {
            (Some(l), Some(r)) => 0.5 * (l + r),
            (Some(w), None) | (None, Some(w)) => w,
            (None, None) => 2.0,
        }
        .max(1.0)
    };
    let x = |i: usize| s.grid().center(i);

    let peaks = if n_peaks == 1 || maxima.len() >= 2 {
        maxima
            .iter()
            .take(n_peaks)
            .map(|&i| {
                // for a pair of maxima, use the outer flank only
                let hw = if n_peaks == 2 {
                    let other = if i == maxima[0] { maxima[1] } else { maxima[0] };
                    let (l, r) = half_widths(v, i, base);
                    if i < other { l } else { r }.unwrap_or_else(|| hw_bins(i)).max(1.0)
                } else {
                    hw_bins(i)
                };
                Peak {
                    amplitude: (v[i] - base).max(f64::MIN_POSITIVE),
                    center_nm: x(i),
                    sigma_nm: 2.0 * hw * step / FWHM_PER_SIGMA,
                }
            })
            .collect()
    } else {
        let i = maxima[0];
        let fwhm = 2.0 * hw_bins(i) * step;
        let a = (0.5 * (v[i] - base)).max(f64::MIN_POSITIVE);
        let sigma = 0.5 * fwhm / FWHM_PER_SIGMA;
        vec![
            Peak {
                amplitude: a,
                center_nm: x(i) - 0.5 * fwhm,
                sigma_nm: sigma,
            },
            Peak {
                amplitude: a,
                center_nm: x(i) + 0.5 * fwhm,
                sigma_nm: sigma,
            },
        ]
    };
    Ok(split_coincident(
        GaussianParams {
            offset: base,
            peaks,
        },
        step,
    ))
}
