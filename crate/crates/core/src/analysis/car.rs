//! Coincidence-to-accidental ratio and its exponential decay with pump power.

use serde::{Deserialize, Serialize};

use crate::detection::CoincidenceData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarPoint {
    pub power_density_mw_mm2: f64,
    pub car: f64,
    pub car_err: f64,
    pub n_cc: u64,
    pub n_acc: u64,
}

impl CarPoint {
    /// Builds a point from raw totals. Fails with [`Error::CarUnbounded`] when
    /// there are no accidentals.
    pub fn from_counts(n_cc: u64, n_acc: u64, power_density_mw_mm2: f64) -> Result<Self> {
        if n_acc == 0 {
            return Err(Error::CarUnbounded { n_cc });
        }
        let (cc, acc) = (n_cc as f64, n_acc as f64);
        let car = cc / acc;
        let car_err = if n_cc == 0 {
            // one-count resolution of an empty numerator
            1.0 / acc
        } else {
            car * (1.0 / cc + 1.0 / acc).sqrt()
        };
        Ok(Self {
            power_density_mw_mm2,
            car,
            car_err,
            n_cc,
            n_acc,
        })
    }
}

pub fn compute_car(data: &CoincidenceData) -> Result<CarPoint> {
    CarPoint::from_counts(data.n_cc(), data.n_acc(), data.power_density_mw_mm2)
}

/// `CAR(P) = A·exp(−P/P0)` fitted on the high-power tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpDecayFit {
    pub a: f64,
    pub p0: f64,
    pub car_min: f64,
    /// Covariance of `(A, P0)`.
    pub covariance: [[f64; 2]; 2],
    pub n_points: usize,
    pub weighted: bool,
}

impl ExpDecayFit {
    pub fn eval(&self, power: f64) -> f64 {
        self.a * (-power / self.p0).exp()
    }
}

/// Least-squares line through `ln CAR` against power for points at or above
/// `tail_start`, weighted by `(car/car_err)²`. Falls back to unweighted
/// regression with residual-scaled covariance when any error is zero.
pub fn fit_exp_decay(points: &[CarPoint], tail_start: f64) -> Result<ExpDecayFit> {
    let tail: Vec<&CarPoint> = points
        .iter()
        .filter(|p| p.power_density_mw_mm2 >= tail_start)
        .collect();
    if tail.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: tail.len(),
        });
    }
    if let Some(p) = tail.iter().find(|p| !(p.car > 0.0 && p.car.is_finite())) {
        return Err(Error::NonPositiveCar {
            power: p.power_density_mw_mm2,
            car: p.car,
        });
    }
    let weighted = tail.iter().all(|p| p.car_err > 0.0 && p.car_err.is_finite());
    let w: Vec<f64> = tail
        .iter()
        .map(|p| if weighted { (p.car / p.car_err).powi(2) } else { 1.0 })
        .collect();
    let x: Vec<f64> = tail.iter().map(|p| p.power_density_mw_mm2).collect();
    let y: Vec<f64> = tail.iter().map(|p| p.car.ln()).collect();

    // centred normal equations
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = (0..x.len()).map(|i| w[i] * (x[i] - xm) * (y[i] - ym)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter("tail points share a single power density".into()));
    }
    let b1 = sxy / sxx;
    let b0 = ym - b1 * xm;
    let range = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
    if b1 * range > -1e-9 {
        return Err(Error::NonDecay { slope: b1 });
    }

    let scale = if weighted {
        1.0
    } else {
        let rss: f64 = (0..x.len()).map(|i| (y[i] - b0 - b1 * x[i]).powi(2)).sum();
        rss / (x.len() - 2) as f64
    };
    // covariance of (b0, b1)
    let var_b1 = scale / sxx;
    let var_b0 = scale * (1.0 / sw + xm * xm / sxx);
    let cov_01 = -scale * xm / sxx;

    let a = b0.exp();
    let p0 = -1.0 / b1;
    let (ja, jp) = (a, 1.0 / (b1 * b1));
    Ok(ExpDecayFit {
        a,
        p0,
        car_min: a * (-1.0f64).exp(),
        covariance: [
            [ja * ja * var_b0, ja * jp * cov_01],
            [ja * jp * cov_01, jp * jp * var_b1],
        ],
        n_points: tail.len(),
        weighted,
    })
}
