//! Interference filter on the bucket arm.
//!
//! Filter line shapes are strategies behind [`FilterShape`]; a
//! [`FilterShapeRegistry`] maps configuration names to implementations.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::spectral::FWHM_PER_SIGMA;

/// Relative transmission profile, peak-normalized to 1 at zero offset.
pub trait FilterShape: Send + Sync {
    fn name(&self) -> &'static str;

    /// Transmission at `offset_nm` from the filter centre, in `[0, 1]`.
    fn relative_transmission(&self, offset_nm: f64, fwhm_nm: f64) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianShape;

impl FilterShape for GaussianShape {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    #[inline]
    fn relative_transmission(&self, offset_nm: f64, fwhm_nm: f64) -> f64 {
        let z = offset_nm * FWHM_PER_SIGMA / fwhm_nm;
        (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TophatShape;

impl FilterShape for TophatShape {
    fn name(&self) -> &'static str {
        "tophat"
    }

    #[inline]
    fn relative_transmission(&self, offset_nm: f64, fwhm_nm: f64) -> f64 {
        if offset_nm.abs() <= 0.5 * fwhm_nm {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone)]
pub struct FilterShapeRegistry(BTreeMap<&'static str, Arc<dyn FilterShape>>);

impl FilterShapeRegistry {
    pub fn empty() -> Self {
        Self(BTreeMap::new())
    }

    pub fn register(&mut self, shape: Arc<dyn FilterShape>) {
        self.0.insert(shape.name(), shape);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn FilterShape>> {
        self.0.get(name).cloned().ok_or_else(|| Error::UnknownStrategy {
            kind: "filter shape",
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.0.keys().copied().collect()
    }
}

impl Default for FilterShapeRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(GaussianShape));
        r.register(Arc::new(TophatShape));
        r
    }
}

#[derive(Clone)]
pub struct FilterProfile {
    pub center_nm: f64,
    pub fwhm_nm: f64,
    pub shape: Arc<dyn FilterShape>,
    pub peak_transmission: f64,
}

impl fmt::Debug for FilterProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilterProfile")
            .field("center_nm", &self.center_nm)
            .field("fwhm_nm", &self.fwhm_nm)
            .field("shape", &self.shape.name())
            .field("peak_transmission", &self.peak_transmission)
            .finish()
    }
}

impl Default for FilterProfile {
    fn default() -> Self {
        Self {
            center_nm: 1550.0,
            fwhm_nm: 10.0,
            shape: Arc::new(GaussianShape),
            peak_transmission: 0.9,
        }
    }
}

impl FilterProfile {
    pub fn new(center_nm: f64, fwhm_nm: f64, shape: Arc<dyn FilterShape>, peak_transmission: f64) -> Result<Self> {
        let f = Self {
            center_nm,
            fwhm_nm,
            shape,
            peak_transmission,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm_nm > 0.0) {
            return Err(Error::InvalidParameter(format!("filter fwhm must be positive, got {}", self.fwhm_nm)));
        }
        if !(self.peak_transmission > 0.0 && self.peak_transmission <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "peak transmission must be in (0, 1], got {}",
                self.peak_transmission
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn transmission(&self, lambda_nm: f64) -> f64 {
        self.peak_transmission * self.shape.relative_transmission(lambda_nm - self.center_nm, self.fwhm_nm)
    }
}

/// Transmission of `f` at `lambda_nm`.
pub fn filter_transmission(f: &FilterProfile, lambda_nm: f64) -> f64 {
    f.transmission(lambda_nm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_peak_and_half_max() {
        let f = FilterProfile::default();
        assert_eq!(filter_transmission(&f, 1550.0), 0.9);
        assert!((filter_transmission(&f, 1555.0) - 0.45).abs() < 1e-12);
        assert!((filter_transmission(&f, 1545.0) - 0.45).abs() < 1e-12);
    }

    #[test]
    fn tophat_band() {
        let reg = FilterShapeRegistry::default();
        let f = FilterProfile::new(1550.0, 10.0, reg.get("tophat").unwrap(), 0.9).unwrap();
        assert_eq!(filter_transmission(&f, 1556.0), 0.0);
        assert_eq!(filter_transmission(&f, 1554.9), 0.9);
        assert_eq!(filter_transmission(&f, 1545.0), 0.9);
    }

    #[test]
    fn registry_lookup() {
        let reg = FilterShapeRegistry::default();
        assert_eq!(reg.names(), vec!["gaussian", "tophat"]);
        let err = reg.get("lorentzian").err().unwrap();
        assert!(err.to_string().contains("gaussian, tophat"), "{err}");
    }

    #[test]
    fn invalid_profiles() {
        let g: Arc<dyn FilterShape> = Arc::new(GaussianShape);
        assert!(FilterProfile::new(1550.0, 0.0, g.clone(), 0.9).is_err());
        assert!(FilterProfile::new(1550.0, 10.0, g.clone(), 0.0).is_err());
        assert!(FilterProfile::new(1550.0, 10.0, g, 1.1).is_err());
    }
}
