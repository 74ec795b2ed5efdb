//! Spectra on the fixed 47-sample wavelength grid and the three operations
//! light transport is built from: scaling, addition and the element-wise
//! (Hadamard) product.

use std::ops::Index;

use crate::error::{Error, Result};

/// Number of wavelength samples.
pub const N_SAMPLES: usize = 47;
pub const LAMBDA_MIN: f64 = 368.0;
pub const LAMBDA_MAX: f64 = 830.0;
/// Grid spacing in nm; both endpoints lie on the grid.
pub const LAMBDA_STEP: f64 = (LAMBDA_MAX - LAMBDA_MIN) / (N_SAMPLES - 1) as f64;

/// Dataset spectra are zero outside this band.
pub const VISIBLE_MIN: f64 = 400.0;
pub const VISIBLE_MAX: f64 = 700.0;

/// Reflectances may exceed 1 by at most this much.
pub const REFLECTANCE_SLACK: f64 = 1e-9;

#[inline]
pub fn wavelength(i: usize) -> f64 {
    if i == N_SAMPLES - 1 {
        LAMBDA_MAX
    } else {
        LAMBDA_MIN + LAMBDA_STEP * i as f64
    }
}

pub fn wavelengths() -> [f64; N_SAMPLES] {
    std::array::from_fn(wavelength)
}

#[inline]
pub fn in_visible_band(i: usize) -> bool {
    let w = wavelength(i);
    (VISIBLE_MIN..=VISIBLE_MAX).contains(&w)
}

/// A non-negative spectrum sampled on the canonical grid.
#[derive(Clone, PartialEq, Debug)]
pub struct SpectralCurve([f64; N_SAMPLES]);

impl SpectralCurve {
    pub fn zero() -> Self {
        SpectralCurve([0.0; N_SAMPLES])
    }

    pub fn flat(value: f64) -> Result<Self> {
        Self::new([value; N_SAMPLES])
    }

    pub fn new(values: [f64; N_SAMPLES]) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Domain(format!(
                "spectral sample {i} ({:.2} nm) is {v}; spectra must be finite and non-negative",
                wavelength(i)
            )));
        }
        Ok(SpectralCurve(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; N_SAMPLES] = values.try_into().map_err(|_| Error::Dimension {
            expected: N_SAMPLES,
            got: values.len(),
        })?;
        Self::new(arr)
    }

    /// Build from a function of wavelength in nm.
    pub fn from_fn(f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(std::array::from_fn(|i| f(wavelength(i))))
    }

    pub fn values(&self) -> &[f64; N_SAMPLES] {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> [f64; N_SAMPLES] {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn is_reflectance(&self) -> bool {
        self.0.iter().all(|&v| v <= 1.0 + REFLECTANCE_SLACK)
    }

    pub fn check_reflectance(&self) -> Result<()> {
        match self.0.iter().position(|&v| v > 1.0 + REFLECTANCE_SLACK) {
            None => Ok(()),
            Some(i) => Err(Error::Domain(format!(
                "reflectance sample {i} is {} > 1",
                self.0[i]
            ))),
        }
    }

    pub fn scale(&self, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!(
                "scale factor must be finite and non-negative, got {alpha}"
            )));
        }
        Ok(SpectralCurve(self.0.map(|v| alpha * v)))
    }

    pub fn add(&self, other: &SpectralCurve) -> SpectralCurve {
        SpectralCurve(std::array::from_fn(|i| self.0[i] + other.0[i]))
    }

    pub fn hadamard(&self, other: &SpectralCurve) -> SpectralCurve {
        SpectralCurve(std::array::from_fn(|i| self.0[i] * other.0[i]))
    }

    /// Set every sample outside 400-700 nm to zero.
    pub fn zero_outside_visible(mut self) -> Self {
        for i in 0..N_SAMPLES {
            if !in_visible_band(i) {
                self.0[i] = 0.0;
            }
        }
        self
    }

    pub fn clamp_unit(mut self) -> Self {
        for v in &mut self.0 {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Rescale so the largest sample is exactly 1. `None` for the zero curve.
    pub fn unit_peak(&self) -> Option<Self> {
        let m = self.max();
        if m <= 0.0 {
            return None;
        }
        let mut out = self.0.map(|v| v / m);
        // Division can leave the peak one ulp away from 1.
        for (o, v) in out.iter_mut().zip(self.0.iter()) {
            if *v == m {
                *o = 1.0;
            }
        }
        Some(SpectralCurve(out))
    }

    pub fn dot(&self, other: &SpectralCurve) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Cosine similarity; 0 when either curve is zero.
    pub fn cosine(&self, other: &SpectralCurve) -> f64 {
        let d = self.norm() * other.norm();
        if d == 0.0 {
            0.0
        } else {
            self.dot(other) / d
        }
    }

    /// Sum of absolute differences between neighbouring samples.
    pub fn total_variation(&self) -> f64 {
        self.0.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}

impl Index<usize> for SpectralCurve {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Linearly interpolate samples given on `src_grid` (nm, strictly
/// increasing) onto the canonical grid. Values beyond the source range take
/// the nearest endpoint value. With `zero_outside_visible` the result is
/// zeroed outside 400-700 nm.
pub fn resample(
    values: &[f64],
    src_grid: &[f64],
    zero_outside_visible: bool,
) -> Result<SpectralCurve> {
    if values.len() != src_grid.len() {
        return Err(Error::Dimension {
            expected: src_grid.len(),
            got: values.len(),
        });
    }
    if src_grid.len() < 2 {
        return Err(Error::format(
            "wavelength grid",
            format!("need at least 2 samples, got {}", src_grid.len()),
        ));
    }
    if let Some(i) = src_grid.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::format(
            format!("wavelength column {}", i + 1),
            format!(
                "wavelengths must be strictly increasing ({} then {})",
                src_grid[i],
                src_grid[i + 1]
            ),
        ));
    }
    let last = src_grid.len() - 1;
    let out = std::array::from_fn(|i| {
        let w = wavelength(i);
        if w <= src_grid[0] {
            return values[0];
        }
        if w >= src_grid[last] {
            return values[last];
        }
        // First source sample strictly greater than w.
        let hi = src_grid.partition_point(|&g| g <= w);
        let lo = hi - 1;
        if src_grid[lo] == w {
            return values[lo];
        }
        let t = (w - src_grid[lo]) / (src_grid[hi] - src_grid[lo]);
        values[lo] + t * (values[hi] - values[lo])
    });
    let curve = SpectralCurve::new(out)?;
    Ok(if zero_outside_visible {
        curve.zero_outside_visible()
    } else {
        curve
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> SpectralCurve {
        SpectralCurve::from_fn(|w| (w - 360.0) / 500.0).unwrap()
    }

    #[test]
    fn grid_endpoints_and_step() {
        let w = wavelengths();
        assert_eq!(w[0], 368.0);
        assert_eq!(w[46], 830.0);
        assert!((LAMBDA_STEP - 10.043478260869565).abs() < 1e-12);
        let visible: Vec<usize> = (0..N_SAMPLES).filter(|&i| in_visible_band(i)).collect();
        assert_eq!(visible.first(), Some(&4));
        assert_eq!(visible.last(), Some(&33));
    }

    #[test]
    fn scale_examples() {
        let s = ramp();
        assert!(s.scale(0.0).unwrap().is_zero());
        assert_eq!(s.scale(1.0).unwrap(), s);
        let half = SpectralCurve::flat(0.5).unwrap();
        assert_eq!(half.scale(2.0).unwrap(), SpectralCurve::flat(1.0).unwrap());
        assert!(matches!(s.scale(-1.0), Err(Error::Domain(_))));
        assert!(s.scale(f64::NAN).is_err());
    }

    #[test]
    fn add_examples() {
        let s = ramp();
        assert_eq!(s.add(&SpectralCurve::zero()), s);
        let a = SpectralCurve::flat(0.3).unwrap();
        let b = SpectralCurve::flat(0.2).unwrap();
        assert_eq!(a.add(&b), SpectralCurve::flat(0.5).unwrap());
        assert_eq!(s.add(&a), a.add(&s));
    }

    #[test]
    fn hadamard_examples() {
        let s = ramp();
        assert_eq!(s.hadamard(&SpectralCurve::flat(1.0).unwrap()), s);
        assert!(s.hadamard(&SpectralCurve::zero()).is_zero());
        let r = SpectralCurve::flat(0.5).unwrap();
        let l = SpectralCurve::flat(2.0).unwrap();
        assert_eq!(r.hadamard(&l), SpectralCurve::flat(1.0).unwrap());
    }

    #[test]
    fn rejects_negative_and_nan() {
        let mut v = [0.1; N_SAMPLES];
        v[3] = -1e-3;
        assert!(SpectralCurve::new(v).is_err());
        v[3] = f64::INFINITY;
        assert!(SpectralCurve::new(v).is_err());
        assert!(SpectralCurve::from_slice(&[0.0; 10]).is_err());
    }

    #[test]
    fn resample_identity_on_canonical_grid() {
        let s = ramp();
        let r = resample(s.as_slice(), &wavelengths(), false).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn resample_constant_zeroes_outside_band() {
        let grid: Vec<f64> = (0..=80).map(|i| 380.0 + 5.0 * i as f64).collect();
        let vals = vec![0.42; grid.len()];
        let r = resample(&vals, &grid, true).unwrap();
        for i in 0..N_SAMPLES {
            let expected = if in_visible_band(i) { 0.42 } else { 0.0 };
            assert_eq!(r[i], expected, "sample {i}");
        }
    }

    #[test]
    fn resample_interpolates_between_brackets() {
        // 10 nm grid 380..780, value = (w/100)^2.
        let grid: Vec<f64> = (0..=40).map(|i| 380.0 + 10.0 * i as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|w| (w / 100.0).powi(2)).collect();
        let r = resample(&vals, &grid, false).unwrap();
        // Grid sample 18 sits at 368 + 18 * 10.0434... = 548.7826 nm,
        // bracketed by 540 and 550.
        let w = wavelength(18);
        assert!((w - 548.782_608_695_652_2).abs() < 1e-9);
        let t = (w - 540.0) / 10.0;
        let expected = 5.4f64.powi(2) + t * (5.5f64.powi(2) - 5.4f64.powi(2));
        assert!((r[18] - expected).abs() < 1e-12);
        // Clamped extrapolation below 380 nm.
        assert_eq!(r[0], vals[0]);
        assert_eq!(r[46], vals[40]);
    }

    #[test]
    fn resample_rejects_non_monotone_grid() {
        let err = resample(&[0.1, 0.2, 0.3], &[400.0, 500.0, 450.0], false).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(resample(&[0.1], &[400.0], false).is_err());
    }

    #[test]
    fn unit_peak_is_exact() {
        let s = ramp().scale(3.7).unwrap();
        assert_eq!(s.unit_peak().unwrap().max(), 1.0);
        assert!(SpectralCurve::zero().unit_peak().is_none());
    }
}
