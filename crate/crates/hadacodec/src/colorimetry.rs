//! Spectrum to colour projections and colour-difference metrics.
//!
//! Two XYZ conventions are used:
//!
//! * radiance: `XYZ = T_cmf s dλ` for emitted or reflected light
//!   ([`spectrum_to_xyz`]);
//! * reflectance: the reflectance is lit by D65 and normalised so that a
//!   perfect white reflector has `Y = 100` ([`xyz_of_reflectance`]).
//!
//! All arithmetic is in linear space; display gamma is applied only by
//! [`linear_to_srgb8`].

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::spectral::{resample, SpectralCurve, LAMBDA_STEP, N_SAMPLES};
use crate::tables;

/// Luminance of a perfect white reflector in the reflectance convention.
pub const Y_MAX: f64 = 100.0;

/// CIE94 graphic-arts weights.
pub const CIE94_K1: f64 = 0.045;
pub const CIE94_K2: f64 = 0.015;

/// IEC 61966-2-1 XYZ (D65, Y=1) to linear sRGB.
pub const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Xyz(pub [f64; 3]);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearRgb(pub [f64; 3]);

/// CIE 1976 L*a*b*.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lab(pub [f64; 3]);

impl Xyz {
    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn scaled(&self, k: f64) -> Xyz {
        Xyz(self.0.map(|v| v * k))
    }

    /// CIE xy chromaticity; `None` for black.
    pub fn chromaticity(&self) -> Option<[f64; 2]> {
        let s: f64 = self.0.iter().sum();
        (s > 0.0).then(|| [self.0[0] / s, self.0[1] / s])
    }

    pub fn from_xy_y(x: f64, y: f64, luminance: f64) -> Xyz {
        Xyz([x / y * luminance, luminance, (1.0 - x - y) / y * luminance])
    }
}

/// Colour matching functions and D65 weights resampled to the canonical grid.
#[derive(Debug)]
pub struct CmfTable {
    /// x-bar, y-bar, z-bar.
    pub cmf: [[f64; N_SAMPLES]; 3],
    /// D65 relative SPD, 100 at 560 nm.
    pub d65: [f64; N_SAMPLES],
    /// D65-weighted reflectance basis `w_C[i] = cmf_C[i] d65[i] dλ / norm`,
    /// scaled so that `w_Y . 1 = Y_MAX`.
    pub weights: [[f64; N_SAMPLES]; 3],
    pub srgb_to_xyz: [[f64; 3]; 3],
}

fn table_grid() -> Vec<f64> {
    (0..tables::TABLE_LEN)
        .map(|i| tables::TABLE_START_NM + tables::TABLE_STEP_NM * i as f64)
        .collect()
}

fn resample_table(values: &[f64]) -> [f64; N_SAMPLES] {
    let grid = table_grid();
    // The bundled tables are finite, non-negative and on a monotone grid.
    resample(values, &grid, false)
        .expect("bundled CIE table resamples")
        .into_inner()
}

impl CmfTable {
    fn build() -> Self {
        let channel = |c: usize| {
            resample_table(
                &tables::CIE1931_2DEG
                    .iter()
                    .map(|r| r[c])
                    .collect::<Vec<_>>(),
            )
        };
        let cmf = [channel(0), channel(1), channel(2)];
        let d65 = resample_table(&tables::D65_SPD);
        let raw: [[f64; N_SAMPLES]; 3] =
            std::array::from_fn(|c| std::array::from_fn(|i| cmf[c][i] * d65[i] * LAMBDA_STEP));
        let norm = raw[1].iter().sum::<f64>() / Y_MAX;
        let weights = raw.map(|row| row.map(|v| v / norm));
        CmfTable {
            cmf,
            d65,
            weights,
            srgb_to_xyz: invert3(&XYZ_TO_SRGB).expect("sRGB matrix is invertible"),
        }
    }
}

pub fn cmf_table() -> &'static CmfTable {
    static TABLE: OnceLock<CmfTable> = OnceLock::new();
    TABLE.get_or_init(CmfTable::build)
}

/// D65 SPD on the grid as a curve (peak-unnormalised, 100 at 560 nm).
pub fn d65_curve() -> SpectralCurve {
    SpectralCurve::new(cmf_table().d65).expect("D65 table is non-negative")
}

/// Radiance-convention tristimulus values, `T_cmf s dλ`.
pub fn spectrum_to_xyz(s: &SpectralCurve) -> Xyz {
    xyz_of_slice(s.as_slice())
}

/// [`spectrum_to_xyz`] on a raw slice (which may hold negative values, e.g.
/// residuals inside a loss).
pub fn xyz_of_slice(s: &[f64]) -> Xyz {
    let t = cmf_table();
    Xyz(std::array::from_fn(|c| {
        t.cmf[c].iter().zip(s).map(|(w, v)| w * v).sum::<f64>() * LAMBDA_STEP
    }))
}

/// Reflectance-convention tristimulus values under D65, `Y(1) = 100`.
pub fn xyz_of_reflectance(r: &SpectralCurve) -> Xyz {
    reflectance_xyz_of_slice(r.as_slice())
}

pub fn reflectance_xyz_of_slice(r: &[f64]) -> Xyz {
    let t = cmf_table();
    Xyz(std::array::from_fn(|c| {
        t.weights[c].iter().zip(r).map(|(w, v)| w * v).sum()
    }))
}

/// XYZ of a perfect white reflector under D65 (`Y = 100`).
pub fn d65_white() -> Xyz {
    static WHITE: OnceLock<Xyz> = OnceLock::new();
    *WHITE.get_or_init(|| {
        let t = cmf_table();
        Xyz(std::array::from_fn(|c| t.weights[c].iter().sum()))
    })
}

fn mat_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

pub(crate) fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let c =
        |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [c(1, 1, 2, 2), -c(0, 1, 2, 2), c(0, 1, 1, 2)],
        [-c(1, 0, 2, 2), c(0, 0, 2, 2), -c(0, 0, 1, 2)],
        [c(1, 0, 2, 1), -c(0, 0, 2, 1), c(0, 0, 1, 1)],
    ];
    Some(adj.map(|row| row.map(|v| v / det)))
}

/// XYZ (Y=1 white) to linear sRGB. Out-of-gamut values are kept.
pub fn xyz_to_linear_rgb(c: Xyz) -> LinearRgb {
    LinearRgb(mat_vec(&XYZ_TO_SRGB, &c.0))
}

pub fn linear_rgb_to_xyz(c: LinearRgb) -> Xyz {
    Xyz(mat_vec(&cmf_table().srgb_to_xyz, &c.0))
}

/// Linear sRGB of a reflectance under D65, white reflector = (1,1,1).
pub fn rgb_of_reflectance(r: &SpectralCurve) -> LinearRgb {
    xyz_to_linear_rgb(xyz_of_reflectance(r).scaled(1.0 / Y_MAX))
}

/// Linear sRGB of an emission spectrum in the radiance convention.
pub fn rgb_of_radiance(s: &SpectralCurve) -> LinearRgb {
    xyz_to_linear_rgb(spectrum_to_xyz(s))
}

const LAB_EPS: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

#[inline]
pub fn lab_f(t: f64) -> f64 {
    if t > LAB_EPS {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

#[inline]
pub fn lab_f_derivative(t: f64) -> f64 {
    if t > LAB_EPS {
        1.0 / (3.0 * t.cbrt() * t.cbrt())
    } else {
        LAB_KAPPA / 116.0
    }
}

fn check_white(white: Xyz) -> Result<()> {
    if white.0.iter().all(|&v| v > 0.0 && v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "Lab white point must be strictly positive, got {:?}",
            white.0
        )))
    }
}

pub fn xyz_to_lab(c: Xyz, white: Xyz) -> Result<Lab> {
    check_white(white)?;
    Ok(xyz_to_lab_unchecked(c, white))
}

pub(crate) fn xyz_to_lab_unchecked(c: Xyz, white: Xyz) -> Lab {
    let fx = lab_f(c.0[0] / white.0[0]);
    let fy = lab_f(c.0[1] / white.0[1]);
    let fz = lab_f(c.0[2] / white.0[2]);
    Lab([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)])
}

/// Jacobian d(L,a,b)/d(X,Y,Z) at `c`.
pub fn lab_jacobian(c: Xyz, white: Xyz) -> [[f64; 3]; 3] {
    let dx = lab_f_derivative(c.0[0] / white.0[0]) / white.0[0];
    let dy = lab_f_derivative(c.0[1] / white.0[1]) / white.0[1];
    let dz = lab_f_derivative(c.0[2] / white.0[2]) / white.0[2];
    [
        [0.0, 116.0 * dy, 0.0],
        [500.0 * dx, -500.0 * dy, 0.0],
        [0.0, 200.0 * dy, -200.0 * dz],
    ]
}

pub fn delta_e76(a: Lab, b: Lab) -> f64 {
    let d: [f64; 3] = std::array::from_fn(|i| a.0[i] - b.0[i]);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// CIE94 colour difference with `reference` as the standard (its chroma sets
/// the weighting functions). kL = kC = kH = 1.
pub fn delta_e94(reference: Lab, sample: Lab) -> f64 {
    let [l1, a1, b1] = reference.0;
    let [l2, a2, b2] = sample.0;
    let c1 = (a1 * a1 + b1 * b1).sqrt();
    let c2 = (a2 * a2 + b2 * b2).sqrt();
    let dl = l1 - l2;
    let dc = c1 - c2;
    let da = a1 - a2;
    let db = b1 - b2;
    let dh2 = (da * da + db * db - dc * dc).max(0.0);
    let sc = 1.0 + CIE94_K1 * c1;
    let sh = 1.0 + CIE94_K2 * c1;
    (dl * dl + (dc / sc).powi(2) + dh2 / (sh * sh)).sqrt()
}

/// sRGB transfer function for one linear channel.
pub fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Inverse of [`srgb_encode`].
pub fn srgb_decode(e: f64) -> f64 {
    if e <= 0.04045 {
        e / 12.92
    } else {
        ((e + 0.055) / 1.055).powf(2.4)
    }
}

pub fn srgb8_to_linear(c: [u8; 3]) -> LinearRgb {
    LinearRgb(c.map(|v| srgb_decode(v as f64 / 255.0)))
}

/// Gamma-encode and quantise a linear sRGB value, clamping to [0, 255].
pub fn linear_to_srgb8(c: LinearRgb) -> [u8; 3] {
    c.0.map(|v| {
        let e = srgb_encode(v.clamp(0.0, 1.0));
        (e * 255.0).round().clamp(0.0, 255.0) as u8
    })
}
