//! Reflectance and illumination datasets: synthetic generators, optional
//! measured inputs, cosine de-duplication and ring/sector train/test splits.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::colorimetry::{
    cmf_table, d65_white, linear_rgb_to_xyz, spectrum_to_xyz, xyz_of_reflectance,
    xyz_to_lab_unchecked, LinearRgb, Xyz,
};
use crate::error::{Error, Result};
use crate::io;
use crate::rng;
use crate::spectral::{
    in_visible_band, resample, wavelength, SpectralCurve, N_SAMPLES, VISIBLE_MAX, VISIBLE_MIN,
};
use crate::tables;

/// Luminance of the optimal-reflectance targets (reflectance convention).
pub const OPTIMAL_Y0: f64 = 30.0;
pub const OPTIMAL_SATURATIONS: [f64; 3] = [0.6, 0.79, 0.98];
pub const SMOOTH_HUES: usize = 24;
pub const SMOOTH_SATURATIONS: usize = 6;
pub const SMOOTH_SAT_RANGE: (f64, f64) = (0.7, 0.98);
pub const SMOOTH_BASIS_COUNT: usize = 8;
pub const SMOOTH_BASIS_SIGMA: f64 = 40.0;
pub const DEDUP_TAU: f64 = 0.95;
pub const BLACKBODY_COUNT: usize = 82;
pub const BLACKBODY_CCT_RANGE: (f64, f64) = (2000.0, 12000.0);
pub const DAYLIGHT_CCTS: (f64, f64, f64) = (4000.0, 10000.0, 250.0);
pub const NARROWBAND_SIGMAS: [f64; 3] = [5.0, 10.0, 20.0];
pub const NARROWBAND_PAIRS: usize = 184;
pub const MUNSELL_STANDIN_COUNT: usize = 64;
/// Internal seed of the bundled generators; independent of the run seed so
/// the synthetic pools are fixed data.
const GENERATOR_SEED: u64 = 0x4853_4331;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Reflectance,
    Illumination,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Munsell,
    Optimal,
    SmoothSaturated,
    BroadbandSynth,
    NarrowbandSynth,
    DaylightSynth,
    Flipped,
    MeasuredLamp,
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Munsell => "munsell",
            Origin::Optimal => "optimal",
            Origin::SmoothSaturated => "smooth_saturated",
            Origin::BroadbandSynth => "broadband_synth",
            Origin::NarrowbandSynth => "narrowband_synth",
            Origin::DaylightSynth => "daylight_synth",
            Origin::Flipped => "flipped",
            Origin::MeasuredLamp => "measured_lamp",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSpectrum {
    pub id: String,
    pub kind: Kind,
    pub curve: SpectralCurve,
    pub split: Split,
    pub origin: Origin,
}

impl LabeledSpectrum {
    pub fn new(id: impl Into<String>, kind: Kind, origin: Origin, curve: SpectralCurve) -> Self {
        LabeledSpectrum {
            id: id.into(),
            kind,
            curve,
            split: Split::Train,
            origin,
        }
    }
}

/// Equality- and box-constrained least squares
/// `min ‖M x − t‖²  s.t.  c·x = d,  0 ≤ x ≤ u`, with `c ≥ 0`.
#[derive(Clone, Debug)]
pub struct ConstrainedLs {
    pub rows: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub c: Vec<f64>,
    pub d: f64,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LsSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub equality_residual: f64,
    /// `‖x − P(x − ∇f(x))‖` with `P` the feasible-set projection.
    pub projected_gradient: f64,
    pub iterations: usize,
}

impl ConstrainedLs {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn is_feasible(&self) -> bool {
        let cap: f64 = self.c.iter().zip(&self.upper).map(|(c, u)| c * u).sum();
        self.d >= 0.0 && self.d <= cap * (1.0 + 1e-12)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.target)
            .map(|(row, t)| {
                let r = dot(row, x) - t;
                r * r
            })
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for (row, t) in self.rows.iter().zip(&self.target) {
            let r = 2.0 * (dot(row, x) - t);
            for (gi, ri) in g.iter_mut().zip(row) {
                *gi += r * ri;
            }
        }
        g
    }

    /// Euclidean projection onto `{c·x = d, 0 ≤ x ≤ u}` by bisection on the
    /// multiplier of the equality: `x(μ) = clip(v − μ c, 0, u)`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let at = |mu: f64| -> Vec<f64> {
            v.iter()
                .zip(&self.c)
                .zip(&self.upper)
                .map(|((&vi, &ci), &ui)| (vi - mu * ci).clamp(0.0, ui))
                .collect()
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for ((&vi, &ci), &ui) in v.iter().zip(&self.c).zip(&self.upper) {
            if ci > 0.0 {
                lo = lo.min((vi - ui) / ci);
                hi = hi.max(vi / ci);
            }
        }
        if !lo.is_finite() {
            return at(0.0);
        }
        // c·x(lo) = c·u >= d and c·x(hi) = 0 <= d; c·x(μ) is non-increasing.
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if dot(&self.c, &at(mid)) > self.d {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x_lo = at(lo);
        let x_hi = at(hi);
        let (g_lo, g_hi) = (dot(&self.c, &x_lo), dot(&self.c, &x_hi));
        // Interpolate inside the final (linear) segment for the equality.
        if g_lo > g_hi {
            let t = ((g_lo - self.d) / (g_lo - g_hi)).clamp(0.0, 1.0);
            x_lo.iter()
                .zip(&x_hi)
                .map(|(a, b)| a + t * (b - a))
                .collect()
        } else {
            x_lo
        }
    }

    pub fn projected_gradient_norm(&self, x: &[f64]) -> f64 {
        let g = self.gradient(x);
        let step: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b).collect();
        let p = self.project(&step);
        x.iter()
            .zip(&p)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn lipschitz(&self) -> f64 {
        // 2 λmax(MᵀM) = 2 λmax(M Mᵀ); bounded by twice the Frobenius norm².
        let m = self.rows.len();
        let gram: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| dot(&self.rows[i], &self.rows[j])).collect())
            .collect();
        if m == 2 {
            let (a, b, d) = (gram[0][0], gram[0][1], gram[1][1]);
            let tr = a + d;
            let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
            2.0 * 0.5 * (tr + disc)
        } else {
            2.0 * (0..m).map(|i| gram[i][i]).sum::<f64>()
        }
    }

    /// Accelerated projected gradient with adaptive restart, started from the
    /// projection of `x0`.
    pub fn solve(&self, x0: &[f64], tol: f64, max_iter: usize) -> Result<LsSolution> {
        if !self.is_feasible() {
            return Err(Error::Domain(format!(
                "equality c·x = {} is unreachable inside the box",
                self.d
            )));
        }
        let step = 1.0 / self.lipschitz().max(1e-300);
        let mut x = self.project(x0);
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut f_prev = self.objective(&x);
        let mut iterations = 0;
        let mut pg = self.projected_gradient_norm(&x);
        while iterations < max_iter && pg > tol {
            iterations += 1;
            if iterations % POLISH_EVERY == 0 {
                if let Some(p) = self.polish(&x) {
                    let pg_p = self.projected_gradient_norm(&p);
                    if pg_p < pg {
                        f_prev = self.objective(&p);
                        x = p;
                        y = x.clone();
                        t = 1.0;
                        pg = pg_p;
                        continue;
                    }
                }
            }
            let g = self.gradient(&y);
            let v: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let x_new = self.project(&v);
            let f_new = self.objective(&x_new);
            if f_new > f_prev {
                // Restart momentum.
                t = 1.0;
                y = x.clone();
                continue;
            }
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_new;
            y = x_new
                .iter()
                .zip(&x)
                .map(|(a, b)| a + beta * (a - b))
                .collect();
            y = self.project(&y);
            x = x_new;
            t = t_new;
            f_prev = f_new;
            if iterations % 16 == 0 {
                pg = self.projected_gradient_norm(&x);
            }
        }
        pg = self.projected_gradient_norm(&x);
        Ok(LsSolution {
            equality_residual: (dot(&self.c, &x) - self.d).abs(),
            objective: self.objective(&x),
            projected_gradient: pg,
            iterations,
            x,
        })
    }
}

const POLISH_EVERY: usize = 256;

impl ConstrainedLs {
    /// Exact minimiser on the face of `x`: bounded coordinates stay fixed
    /// and the free ones move by the minimum-norm step that solves the
    /// equality-constrained least squares there. `None` if the step leaves
    /// the box or the system is singular.
    pub fn polish(&self, x: &[f64]) -> Option<Vec<f64>> {
        let free: Vec<usize> = (0..x.len())
            .filter(|&i| x[i] > 0.0 && x[i] < self.upper[i])
            .collect();
        if free.is_empty() {
            return None;
        }
        let m = self.rows.len();
        let r0: Vec<f64> = self
            .rows
            .iter()
            .zip(&self.target)
            .map(|(row, t)| dot(row, x) - t)
            .collect();
        let e0 = dot(&self.c, x) - self.d;
        let a_f: Vec<Vec<f64>> = self
            .rows
            .iter()
            .map(|row| free.iter().map(|&i| row[i]).collect())
            .collect();
        let c_f: Vec<f64> = free.iter().map(|&i| self.c[i]).collect();
        let nf = free.len();
        let delta = if nf > m {
            // Minimum-norm step in the row space of [A_F; c_F] zeroing every
            // residual.
            let b: Vec<&Vec<f64>> = a_f.iter().chain(std::iter::once(&c_f)).collect();
            let g: Vec<Vec<f64>> = b
                .iter()
                .map(|bi| b.iter().map(|bj| dot(bi, bj)).collect())
                .collect();
            let rhs: Vec<f64> = r0.iter().map(|v| -v).chain(std::iter::once(-e0)).collect();
            let lambda = solve_dense(g, rhs)?;
            (0..nf)
                .map(|j| b.iter().zip(&lambda).map(|(bi, l)| bi[j] * l).sum())
                .collect::<Vec<f64>>()
        } else {
            // KKT system of min |r0 + A_F δ|² s.t. c_F·δ = −e0.
            let mut k = vec![vec![0.0; nf + 1]; nf + 1];
            let mut rhs = vec![0.0; nf + 1];
            for i in 0..nf {
                for j in 0..nf {
                    k[i][j] = 2.0 * (0..m).map(|r| a_f[r][i] * a_f[r][j]).sum::<f64>();
                }
                k[i][nf] = c_f[i];
                k[nf][i] = c_f[i];
                rhs[i] = -2.0 * (0..m).map(|r| a_f[r][i] * r0[r]).sum::<f64>();
            }
            rhs[nf] = -e0;
            let sol = solve_dense(k, rhs)?;
            sol[..nf].to_vec()
        };
        let mut out = x.to_vec();
        for (&i, d) in free.iter().zip(&delta) {
            let v = out[i] + d;
            if !(v >= 0.0 && v <= self.upper[i]) {
                return None;
            }
            out[i] = v;
        }
        Some(out)
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear RGB on the hue ring R → Y → G → C → B → M → R, `h` in [0, 6).
pub fn hue_rgb(h: f64) -> LinearRgb {
    let h = h.rem_euclid(6.0);
    let seg = h.floor() as usize;
    let f = h - seg as f64;
    LinearRgb(match seg {
        0 => [1.0, f, 0.0],
        1 => [1.0 - f, 1.0, 0.0],
        2 => [0.0, 1.0, f],
        3 => [0.0, 1.0 - f, 1.0],
        4 => [f, 0.0, 1.0],
        _ => [1.0, 0.0, 1.0 - f],
    })
}

/// Target XYZ at luminance `y0`: the hue's chromaticity mixed linearly in
/// xy toward D65 white by saturation `s`.
pub fn target_xyz(hue: f64, s: f64, y0: f64) -> Xyz {
    let hue_xy = linear_rgb_to_xyz(hue_rgb(hue))
        .chromaticity()
        .expect("hue ring colours are not black");
    let white_xy = d65_white().chromaticity().expect("white is not black");
    let x = (1.0 - s) * white_xy[0] + s * hue_xy[0];
    let y = (1.0 - s) * white_xy[1] + s * hue_xy[1];
    Xyz::from_xy_y(x, y, y0)
}

fn visible_upper() -> Vec<f64> {
    (0..N_SAMPLES)
        .map(|i| if in_visible_band(i) { 1.0 } else { 0.0 })
        .collect()
}

/// Bounded least-squares reflectance problem for one target.
pub fn optimal_problem(target: Xyz, y0: f64) -> ConstrainedLs {
    let w = &cmf_table().weights;
    ConstrainedLs {
        rows: vec![w[0].to_vec(), w[2].to_vec()],
        target: vec![target.0[0], target.0[2]],
        c: w[1].to_vec(),
        d: y0,
        upper: visible_upper(),
    }
}

pub const LS_TOL: f64 = 1e-9;
const LS_MAX_ITER: usize = 500_000;

/// Reflectance for one target. Started from the origin, so among equally
/// good solutions the solver lands near the minimum-norm one.
pub fn solve_optimal(target: Xyz, y0: f64) -> Result<(SpectralCurve, LsSolution)> {
    let p = optimal_problem(target, y0);
    let sol = p.solve(&vec![0.0; N_SAMPLES], LS_TOL, LS_MAX_ITER)?;
    let curve = SpectralCurve::from_slice(&sol.x)?;
    Ok((curve, sol))
}

fn optimal_targets() -> Vec<(String, f64, f64)> {
    let mut out = Vec::new();
    for h in 0..12 {
        for (si, &s) in OPTIMAL_SATURATIONS.iter().enumerate() {
            out.push((format!("optimal-h{h:02}-s{si}"), h as f64 * 0.5, s));
        }
    }
    out
}

/// 12 hue targets (sRGB primaries, secondaries and their midpoints) times
/// three saturations, each solved as bounded least squares at `Y = 30`.
pub fn gen_optimal_reflectances() -> Vec<LabeledSpectrum> {
    optimal_targets()
        .into_iter()
        .filter_map(
            |(id, h, s)| match solve_optimal(target_xyz(h, s, OPTIMAL_Y0), OPTIMAL_Y0) {
                Ok((curve, _)) => Some(LabeledSpectrum::new(
                    id,
                    Kind::Reflectance,
                    Origin::Optimal,
                    curve,
                )),
                Err(e) => {
                    warn!("skipping {id}: {e}");
                    None
                }
            },
        )
        .collect()
}

/// Gaussian bases on 400-700 nm scaled so their sum peaks at 1; any
/// weights in [0, 1] then give a reflectance in [0, 1]. `basis[j][i]`.
pub fn smooth_basis() -> Vec<[f64; N_SAMPLES]> {
    let g = SMOOTH_BASIS_COUNT;
    let mut basis: Vec<[f64; N_SAMPLES]> = (0..g)
        .map(|j| {
            let c = VISIBLE_MIN + (VISIBLE_MAX - VISIBLE_MIN) * j as f64 / (g - 1) as f64;
            std::array::from_fn(|i| {
                if in_visible_band(i) {
                    (-(wavelength(i) - c).powi(2) / (2.0 * SMOOTH_BASIS_SIGMA.powi(2))).exp()
                } else {
                    0.0
                }
            })
        })
        .collect();
    let peak = (0..N_SAMPLES)
        .map(|i| basis.iter().map(|b| b[i]).sum::<f64>())
        .fold(0.0, f64::max);
    for b in &mut basis {
        b.iter_mut().for_each(|v| *v /= peak);
    }
    basis
}

/// Reflectance restricted to the smooth basis for one target.
pub fn solve_smooth(target: Xyz, y0: f64) -> Result<(SpectralCurve, LsSolution)> {
    let basis = smooth_basis();
    let w = &cmf_table().weights;
    let project =
        |row: &[f64; N_SAMPLES]| -> Vec<f64> { basis.iter().map(|b| dot(b, row)).collect() };
    let p = ConstrainedLs {
        rows: vec![project(&w[0]), project(&w[2])],
        target: vec![target.0[0], target.0[2]],
        c: project(&w[1]),
        d: y0,
        upper: vec![1.0; basis.len()],
    };
    let sol = p.solve(&vec![0.5; basis.len()], LS_TOL, LS_MAX_ITER)?;
    let r: [f64; N_SAMPLES] =
        std::array::from_fn(|i| basis.iter().zip(&sol.x).map(|(b, a)| b[i] * a).sum::<f64>());
    let curve = SpectralCurve::new(r)?.clamp_unit();
    curve.check_reflectance()?;
    Ok((curve, sol))
}

/// Total variation inside 400-700 nm, ignoring the steps to the zeroed
/// out-of-band samples.
pub fn visible_total_variation(c: &SpectralCurve) -> f64 {
    let vis: Vec<usize> = (0..N_SAMPLES).filter(|&i| in_visible_band(i)).collect();
    vis.windows(2).map(|w| (c[w[1]] - c[w[0]]).abs()).sum()
}

pub fn smooth_targets() -> Vec<(String, f64, f64)> {
    let (lo, hi) = SMOOTH_SAT_RANGE;
    let mut out = Vec::new();
    for h in 0..SMOOTH_HUES {
        for si in 0..SMOOTH_SATURATIONS {
            let s = lo + (hi - lo) * si as f64 / (SMOOTH_SATURATIONS - 1) as f64;
            out.push((
                format!("smooth-h{h:02}-s{si}"),
                6.0 * h as f64 / SMOOTH_HUES as f64,
                s,
            ));
        }
    }
    out
}

/// 24 hues times 6 saturations of reflectances built from 8 Gaussian bases.
pub fn gen_smooth_saturated() -> Vec<LabeledSpectrum> {
    smooth_targets()
        .into_iter()
        .filter_map(
            |(id, h, s)| match solve_smooth(target_xyz(h, s, OPTIMAL_Y0), OPTIMAL_Y0) {
                Ok((curve, _)) => Some(LabeledSpectrum::new(
                    id,
                    Kind::Reflectance,
                    Origin::SmoothSaturated,
                    curve,
                )),
                Err(e) => {
                    warn!("skipping {id}: {e}");
                    None
                }
            },
        )
        .collect()
}

/// Smooth low-order Fourier reflectances standing in for measured Munsell
/// chips when no measured file is given.
pub fn munsell_standin() -> Vec<LabeledSpectrum> {
    let mut rng = rng::stream(GENERATOR_SEED, "munsell-standin");
    (0..MUNSELL_STANDIN_COUNT)
        .map(|idx| {
            let base = rng.random_range(0.1..0.7);
            let coeffs: Vec<(f64, f64)> = (1..=3)
                .map(|j| {
                    let amp = 0.35 / j as f64;
                    (rng.random_range(-amp..amp), rng.random_range(-amp..amp))
                })
                .collect();
            let curve = SpectralCurve::from_fn(|l| {
                let t = (l - VISIBLE_MIN) / (VISIBLE_MAX - VISIBLE_MIN);
                let v = base
                    + coeffs
                        .iter()
                        .enumerate()
                        .map(|(j, (a, b))| {
                            let w = (j + 1) as f64 * PI * t;
                            a * w.cos() + b * w.sin()
                        })
                        .sum::<f64>();
                v.clamp(0.0, 1.0)
            })
            .expect("clamped values are valid")
            .zero_outside_visible();
            LabeledSpectrum::new(
                format!("munsell-standin-{idx:03}"),
                Kind::Reflectance,
                Origin::Munsell,
                curve,
            )
        })
        .collect()
}

/// Measured reflectances from a spectra CSV: resampled, zeroed outside
/// 400-700 nm and clamped to [0, 1].
pub fn load_munsell(path: &Path) -> Result<Vec<LabeledSpectrum>> {
    let table = io::read_spectra(path)?;
    munsell_from_table(&table)
}

pub fn munsell_from_table(table: &io::SpectraTable) -> Result<Vec<LabeledSpectrum>> {
    if table.is_empty() {
        warn!("no reflectances in measured input");
        return Ok(Vec::new());
    }
    let curves = table.to_curves(true)?;
    Ok(table
        .ids
        .iter()
        .zip(curves)
        .map(|(id, c)| {
            LabeledSpectrum::new(
                format!("munsell-{id}"),
                Kind::Reflectance,
                Origin::Munsell,
                c.clamp_unit(),
            )
        })
        .collect())
}

/// Measured lamp SPDs: resampled, zeroed outside 400-700 nm, unit peak.
pub fn load_lamps(path: &Path) -> Result<Vec<LabeledSpectrum>> {
    let table = io::read_spectra(path)?;
    let curves = table.to_curves(true)?;
    Ok(table
        .ids
        .iter()
        .zip(curves)
        .filter_map(|(id, c)| {
            c.unit_peak().map(|c| {
                LabeledSpectrum::new(
                    format!("lamp-{id}"),
                    Kind::Illumination,
                    Origin::MeasuredLamp,
                    c,
                )
            })
        })
        .collect())
}

/// Planck's law at temperature `t` (K), relative units.
pub fn planck(lambda_nm: f64, t: f64) -> f64 {
    const C2: f64 = 1.438_776_877e-2;
    let l = lambda_nm * 1e-9;
    1.0 / (l.powi(5) * ((C2 / (l * t)).exp() - 1.0))
}

fn visible_unit_peak(f: impl Fn(f64) -> f64) -> Option<SpectralCurve> {
    SpectralCurve::from_fn(|l| f(l).max(0.0))
        .ok()?
        .zero_outside_visible()
        .unit_peak()
}

pub fn blackbody(cct: f64) -> SpectralCurve {
    visible_unit_peak(|l| planck(l, cct)).expect("Planck radiance is positive")
}

/// CIE daylight chromaticity for a correlated colour temperature.
pub fn daylight_xy(cct: f64) -> [f64; 2] {
    let t = cct;
    let x = if t <= 7000.0 {
        -4.6070e9 / t.powi(3) + 2.9678e6 / t.powi(2) + 0.09911e3 / t + 0.244063
    } else {
        -2.0064e9 / t.powi(3) + 1.9018e6 / t.powi(2) + 0.24748e3 / t + 0.237040
    };
    [x, -3.0 * x * x + 2.87 * x - 0.275]
}

/// CIE daylight SPD from the S0/S1/S2 basis.
pub fn daylight(cct: f64) -> Result<SpectralCurve> {
    let [x, y] = daylight_xy(cct);
    let m = 0.0241 + 0.2562 * x - 0.7341 * y;
    let m1 = (-1.3515 - 1.7703 * x + 5.9114 * y) / m;
    let m2 = (0.0300 - 31.4424 * x + 30.0717 * y) / m;
    let spd: Vec<f64> = (0..tables::TABLE_LEN)
        .map(|i| {
            (tables::DAYLIGHT_S0[i] + m1 * tables::DAYLIGHT_S1[i] + m2 * tables::DAYLIGHT_S2[i])
                .max(0.0)
        })
        .collect();
    let grid: Vec<f64> = (0..tables::TABLE_LEN)
        .map(|i| tables::TABLE_START_NM + tables::TABLE_STEP_NM * i as f64)
        .collect();
    resample(&spd, &grid, true)?
        .unit_peak()
        .ok_or_else(|| Error::Domain(format!("daylight at {cct} K is black")))
}

fn gaussian(l: f64, c: f64, sigma: f64) -> f64 {
    (-(l - c).powi(2) / (2.0 * sigma * sigma)).exp()
}

pub fn gen_blackbodies() -> Vec<LabeledSpectrum> {
    let (lo, hi) = BLACKBODY_CCT_RANGE;
    (0..BLACKBODY_COUNT)
        .map(|i| {
            let t = lo * (hi / lo).powf(i as f64 / (BLACKBODY_COUNT - 1) as f64);
            LabeledSpectrum::new(
                format!("blackbody-{t:.0}K"),
                Kind::Illumination,
                Origin::BroadbandSynth,
                blackbody(t),
            )
        })
        .collect()
}

pub fn gen_daylights() -> Vec<LabeledSpectrum> {
    let (lo, hi, step) = DAYLIGHT_CCTS;
    let count = ((hi - lo) / step).round() as usize + 1;
    (0..count)
        .filter_map(|i| {
            let t = lo + step * i as f64;
            daylight(t).ok().map(|c| {
                LabeledSpectrum::new(
                    format!("daylight-{t:.0}K"),
                    Kind::Illumination,
                    Origin::DaylightSynth,
                    c,
                )
            })
        })
        .collect()
}

/// 183 single Gaussian peaks (3 widths × 61 centres) plus 184 seeded peak
/// pairs: 367 narrowband SPDs.
pub fn gen_narrowband() -> Vec<LabeledSpectrum> {
    let mut out = Vec::new();
    for &sigma in &NARROWBAND_SIGMAS {
        for ci in 0..=60 {
            let c = VISIBLE_MIN + 5.0 * ci as f64;
            if let Some(curve) = visible_unit_peak(|l| gaussian(l, c, sigma)) {
                out.push(LabeledSpectrum::new(
                    format!("narrow-{c:.0}nm-w{sigma:.0}"),
                    Kind::Illumination,
                    Origin::NarrowbandSynth,
                    curve,
                ));
            }
        }
    }
    let mut rng = rng::stream(GENERATOR_SEED, "narrowband-pairs");
    let mut made = 0;
    while made < NARROWBAND_PAIRS {
        let c1 = rng.random_range(VISIBLE_MIN..=VISIBLE_MAX);
        let c2 = rng.random_range(VISIBLE_MIN..=VISIBLE_MAX);
        let s1 = NARROWBAND_SIGMAS[rng.random_range(0..NARROWBAND_SIGMAS.len())];
        let s2 = NARROWBAND_SIGMAS[rng.random_range(0..NARROWBAND_SIGMAS.len())];
        let a2 = rng.random_range(0.3..=1.0);
        if let Some(curve) = visible_unit_peak(|l| gaussian(l, c1, s1) + a2 * gaussian(l, c2, s2)) {
            out.push(LabeledSpectrum::new(
                format!("narrow-pair-{made:03}"),
                Kind::Illumination,
                Origin::NarrowbandSynth,
                curve,
            ));
            made += 1;
        }
    }
    out
}

/// `max(s) − s`, re-zeroed outside the visible band and renormalised to
/// unit peak. Flat curves flip to zero and are dropped.
pub fn flip(curve: &SpectralCurve) -> Option<SpectralCurve> {
    let m = curve.max();
    SpectralCurve::from_slice(&curve.values().map(|v| (m - v).max(0.0)))
        .ok()?
        .zero_outside_visible()
        .unit_peak()
}

pub fn flip_augment(broadband: &[LabeledSpectrum]) -> Vec<LabeledSpectrum> {
    broadband
        .iter()
        .filter_map(|s| {
            flip(&s.curve).map(|c| LabeledSpectrum {
                id: format!("{}-flipped", s.id),
                origin: Origin::Flipped,
                curve: c,
                ..s.clone()
            })
        })
        .collect()
}

/// Greedy filter in input order: keep a spectrum iff its cosine similarity
/// with every kept spectrum is below `tau`.
pub fn cosine_dedup(spectra: Vec<LabeledSpectrum>, tau: f64) -> Vec<LabeledSpectrum> {
    let mut kept: Vec<LabeledSpectrum> = Vec::new();
    for s in spectra {
        if s.curve.is_zero() {
            continue;
        }
        if kept.iter().all(|k| k.curve.cosine(&s.curve) < tau) {
            kept.push(s);
        }
    }
    kept
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub angular_bins: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitConfig {
    pub fn reflectance(seed: u64) -> Self {
        SplitConfig {
            angular_bins: 180,
            train_fraction: 0.70,
            seed,
        }
    }

    pub fn illumination(seed: u64) -> Self {
        SplitConfig {
            angular_bins: 36,
            train_fraction: 0.70,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.angular_bins == 0 || !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("invalid split config {self:?}")));
        }
        Ok(())
    }
}

/// CIELAB of a dataset spectrum: reflectances under D65, illuminations as
/// emitters normalised to `Y = 100`; D65 white in both cases.
pub fn spectrum_lab(s: &LabeledSpectrum) -> [f64; 3] {
    let xyz = match s.kind {
        Kind::Reflectance => xyz_of_reflectance(&s.curve),
        Kind::Illumination => {
            let x = spectrum_to_xyz(&s.curve);
            if x.y() > 0.0 {
                x.scaled(100.0 / x.y())
            } else {
                x
            }
        }
    };
    xyz_to_lab_unchecked(xyz, d65_white()).0
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Ring/sector cell of each spectrum: `(sector, ring)`.
pub fn ring_sector_cells(spectra: &[LabeledSpectrum], angular_bins: usize) -> Vec<(usize, usize)> {
    let labs: Vec<[f64; 3]> = spectra.iter().map(spectrum_lab).collect();
    let ca = median(&mut labs.iter().map(|l| l[1]).collect::<Vec<_>>());
    let cb = median(&mut labs.iter().map(|l| l[2]).collect::<Vec<_>>());
    let polar: Vec<(usize, f64)> = labs
        .iter()
        .map(|l| {
            let (da, db) = (l[1] - ca, l[2] - cb);
            let ang = db.atan2(da).rem_euclid(2.0 * PI);
            let sector = ((ang / (2.0 * PI) * angular_bins as f64) as usize).min(angular_bins - 1);
            (sector, (da * da + db * db).sqrt())
        })
        .collect();
    let mut radii: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(s, r) in &polar {
        radii.entry(s).or_default().push(r);
    }
    let bounds: BTreeMap<usize, (f64, f64)> = radii
        .into_iter()
        .map(|(s, mut r)| {
            r.sort_by(f64::total_cmp);
            (
                s,
                (
                    quantile_sorted(&r, 1.0 / 3.0),
                    quantile_sorted(&r, 2.0 / 3.0),
                ),
            )
        })
        .collect();
    polar
        .iter()
        .map(|&(s, r)| {
            let (q1, q2) = bounds[&s];
            let ring = if r <= q1 {
                0
            } else if r <= q2 {
                1
            } else {
                2
            };
            (s, ring)
        })
        .collect()
}

/// Assign train/test labels by ring/sector cell.
///
/// Cells are visited in (sector, ring) order. Each cell receives
/// `round(f · seen) − trained` train members, where `seen` counts members of
/// all cells visited so far, so the global fraction tracks `f` to within one
/// spectrum. Cells with two or more members keep at least one member in each
/// split. Which members train is a seeded shuffle per cell.
pub fn ring_sector_split(spectra: &mut [LabeledSpectrum], cfg: &SplitConfig) -> Result<()> {
    cfg.validate()?;
    if spectra.is_empty() {
        return Ok(());
    }
    let cells = ring_sector_cells(spectra, cfg.angular_bins);
    let mut members: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, c) in cells.iter().enumerate() {
        members.entry(*c).or_default().push(i);
    }
    let mut rng = rng::stream(cfg.seed, "ring-sector-split");
    let mut seen = 0usize;
    let mut trained = 0usize;
    for (_, mut idx) in members {
        idx.shuffle(&mut rng);
        let n = idx.len();
        seen += n;
        let want = (cfg.train_fraction * seen as f64).round() as usize;
        let mut n_train = want.saturating_sub(trained).min(n);
        if n >= 2 {
            n_train = n_train.clamp(1, n - 1);
        }
        for (j, &i) in idx.iter().enumerate() {
            spectra[i].split = if j < n_train {
                Split::Train
            } else {
                Split::Test
            };
        }
        trained += n_train;
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct GenOptions {
    pub seed: u64,
    pub munsell: Option<std::path::PathBuf>,
    pub lamps: Option<std::path::PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetSummary {
    pub reflectance_train: usize,
    pub reflectance_test: usize,
    pub illumination_train: usize,
    pub illumination_test: usize,
    pub illumination_pool: usize,
    pub dedup_kept: usize,
    pub origins: BTreeMap<String, BTreeMap<String, usize>>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub reflectances: Vec<LabeledSpectrum>,
    pub illuminations: Vec<LabeledSpectrum>,
    pub illumination_pool: usize,
}

impl Dataset {
    fn curves(items: &[LabeledSpectrum], split: Split) -> Vec<SpectralCurve> {
        items
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.curve.clone())
            .collect()
    }

    pub fn splits(&self) -> DatasetSplits {
        DatasetSplits {
            refl_train: Self::curves(&self.reflectances, Split::Train),
            refl_test: Self::curves(&self.reflectances, Split::Test),
            illum_train: Self::curves(&self.illuminations, Split::Train),
            illum_test: Self::curves(&self.illuminations, Split::Test),
        }
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut origins: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for s in self.reflectances.iter().chain(&self.illuminations) {
            let split = match s.split {
                Split::Train => "train",
                Split::Val => "val",
                Split::Test => "test",
            };
            *origins
                .entry(s.origin.name().to_string())
                .or_default()
                .entry(split.to_string())
                .or_default() += 1;
        }
        let count =
            |items: &[LabeledSpectrum], sp: Split| items.iter().filter(|s| s.split == sp).count();
        DatasetSummary {
            reflectance_train: count(&self.reflectances, Split::Train),
            reflectance_test: count(&self.reflectances, Split::Test),
            illumination_train: count(&self.illuminations, Split::Train),
            illumination_test: count(&self.illuminations, Split::Test),
            illumination_pool: self.illumination_pool,
            dedup_kept: self.illuminations.len(),
            origins,
        }
    }
}

/// Curves of each split, as consumed by training and evaluation.
#[derive(Clone, Debug, Default)]
pub struct DatasetSplits {
    pub refl_train: Vec<SpectralCurve>,
    pub refl_test: Vec<SpectralCurve>,
    pub illum_train: Vec<SpectralCurve>,
    pub illum_test: Vec<SpectralCurve>,
}

/// Synthetic illumination pool before de-duplication, in filter order:
/// blackbodies, their flips, daylights, measured lamps, narrowband.
pub fn illumination_pool(lamps: Vec<LabeledSpectrum>) -> Vec<LabeledSpectrum> {
    let broadband = gen_blackbodies();
    let flipped = flip_augment(&broadband);
    let mut pool = broadband;
    pool.extend(flipped);
    pool.extend(gen_daylights());
    pool.extend(lamps);
    pool.extend(gen_narrowband());
    pool
}

pub fn generate(opts: &GenOptions) -> Result<Dataset> {
    let mut reflectances = match &opts.munsell {
        Some(p) => load_munsell(p)?,
        None => munsell_standin(),
    };
    reflectances.extend(gen_optimal_reflectances());
    reflectances.extend(gen_smooth_saturated());
    let lamps = match &opts.lamps {
        Some(p) => load_lamps(p)?,
        None => Vec::new(),
    };
    let pool = illumination_pool(lamps);
    let pool_len = pool.len();
    let mut illuminations = cosine_dedup(pool, DEDUP_TAU);
    info!(
        "illumination pool {pool_len}, kept {} after de-duplication",
        illuminations.len()
    );
    ring_sector_split(&mut reflectances, &SplitConfig::reflectance(opts.seed))?;
    ring_sector_split(&mut illuminations, &SplitConfig::illumination(opts.seed))?;
    Ok(Dataset {
        reflectances,
        illuminations,
        illumination_pool: pool_len,
    })
}

pub const DATASET_FILES: [&str; 4] = [
    "reflectance_train.csv",
    "reflectance_test.csv",
    "illumination_train.csv",
    "illumination_test.csv",
];

fn table_for(items: &[LabeledSpectrum], split: Split) -> io::SpectraTable {
    let chosen: Vec<&LabeledSpectrum> = items.iter().filter(|s| s.split == split).collect();
    io::SpectraTable::from_curves(
        chosen.iter().map(|s| s.id.clone()).collect(),
        &chosen.iter().map(|s| s.curve.clone()).collect::<Vec<_>>(),
    )
}

/// Write the four split CSVs into `dir`; returns their paths.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<Vec<std::path::PathBuf>> {
    let tables = [
        table_for(&ds.reflectances, Split::Train),
        table_for(&ds.reflectances, Split::Test),
        table_for(&ds.illuminations, Split::Train),
        table_for(&ds.illuminations, Split::Test),
    ];
    let mut paths = Vec::new();
    for (name, t) in DATASET_FILES.iter().zip(&tables) {
        let p = dir.join(name);
        io::write_spectra(&p, t)?;
        paths.push(p);
    }
    Ok(paths)
}

pub fn load_dataset(dir: &Path) -> Result<DatasetSplits> {
    let read = |name: &str| io::read_curves(&dir.join(name));
    Ok(DatasetSplits {
        refl_train: read(DATASET_FILES[0])?,
        refl_test: read(DATASET_FILES[1])?,
        illum_train: read(DATASET_FILES[2])?,
        illum_test: read(DATASET_FILES[3])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_030_is_the_white_target_solution() {
        let p = optimal_problem(d65_white().scaled(0.3), OPTIMAL_Y0);
        let flat: Vec<f64> = (0..N_SAMPLES)
            .map(|i| if in_visible_band(i) { 0.3 } else { 0.0 })
            .collect();
        // Outside the band the flat candidate is zero; the band-limited
        // white differs from the full white, so compare against the weights
        // restricted to the band.
        let w = &cmf_table().weights;
        let band = |row: &[f64; N_SAMPLES]| -> f64 {
            (0..N_SAMPLES)
                .filter(|&i| in_visible_band(i))
                .map(|i| row[i] * 0.3)
                .sum()
        };
        let p_band = ConstrainedLs {
            target: vec![band(&w[0]), band(&w[2])],
            d: band(&w[1]),
            ..p
        };
        assert!(p_band.objective(&flat) < 1e-20);
        assert!((dot(&p_band.c, &flat) - p_band.d).abs() < 1e-12);
        assert!(p_band.projected_gradient_norm(&flat) < 1e-9);
        // Unconstrained by the band, a flat 0.3 reflects Y = 30 exactly.
        let full = vec![0.3; N_SAMPLES];
        assert!((dot(&w[1], &full) - 30.0).abs() < 1e-9);
    }

    #[test]
    fn projection_satisfies_constraints() {
        let p = optimal_problem(target_xyz(0.0, 0.9, 30.0), 30.0);
        let mut rng = rng::stream(1, "proj");
        for _ in 0..20 {
            let v: Vec<f64> = (0..N_SAMPLES)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            let x = p.project(&v);
            assert!((dot(&p.c, &x) - p.d).abs() < 1e-9);
            assert!(x.iter().zip(&p.upper).all(|(a, u)| *a >= 0.0 && a <= u));
            // Projection is idempotent.
            let x2 = p.project(&x);
            let d: f64 = x
                .iter()
                .zip(&x2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn optimal_solutions_satisfy_kkt() {
        for (id, h, s) in optimal_targets() {
            let (curve, sol) = solve_optimal(target_xyz(h, s, OPTIMAL_Y0), OPTIMAL_Y0).unwrap();
            assert!(
                sol.equality_residual <= 1e-6,
                "{id}: {}",
                sol.equality_residual
            );
            assert!(
                sol.projected_gradient <= 1e-6,
                "{id}: {} after {}",
                sol.projected_gradient,
                sol.iterations
            );
            assert!(curve.is_reflectance());
            assert!((xyz_of_reflectance(&curve).y() - 30.0).abs() <= 1e-6);
        }
        assert_eq!(gen_optimal_reflectances().len(), 36);
    }

    #[test]
    fn smooth_outputs_are_reflectances() {
        let s = gen_smooth_saturated();
        assert_eq!(s.len(), 144);
        assert!(s.iter().all(|l| l.curve.is_reflectance()));
    }

    #[test]
    fn smooth_total_variation_does_not_exceed_optimal() {
        for (id, h, s) in optimal_targets() {
            let t = target_xyz(h, s, OPTIMAL_Y0);
            let (opt, _) = solve_optimal(t, OPTIMAL_Y0).unwrap();
            let (smooth, _) = solve_smooth(t, OPTIMAL_Y0).unwrap();
            let (a, b) = (
                visible_total_variation(&smooth),
                visible_total_variation(&opt),
            );
            assert!(a <= b, "{id}: smooth {a} vs optimal {b}");
        }
    }

    #[test]
    fn illuminant_generators() {
        let bb = gen_blackbodies();
        assert_eq!(bb.len(), 82);
        let nb = gen_narrowband();
        assert_eq!(nb.len(), 367);
        let dl = gen_daylights();
        assert_eq!(dl.len(), 25);
        for s in bb.iter().chain(&nb).chain(&dl) {
            assert_eq!(s.curve.max(), 1.0, "{}", s.id);
        }
        let b6500 = blackbody(6500.0);
        assert!((0..N_SAMPLES)
            .filter(|&i| in_visible_band(i))
            .all(|i| b6500[i] > 0.0));
    }

    #[test]
    fn daylight_6504_matches_d65() {
        let d = daylight(6504.0).unwrap();
        let d65 = SpectralCurve::new(cmf_table().d65)
            .unwrap()
            .zero_outside_visible();
        assert!(d.cosine(&d65) > 0.9999);
    }

    #[test]
    fn flips() {
        assert!(flip(&SpectralCurve::flat(0.7).unwrap().zero_outside_visible()).is_none());
        let inc = SpectralCurve::from_fn(|l| l / 830.0)
            .unwrap()
            .zero_outside_visible();
        let f = flip(&inc).unwrap();
        let vis: Vec<usize> = (0..N_SAMPLES).filter(|&i| in_visible_band(i)).collect();
        assert!(vis.windows(2).all(|w| f[w[1]] < f[w[0]]));
        // Flipping twice recovers the shape up to offset and scale.
        let ff = flip(&f).unwrap();
        let unit = inc.unit_peak().unwrap();
        let lo = unit[vis[0]];
        for &i in &vis {
            let expected = (unit[i] - lo) / (1.0 - lo);
            assert!((ff[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn dedup_examples() {
        let a = LabeledSpectrum::new(
            "a",
            Kind::Illumination,
            Origin::NarrowbandSynth,
            blackbody(3000.0),
        );
        let kept = cosine_dedup(vec![a.clone(), a.clone()], DEDUP_TAU);
        assert_eq!(kept.len(), 1);
        let p1 = visible_unit_peak(|l| gaussian(l, 420.0, 5.0)).unwrap();
        let p2 = visible_unit_peak(|l| gaussian(l, 680.0, 5.0)).unwrap();
        assert!(p1.cosine(&p2) < 1e-12);
        let kept = cosine_dedup(
            vec![
                LabeledSpectrum::new("p1", Kind::Illumination, Origin::NarrowbandSynth, p1),
                LabeledSpectrum::new("p2", Kind::Illumination, Origin::NarrowbandSynth, p2),
            ],
            DEDUP_TAU,
        );
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn ten_identical_split_seven_three() {
        let mut items: Vec<_> = (0..10)
            .map(|i| {
                LabeledSpectrum::new(
                    format!("r{i}"),
                    Kind::Reflectance,
                    Origin::Munsell,
                    SpectralCurve::flat(0.4).unwrap(),
                )
            })
            .collect();
        ring_sector_split(&mut items, &SplitConfig::reflectance(3)).unwrap();
        assert_eq!(items.iter().filter(|s| s.split == Split::Train).count(), 7);
        let cells = ring_sector_cells(&items, 180);
        assert!(cells.iter().all(|c| *c == cells[0]));
    }

    #[test]
    fn standin_is_bounded_and_band_limited() {
        let s = munsell_standin();
        assert_eq!(s.len(), 64);
        for l in &s {
            assert!(l.curve.is_reflectance());
            assert!((0..N_SAMPLES)
                .filter(|&i| !in_visible_band(i))
                .all(|i| l.curve[i] == 0.0));
        }
    }
}
