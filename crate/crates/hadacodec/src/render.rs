//! A small deterministic path tracer over Cornell-box scenes with three
//! shading modes: full spectral (47 channels), latent (k channels, or k/3
//! three-channel passes) and an RGB baseline.
//!
//! Transport only ever scales, adds and multiplies channel vectors
//! element-wise, so the channel count never influences a path. Every camera
//! sample draws its geometric random numbers from `pixel_seed(seed, x, y,
//! sample)` and Russian roulette uses a second stream and a channel-free
//! luminance, so all modes and passes trace identical paths.
//!
//! # Scene files
//!
//! Line-oriented `key = value` text with `#` comments:
//!
//! ```text
//! camera.position = 0.5 0.5 2.3
//! camera.target = 0.5 0.5 0.0
//! camera.fov = 38                        # vertical, degrees
//! material white = flat 0.75
//! walls = white white white red green    # floor ceiling back left right, `none` omits
//! [sphere]
//! center = 0.3 0.2 0.4
//! radius = 0.2
//! material = white
//! [box]
//! min = 0.5 0 0.4
//! max = 0.8 0.4 0.7
//! material = white
//! [light]
//! center = 0.5 0.9999 0.5                # downward-facing square on a ceiling
//! size = 0.3 0.3
//! spd = daylight 6500
//! power = 15
//! ```
//!
//! Spectrum expressions are sums (`+`) of `flat V`, `blackbody K`,
//! `daylight K`, `d65`, `gaussian CENTER SIGMA [PEAK [BASE]]` and
//! `samples V1 .. V47`. Scene spectra are zeroed outside 400-700 nm like
//! dataset spectra. The box is the unit cube, open at `z = 1`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::codec::Codec;
use crate::colorimetry::{
    cmf_table, linear_to_srgb8, rgb_of_radiance, rgb_of_reflectance, spectrum_to_xyz,
    xyz_of_reflectance, xyz_to_linear_rgb, LinearRgb, Y_MAX,
};
use crate::dataset::{blackbody, daylight};
use crate::error::{Error, Result};
use crate::eval::percentile;
use crate::io::Rgb8Image;
use crate::rng::{hash_words, pixel_seed, StreamRng};
use crate::spectral::{SpectralCurve, N_SAMPLES};

pub const MAX_OBJECTS: usize = 8;
/// Depth at which Russian roulette starts for unbounded paths.
pub const RR_START_DEPTH: usize = 5;
pub const RR_MAX_SURVIVAL: f64 = 0.95;
/// Safety cap on unbounded paths.
pub const HARD_MAX_DEPTH: usize = 64;
const RAY_EPS: f64 = 1e-7;
const RR_STREAM_TAG: u64 = 0x5252_5f73_7472_6d;

pub static REFERENCE_SCENE: &str = include_str!("../assets/cornell.scn");
pub static NARROWBAND_SCENE: &str = include_str!("../assets/cornell_narrowband.scn");

/// Channel image, row-major, pixel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ChannelImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Dimension {
                expected: width * height * channels,
                got: data.len(),
            });
        }
        Ok(ChannelImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        ChannelImage {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn max_abs_diff(&self, other: &ChannelImage) -> Result<f64> {
        if (self.width, self.height, self.channels) != (other.width, other.height, other.channels) {
            return Err(Error::Dimension {
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Interleave `parts` channel-wise: pass `p` supplies channels
    /// `3p..3p+3` of every pixel.
    pub fn concat_channels(parts: &[ChannelImage]) -> Result<ChannelImage> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("no images to concatenate".into()))?;
        let (w, h) = (first.width, first.height);
        if parts.iter().any(|p| p.width != w || p.height != h) {
            return Err(Error::Config("pass images differ in size".into()));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(w * h * channels);
        for i in 0..w * h {
            for p in parts {
                data.extend_from_slice(p.pixel(i));
            }
        }
        ChannelImage::new(w, h, channels, data)
    }
}

type Vec3 = [f64; 3];

#[inline]
fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
fn mul(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn normalize(a: Vec3) -> Vec3 {
    mul(a, 1.0 / dot3(a, a).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// Axis-aligned rectangle `x[axis] = pos` spanning `lo..hi` on the other
    /// two axes in increasing order.
    Rect {
        axis: usize,
        pos: f64,
        lo: [f64; 2],
        hi: [f64; 2],
    },
    Sphere {
        center: Vec3,
        radius: f64,
    },
    Cuboid {
        min: Vec3,
        max: Vec3,
    },
}

fn other_axes(axis: usize) -> [usize; 2] {
    match axis {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}

impl Shape {
    /// Nearest hit with `t` in `(t_min, t_max)`: distance and outward normal.
    fn intersect(&self, o: Vec3, d: Vec3, t_min: f64, t_max: f64) -> Option<(f64, Vec3)> {
        match *self {
            Shape::Rect { axis, pos, lo, hi } => {
                if d[axis] == 0.0 {
                    return None;
                }
                let t = (pos - o[axis]) / d[axis];
                if !(t > t_min && t < t_max) {
                    return None;
                }
                let [a, b] = other_axes(axis);
                let (pa, pb) = (o[a] + t * d[a], o[b] + t * d[b]);
                if pa < lo[0] || pa > hi[0] || pb < lo[1] || pb > hi[1] {
                    return None;
                }
                let mut n = [0.0; 3];
                n[axis] = 1.0;
                Some((t, n))
            }
            Shape::Sphere { center, radius } => {
                let oc = sub(o, center);
                let b = dot3(oc, d);
                let c = dot3(oc, oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                for t in [-b - sq, -b + sq] {
                    if t > t_min && t < t_max {
                        let p = add(o, mul(d, t));
                        return Some((t, mul(sub(p, center), 1.0 / radius)));
                    }
                }
                None
            }
            Shape::Cuboid { min, max } => {
                let mut t0 = t_min;
                let mut t1 = t_max;
                let mut axis_in = usize::MAX;
                let mut axis_out = usize::MAX;
                for a in 0..3 {
                    let inv = 1.0 / d[a];
                    let (mut ta, mut tb) = ((min[a] - o[a]) * inv, (max[a] - o[a]) * inv);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    if ta > t0 {
                        t0 = ta;
                        axis_in = a;
                    }
                    if tb < t1 {
                        t1 = tb;
                        axis_out = a;
                    }
                    if t0 > t1 {
                        return None;
                    }
                }
                let (t, axis) = if axis_in != usize::MAX {
                    (t0, axis_in)
                } else if axis_out != usize::MAX {
                    (t1, axis_out)
                } else {
                    return None;
                };
                if !(t > t_min && t < t_max) {
                    return None;
                }
                let mut n = [0.0; 3];
                n[axis] = if d[axis] > 0.0 { -1.0 } else { 1.0 };
                if axis == axis_out && axis_in == usize::MAX {
                    n[axis] = -n[axis];
                }
                Some((t, n))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Material {
    pub name: String,
    pub albedo: SpectralCurve,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Surface {
    pub shape: Shape,
    pub material: usize,
}

/// Downward-facing square emitter in a horizontal plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Light {
    pub center: Vec3,
    pub size: [f64; 2],
    /// Emitted radiance spectrum, power already applied.
    pub spd: SpectralCurve,
}

impl Light {
    fn area(&self) -> f64 {
        self.size[0] * self.size[1]
    }

    fn rect(&self) -> Shape {
        let c = self.center;
        Shape::Rect {
            axis: 1,
            pos: c[1],
            lo: [c[0] - 0.5 * self.size[0], c[2] - 0.5 * self.size[1]],
            hi: [c[0] + 0.5 * self.size[0], c[2] + 0.5 * self.size[1]],
        }
    }

    fn sample(&self, u: f64, v: f64) -> Vec3 {
        [
            self.center[0] + (u - 0.5) * self.size[0],
            self.center[1],
            self.center[2] + (v - 0.5) * self.size[1],
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub target: Vec3,
    /// Vertical field of view in degrees.
    pub fov: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            position: [0.5, 0.5, 2.3],
            target: [0.5, 0.5, 0.0],
            fov: 38.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub camera: Camera,
    pub materials: Vec<Material>,
    pub surfaces: Vec<Surface>,
    pub lights: Vec<Light>,
}

const WALL_NAMES: [&str; 5] = ["floor", "ceiling", "back", "left", "right"];

fn wall_shape(i: usize) -> Shape {
    let (axis, pos) = match i {
        0 => (1, 0.0),
        1 => (1, 1.0),
        2 => (2, 0.0),
        3 => (0, 0.0),
        _ => (0, 1.0),
    };
    Shape::Rect {
        axis,
        pos,
        lo: [0.0, 0.0],
        hi: [1.0, 1.0],
    }
}

impl Scene {
    pub fn reference() -> Scene {
        parse_scene(REFERENCE_SCENE, "cornell.scn").expect("bundled scene parses")
    }

    pub fn narrowband_reference() -> Scene {
        parse_scene(NARROWBAND_SCENE, "cornell_narrowband.scn").expect("bundled scene parses")
    }

    pub fn validate(&self) -> Result<()> {
        if self.lights.is_empty() {
            return Err(Error::Scene("at least one light is required".into()));
        }
        for m in &self.materials {
            m.albedo
                .check_reflectance()
                .map_err(|e| Error::Scene(format!("material '{}': {e}", m.name)))?;
        }
        let objects = self
            .surfaces
            .iter()
            .filter(|s| !matches!(s.shape, Shape::Rect { .. }))
            .count();
        if objects > MAX_OBJECTS {
            return Err(Error::Scene(format!(
                "{objects} objects exceed the limit of {MAX_OBJECTS}"
            )));
        }
        if self
            .surfaces
            .iter()
            .any(|s| s.material >= self.materials.len())
        {
            return Err(Error::Scene("surface references a missing material".into()));
        }
        if !(self.camera.fov > 0.0 && self.camera.fov < 180.0) {
            return Err(Error::Scene(format!(
                "camera fov {} out of range",
                self.camera.fov
            )));
        }
        Ok(())
    }

    /// Multiply every light by `alpha`.
    pub fn scale_lights(&self, alpha: f64) -> Result<Scene> {
        let mut s = self.clone();
        for l in &mut s.lights {
            l.spd = l.spd.scale(alpha)?;
        }
        Ok(s)
    }

    /// Replace every light spectrum.
    pub fn with_light_spd(&self, spd: &SpectralCurve) -> Scene {
        let mut s = self.clone();
        for l in &mut s.lights {
            l.spd = spd.clone();
        }
        s
    }
}

/// Parse a spectrum expression; the result is zeroed outside 400-700 nm.
pub fn parse_spectrum(expr: &str) -> std::result::Result<SpectralCurve, String> {
    let mut total = SpectralCurve::zero();
    for term in expr.split('+') {
        let words: Vec<&str> = term.split_whitespace().collect();
        let Some((&head, args)) = words.split_first() else {
            return Err("empty spectrum term".into());
        };
        let nums = args
            .iter()
            .map(|a| {
                a.parse::<f64>()
                    .map_err(|e| format!("bad number '{a}': {e}"))
            })
            .collect::<std::result::Result<Vec<f64>, String>>()?;
        let want = |lo: usize, hi: usize| -> std::result::Result<(), String> {
            if nums.len() < lo || nums.len() > hi {
                Err(format!(
                    "'{head}' takes {lo}..={hi} arguments, got {}",
                    nums.len()
                ))
            } else {
                Ok(())
            }
        };
        let curve = match head {
            "flat" => {
                want(1, 1)?;
                SpectralCurve::flat(nums[0]).map_err(|e| e.to_string())?
            }
            "blackbody" => {
                want(1, 1)?;
                if !(nums[0] > 0.0) {
                    return Err("blackbody temperature must be positive".into());
                }
                blackbody(nums[0])
            }
            "daylight" => {
                want(1, 1)?;
                if !(nums[0] >= 4000.0 && nums[0] <= 25000.0) {
                    return Err("daylight CCT must lie in 4000..=25000 K".into());
                }
                daylight(nums[0]).map_err(|e| e.to_string())?
            }
            "d65" => {
                want(0, 0)?;
                SpectralCurve::new(cmf_table().d65.map(|v| v / 100.0)).map_err(|e| e.to_string())?
            }
            "gaussian" => {
                want(2, 4)?;
                let (c, s) = (nums[0], nums[1]);
                let peak = nums.get(2).copied().unwrap_or(1.0);
                let base = nums.get(3).copied().unwrap_or(0.0);
                if !(s > 0.0) {
                    return Err("gaussian sigma must be positive".into());
                }
                SpectralCurve::from_fn(|l| base + peak * (-(l - c).powi(2) / (2.0 * s * s)).exp())
                    .map_err(|e| e.to_string())?
            }
            "samples" => {
                want(N_SAMPLES, N_SAMPLES)?;
                SpectralCurve::from_slice(&nums).map_err(|e| e.to_string())?
            }
            other => return Err(format!("unknown spectrum '{other}'")),
        };
        total = total.add(&curve);
    }
    Ok(total.zero_outside_visible())
}

fn parse_vec3(v: &str) -> std::result::Result<Vec3, String> {
    let n: Vec<f64> = v
        .split_whitespace()
        .map(|a| {
            a.parse::<f64>()
                .map_err(|e| format!("bad number '{a}': {e}"))
        })
        .collect::<std::result::Result<_, _>>()?;
    n.try_into()
        .map_err(|n: Vec<f64>| format!("expected 3 numbers, got {}", n.len()))
}

fn parse_num(v: &str) -> std::result::Result<f64, String> {
    v.trim()
        .parse::<f64>()
        .map_err(|e| format!("bad number '{v}': {e}"))
}

#[derive(Default)]
struct Block {
    kind: String,
    line: usize,
    fields: Vec<(usize, String, String)>,
}

pub fn parse_scene(text: &str, source: &str) -> Result<Scene> {
    let err = |line: usize, msg: String| Error::format(format!("{source}:{line}"), msg);
    let mut camera = Camera::default();
    let mut materials: Vec<Material> = Vec::new();
    let mut walls: Option<(usize, Vec<String>)> = None;
    let mut blocks: Vec<Block> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            let Some(kind) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) else {
                return Err(err(line_no, format!("malformed block header '{line}'")));
            };
            blocks.push(Block {
                kind: kind.trim().to_string(),
                line: line_no,
                fields: Vec::new(),
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(
                line_no,
                format!("expected 'key = value', found '{line}'"),
            ));
        };
        let (key, value) = (key.trim(), value.trim());
        if let Some(block) = blocks.last_mut() {
            block
                .fields
                .push((line_no, key.to_string(), value.to_string()));
            continue;
        }
        match key {
            "camera.position" => {
                camera.position = parse_vec3(value).map_err(|m| err(line_no, m))?
            }
            "camera.target" => camera.target = parse_vec3(value).map_err(|m| err(line_no, m))?,
            "camera.fov" => camera.fov = parse_num(value).map_err(|m| err(line_no, m))?,
            "walls" => {
                walls = Some((
                    line_no,
                    value.split_whitespace().map(str::to_string).collect(),
                ))
            }
            _ if key.starts_with("material ") => {
                let name = key["material ".len()..].trim().to_string();
                if materials.iter().any(|m| m.name == name) {
                    return Err(err(line_no, format!("material '{name}' defined twice")));
                }
                let albedo = parse_spectrum(value).map_err(|m| err(line_no, m))?;
                albedo
                    .check_reflectance()
                    .map_err(|e| err(line_no, format!("material '{name}': {e}")))?;
                materials.push(Material { name, albedo });
            }
            _ => return Err(err(line_no, format!("unknown key '{key}'"))),
        }
    }
    let material_index = |name: &str, line: usize| {
        materials
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| err(line, format!("unknown material '{name}'")))
    };
    let mut surfaces = Vec::new();
    if let Some((line, names)) = walls {
        if names.len() != 5 {
            return Err(err(
                line,
                format!(
                    "walls needs 5 materials ({}), got {}",
                    WALL_NAMES.join(" "),
                    names.len()
                ),
            ));
        }
        for (i, name) in names.iter().enumerate() {
            if name != "none" {
                surfaces.push(Surface {
                    shape: wall_shape(i),
                    material: material_index(name, line)?,
                });
            }
        }
    }
    let mut lights = Vec::new();
    for b in &blocks {
        let get = |k: &str| -> Result<(usize, &str)> {
            b.fields
                .iter()
                .find(|(_, key, _)| key == k)
                .map(|(l, _, v)| (*l, v.as_str()))
                .ok_or_else(|| err(b.line, format!("[{}] block needs '{k}'", b.kind)))
        };
        let known: &[&str] = match b.kind.as_str() {
            "sphere" => &["center", "radius", "material"],
            "box" => &["min", "max", "material"],
            "light" => &["center", "size", "spd", "power"],
            other => return Err(err(b.line, format!("unknown block [{other}]"))),
        };
        if let Some((l, k, _)) = b
            .fields
            .iter()
            .find(|(_, k, _)| !known.contains(&k.as_str()))
        {
            return Err(err(*l, format!("unknown key '{k}' in [{}]", b.kind)));
        }
        let v3 = |k: &str| -> Result<Vec3> {
            let (l, v) = get(k)?;
            parse_vec3(v).map_err(|m| err(l, m))
        };
        let num = |k: &str| -> Result<f64> {
            let (l, v) = get(k)?;
            parse_num(v).map_err(|m| err(l, m))
        };
        match b.kind.as_str() {
            "sphere" => {
                let radius = num("radius")?;
                if !(radius > 0.0) {
                    return Err(err(b.line, "sphere radius must be positive".into()));
                }
                let (l, m) = get("material")?;
                surfaces.push(Surface {
                    shape: Shape::Sphere {
                        center: v3("center")?,
                        radius,
                    },
                    material: material_index(m, l)?,
                });
            }
            "box" => {
                let (min, max) = (v3("min")?, v3("max")?);
                if (0..3).any(|a| !(max[a] > min[a])) {
                    return Err(err(b.line, "box max must exceed min on every axis".into()));
                }
                let (l, m) = get("material")?;
                surfaces.push(Surface {
                    shape: Shape::Cuboid { min, max },
                    material: material_index(m, l)?,
                });
            }
            _ => {
                let (l, size) = get("size")?;
                let size: Vec<f64> = size
                    .split_whitespace()
                    .map(parse_num)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|m| err(l, m))?;
                let size: [f64; 2] = size
                    .try_into()
                    .map_err(|_| err(l, "size takes 2 numbers".into()))?;
                if !(size[0] > 0.0 && size[1] > 0.0) {
                    return Err(err(l, "light size must be positive".into()));
                }
                let (l, spd) = get("spd")?;
                let spd = parse_spectrum(spd).map_err(|m| err(l, m))?;
                let power = match b.fields.iter().find(|(_, k, _)| k == "power") {
                    Some((l, _, v)) => parse_num(v).map_err(|m| err(*l, m))?,
                    None => 1.0,
                };
                let spd = spd.scale(power).map_err(|e| err(b.line, e.to_string()))?;
                lights.push(Light {
                    center: v3("center")?,
                    size,
                    spd,
                });
            }
        }
    }
    let scene = Scene {
        camera,
        materials,
        surfaces,
        lights,
    };
    scene.validate()?;
    Ok(scene)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Spectral,
    Latent,
    Rgb,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "spectral" => Ok(Mode::Spectral),
            "latent" => Ok(Mode::Latent),
            "rgb" => Ok(Mode::Rgb),
            _ => Err(Error::Config(format!(
                "unknown mode '{s}' (spectral, latent, rgb)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderJob {
    pub width: usize,
    pub height: usize,
    pub spp: usize,
    /// Surface vertices with direct lighting per path; −1 is unbounded.
    pub max_depth: i32,
    pub seed: u64,
}

impl RenderJob {
    pub fn new(width: usize, height: usize, spp: usize, max_depth: i32, seed: u64) -> Self {
        RenderJob {
            width,
            height,
            spp,
            max_depth,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if self.spp == 0 {
            return Err(Error::Config("spp must be >= 1".into()));
        }
        if !(self.max_depth >= 1 || self.max_depth == -1) {
            return Err(Error::Config(format!(
                "max_depth must be >= 1 or -1, got {}",
                self.max_depth
            )));
        }
        Ok(())
    }

    fn depth_limit(&self) -> usize {
        if self.max_depth < 0 {
            HARD_MAX_DEPTH
        } else {
            self.max_depth as usize
        }
    }
}

/// Scene spectra converted to one shading representation.
#[derive(Clone, Debug)]
pub struct ShadingAssets {
    pub channels: usize,
    /// Channel values executed per lane: 1 for spectral, 3 for RGB passes.
    pub lane_width: usize,
    pub albedo: Vec<Vec<f64>>,
    pub emission: Vec<Vec<f64>>,
    /// Channel-free luminance factor of each material (D65 reflectance Y).
    pub luminance: Vec<f64>,
}

fn material_luminance(scene: &Scene) -> Vec<f64> {
    scene
        .materials
        .iter()
        .map(|m| xyz_of_reflectance(&m.albedo).y() / Y_MAX)
        .collect()
}

impl ShadingAssets {
    pub fn spectral(scene: &Scene) -> Self {
        ShadingAssets {
            channels: N_SAMPLES,
            lane_width: 1,
            albedo: scene
                .materials
                .iter()
                .map(|m| m.albedo.as_slice().to_vec())
                .collect(),
            emission: scene
                .lights
                .iter()
                .map(|l| l.spd.as_slice().to_vec())
                .collect(),
            luminance: material_luminance(scene),
        }
    }

    /// Albedos as linear sRGB under D65, emitters as radiance-convention
    /// linear sRGB; negative (out-of-gamut) components are clamped to 0.
    pub fn rgb(scene: &Scene) -> Self {
        let clamp = |c: LinearRgb| c.0.iter().map(|v| v.max(0.0)).collect::<Vec<f64>>();
        ShadingAssets {
            channels: 3,
            lane_width: 3,
            albedo: scene
                .materials
                .iter()
                .map(|m| clamp(rgb_of_reflectance(&m.albedo)))
                .collect(),
            emission: scene
                .lights
                .iter()
                .map(|l| clamp(rgb_of_radiance(&l.spd)))
                .collect(),
            luminance: material_luminance(scene),
        }
    }

    /// Full k-channel codes.
    pub fn latent(scene: &Scene, codec: &Codec) -> Self {
        ShadingAssets {
            channels: codec.k(),
            lane_width: 3,
            albedo: scene
                .materials
                .iter()
                .map(|m| codec.encode(&m.albedo).into_inner())
                .collect(),
            emission: scene
                .lights
                .iter()
                .map(|l| codec.encode(&l.spd).into_inner())
                .collect(),
            luminance: material_luminance(scene),
        }
    }

    /// Block `b` of every code: the assets of one RGB pass.
    pub fn block(&self, b: usize) -> Result<Self> {
        if 3 * (b + 1) > self.channels {
            return Err(Error::Config(format!(
                "block {b} out of range for {} channels",
                self.channels
            )));
        }
        let take = |v: &Vec<f64>| v[3 * b..3 * b + 3].to_vec();
        Ok(ShadingAssets {
            channels: 3,
            lane_width: 3,
            albedo: self.albedo.iter().map(take).collect(),
            emission: self.emission.iter().map(take).collect(),
            luminance: self.luminance.clone(),
        })
    }

    fn lanes(&self) -> u64 {
        self.channels.div_ceil(self.lane_width) as u64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderStats {
    /// Surface shading events: one per light sample and one per
    /// throughput update.
    pub shading_events: u64,
    /// Shading events times lanes per event.
    pub lane_evaluations: u64,
    pub rays: u64,
    /// Hash of every hit point of every path through each pixel.
    pub path_hashes: Vec<u64>,
}

impl RenderStats {
    fn merge(&mut self, other: &RenderStats) {
        self.shading_events += other.shading_events;
        self.lane_evaluations += other.lane_evaluations;
        self.rays += other.rays;
    }
}

struct Hit {
    t: f64,
    normal: Vec3,
    /// Index into surfaces, or `surfaces.len() + light`.
    id: usize,
}

struct Tracer<'a> {
    scene: &'a Scene,
    light_rects: Vec<Shape>,
}

impl<'a> Tracer<'a> {
    fn new(scene: &'a Scene) -> Self {
        Tracer {
            scene,
            light_rects: scene.lights.iter().map(Light::rect).collect(),
        }
    }

    fn intersect(&self, o: Vec3, d: Vec3, t_max: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut limit = t_max;
        let shapes = self
            .scene
            .surfaces
            .iter()
            .map(|s| &s.shape)
            .chain(&self.light_rects);
        for (id, shape) in shapes.enumerate() {
            if let Some((t, normal)) = shape.intersect(o, d, RAY_EPS, limit) {
                limit = t;
                best = Some(Hit { t, normal, id });
            }
        }
        best
    }

    fn occluded(&self, o: Vec3, d: Vec3, dist: f64) -> bool {
        let limit = dist * (1.0 - 1e-9);
        let shapes = self
            .scene
            .surfaces
            .iter()
            .map(|s| &s.shape)
            .chain(&self.light_rects);
        for shape in shapes {
            if shape.intersect(o, d, RAY_EPS, limit).is_some() {
                return true;
            }
        }
        false
    }

    fn camera_ray(&self, job: &RenderJob, x: usize, y: usize, jx: f64, jy: f64) -> (Vec3, Vec3) {
        let cam = &self.scene.camera;
        let forward = normalize(sub(cam.target, cam.position));
        let right = normalize(cross(forward, [0.0, 1.0, 0.0]));
        let up = cross(right, forward);
        let half_h = (cam.fov.to_radians() * 0.5).tan();
        let half_w = half_h * job.width as f64 / job.height as f64;
        let px = (2.0 * (x as f64 + jx) / job.width as f64 - 1.0) * half_w;
        let py = (1.0 - 2.0 * (y as f64 + jy) / job.height as f64) * half_h;
        (
            cam.position,
            normalize(add(forward, add(mul(right, px), mul(up, py)))),
        )
    }

    /// One camera sample; adds its radiance into `acc`.
    #[allow(clippy::too_many_arguments)]
    fn trace(
        &self,
        assets: &ShadingAssets,
        job: &RenderJob,
        x: usize,
        y: usize,
        sample: usize,
        acc: &mut [f64],
        throughput: &mut [f64],
        stats: &mut RenderStats,
        path_hash: &mut u64,
    ) {
        let seed = pixel_seed(job.seed, x as u32, y as u32, sample as u32);
        let mut rng = StreamRng::seed_from_u64(seed);
        let mut rr_rng = StreamRng::seed_from_u64(hash_words(&[seed, RR_STREAM_TAG]));
        let lanes = assets.lanes();
        let n_surf = self.scene.surfaces.len();
        let (mut o, mut d) = self.camera_ray(job, x, y, rng.random(), rng.random());
        throughput.iter_mut().for_each(|t| *t = 1.0);
        let mut lum = 1.0f64;
        let limit = job.depth_limit();
        let mut depth = 0;
        loop {
            stats.rays += 1;
            let Some(hit) = self.intersect(o, d, f64::INFINITY) else {
                break;
            };
            let p = add(o, mul(d, hit.t));
            *path_hash = hash_words(&[*path_hash, p[0].to_bits(), p[1].to_bits(), p[2].to_bits()]);
            if hit.id >= n_surf {
                // Emitters face down; only camera rays collect emission, later
                // bounces account for lights through next-event estimation.
                if depth == 0 && d[1] > 0.0 {
                    let e = &assets.emission[hit.id - n_surf];
                    for c in 0..acc.len() {
                        acc[c] += throughput[c] * e[c];
                    }
                    stats.shading_events += 1;
                    stats.lane_evaluations += lanes;
                }
                break;
            }
            depth += 1;
            let mut n = hit.normal;
            if dot3(n, d) > 0.0 {
                n = mul(n, -1.0);
            }
            let origin = add(p, mul(n, RAY_EPS));
            let mat = self.scene.surfaces[hit.id].material;
            let albedo = &assets.albedo[mat];
            for (li, light) in self.scene.lights.iter().enumerate() {
                let q = light.sample(rng.random(), rng.random());
                let to = sub(q, origin);
                let dist2 = dot3(to, to);
                let dist = dist2.sqrt();
                let wi = mul(to, 1.0 / dist);
                let cos_s = dot3(n, wi);
                let cos_l = wi[1];
                if cos_s <= 0.0 || cos_l <= 0.0 {
                    continue;
                }
                stats.rays += 1;
                if self.occluded(origin, wi, dist) {
                    continue;
                }
                let g = cos_s * cos_l * light.area() / (PI * dist2);
                let e = &assets.emission[li];
                for c in 0..acc.len() {
                    acc[c] += throughput[c] * albedo[c] * e[c] * g;
                }
                stats.shading_events += 1;
                stats.lane_evaluations += lanes;
            }
            if depth >= limit {
                break;
            }
            // Cosine-weighted bounce; the Lambertian weight is the albedo.
            let (u1, u2): (f64, f64) = (rng.random(), rng.random());
            let r = u1.sqrt();
            let phi = 2.0 * PI * u2;
            let local = [r * phi.cos(), r * phi.sin(), (1.0 - u1).max(0.0).sqrt()];
            let t_axis = if n[0].abs() > 0.9 {
                [0.0, 1.0, 0.0]
            } else {
                [1.0, 0.0, 0.0]
            };
            let tangent = normalize(cross(t_axis, n));
            let bitangent = cross(n, tangent);
            d = normalize(add(
                add(mul(tangent, local[0]), mul(bitangent, local[1])),
                mul(n, local[2]),
            ));
            o = origin;
            for c in 0..throughput.len() {
                throughput[c] *= albedo[c];
            }
            stats.shading_events += 1;
            stats.lane_evaluations += lanes;
            lum *= assets.luminance[mat];
            if job.max_depth < 0 && depth >= RR_START_DEPTH {
                let survive = lum.min(RR_MAX_SURVIVAL);
                if survive <= 0.0 || rr_rng.random::<f64>() >= survive {
                    break;
                }
                lum /= survive;
                for t in throughput.iter_mut() {
                    *t /= survive;
                }
            }
        }
    }
}

/// Render with prepared assets. Pixels run in parallel; each pixel's result
/// depends only on its own seeds, so output is schedule-independent.
pub fn render_assets(
    scene: &Scene,
    job: &RenderJob,
    assets: &ShadingAssets,
) -> Result<(ChannelImage, RenderStats)> {
    scene.validate()?;
    job.validate()?;
    if assets.albedo.len() != scene.materials.len() || assets.emission.len() != scene.lights.len() {
        return Err(Error::Scene("assets do not match the scene".into()));
    }
    if assets
        .albedo
        .iter()
        .chain(&assets.emission)
        .any(|v| v.len() != assets.channels)
    {
        return Err(Error::Dimension {
            expected: assets.channels,
            got: 0,
        });
    }
    let tracer = Tracer::new(scene);
    let ch = assets.channels;
    let rows: Vec<(Vec<f64>, RenderStats)> = (0..job.height)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; job.width * ch];
            let mut stats = RenderStats {
                path_hashes: Vec::with_capacity(job.width),
                ..Default::default()
            };
            let mut throughput = vec![0.0; ch];
            let mut acc = vec![0.0; ch];
            for x in 0..job.width {
                acc.iter_mut().for_each(|a| *a = 0.0);
                let mut h = 0u64;
                for s in 0..job.spp {
                    tracer.trace(
                        assets,
                        job,
                        x,
                        y,
                        s,
                        &mut acc,
                        &mut throughput,
                        &mut stats,
                        &mut h,
                    );
                }
                let inv = 1.0 / job.spp as f64;
                for c in 0..ch {
                    row[x * ch + c] = acc[c] * inv;
                }
                stats.path_hashes.push(h);
            }
            (row, stats)
        })
        .collect();
    let mut data = Vec::with_capacity(job.width * job.height * ch);
    let mut stats = RenderStats::default();
    for (row, s) in rows {
        data.extend(row);
        stats.merge(&s);
        stats.path_hashes.extend(s.path_hashes);
    }
    Ok((ChannelImage::new(job.width, job.height, ch, data)?, stats))
}

/// Single render in the given mode; latent mode needs a codec and renders
/// all k channels at once.
pub fn render(
    scene: &Scene,
    job: &RenderJob,
    mode: Mode,
    codec: Option<&Codec>,
) -> Result<(ChannelImage, RenderStats)> {
    let assets = match mode {
        Mode::Spectral => ShadingAssets::spectral(scene),
        Mode::Rgb => ShadingAssets::rgb(scene),
        Mode::Latent => ShadingAssets::latent(
            scene,
            codec.ok_or_else(|| Error::Config("latent mode needs a codec".into()))?,
        ),
    };
    render_assets(scene, job, &assets)
}

/// k/3 three-channel passes, pass `p` shading with block `p` of every code,
/// all with the same seed; outputs are concatenated into a k-channel image.
pub fn render_latent_multipass(
    scene: &Scene,
    job: &RenderJob,
    codec: &Codec,
) -> Result<(ChannelImage, RenderStats)> {
    let full = ShadingAssets::latent(scene, codec);
    let mut passes = Vec::new();
    let mut stats = RenderStats::default();
    for b in 0..codec.blocks() {
        let (img, s) = render_assets(scene, job, &full.block(b)?)?;
        if b == 0 {
            stats.path_hashes = s.path_hashes.clone();
        }
        stats.merge(&s);
        passes.push(img);
    }
    Ok((ChannelImage::concat_channels(&passes)?, stats))
}

/// Per-pixel decode of a latent image into a 47-channel spectral image.
pub fn decode_image(img: &ChannelImage, codec: &Codec) -> Result<ChannelImage> {
    if img.channels != codec.k() {
        return Err(Error::Dimension {
            expected: codec.k(),
            got: img.channels,
        });
    }
    let data = (0..img.pixels())
        .flat_map(|i| codec.decode_slice(img.pixel(i)))
        .collect();
    ChannelImage::new(img.width, img.height, N_SAMPLES, data)
}

/// Linear sRGB of every pixel. 47 channels are spectra, a codec's k
/// channels are codes, 3 channels are already linear sRGB.
pub fn image_linear_rgb(img: &ChannelImage, codec: Option<&Codec>) -> Result<Vec<LinearRgb>> {
    let spectral_rgb = |s: &[f64]| xyz_to_linear_rgb(crate::colorimetry::xyz_of_slice(s));
    match (img.channels, codec) {
        (c, Some(codec)) if c == codec.k() => Ok((0..img.pixels())
            .map(|i| spectral_rgb(&codec.decode_slice(img.pixel(i))))
            .collect()),
        (N_SAMPLES, _) => Ok((0..img.pixels())
            .map(|i| spectral_rgb(img.pixel(i)))
            .collect()),
        (3, _) => Ok((0..img.pixels())
            .map(|i| {
                let p = img.pixel(i);
                LinearRgb([p[0], p[1], p[2]])
            })
            .collect()),
        (c, _) => Err(Error::Config(format!(
            "cannot interpret a {c}-channel image; latent images need their codec"
        ))),
    }
}

pub fn luminance(c: LinearRgb) -> f64 {
    0.2126 * c.0[0] + 0.7152 * c.0[1] + 0.0722 * c.0[2]
}

/// Exposure mapping the 99th-percentile luminance of `reference` to 1.
pub fn shared_exposure(reference: &[LinearRgb]) -> f64 {
    let lum: Vec<f64> = reference.iter().map(|&c| luminance(c)).collect();
    let p = percentile(&lum, 0.99);
    if p > 0.0 && p.is_finite() {
        1.0 / p
    } else {
        1.0
    }
}

pub fn to_srgb8(pixels: &[LinearRgb], width: usize, height: usize, exposure: f64) -> Rgb8Image {
    Rgb8Image {
        width,
        height,
        pixels: pixels
            .iter()
            .map(|c| linear_to_srgb8(LinearRgb(c.0.map(|v| v * exposure))))
            .collect(),
    }
}

/// Convert to an 8-bit image with the given shared exposure.
pub fn image_to_srgb(
    img: &ChannelImage,
    codec: Option<&Codec>,
    exposure: f64,
) -> Result<Rgb8Image> {
    Ok(to_srgb8(
        &image_linear_rgb(img, codec)?,
        img.width,
        img.height,
        exposure,
    ))
}

/// Per-pixel MSE over linear sRGB channels, and its mean.
pub fn error_map(a: &[LinearRgb], b: &[LinearRgb]) -> Result<(Vec<f64>, f64)> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyDataset("images have no pixels".into()));
    }
    let map: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(p, q)| (0..3).map(|c| (p.0[c] - q.0[c]).powi(2)).sum::<f64>() / 3.0)
        .collect();
    let mean = map.iter().sum::<f64>() / map.len() as f64;
    Ok((map, mean))
}

/// Grey-scale visualisation of an error map, normalised by its maximum.
pub fn error_map_image(map: &[f64], width: usize, height: usize) -> Rgb8Image {
    let max = map.iter().copied().fold(0.0, f64::max);
    Rgb8Image {
        width,
        height,
        pixels: map
            .iter()
            .map(|&v| {
                let g = if max > 0.0 {
                    (v / max * 255.0).round() as u8
                } else {
                    0
                };
                [g, g, g]
            })
            .collect(),
    }
}

/// Cap rayon's worker count from `HADACODEC_THREADS` (0 or unset = auto).
pub fn init_thread_pool() {
    static INIT: OnceLock<()> = OnceLock::new();
    INIT.get_or_init(|| {
        let threads = std::env::var("HADACODEC_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or(0);
        if threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    });
}

/// XYZ of a spectral pixel, for callers comparing in colour space.
pub fn pixel_xyz(spectrum: &[f64]) -> crate::colorimetry::Xyz {
    spectrum_to_xyz(&SpectralCurve::from_slice(spectrum).unwrap_or_else(|_| SpectralCurve::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_job(depth: i32) -> RenderJob {
        RenderJob::new(12, 10, 4, depth, 3)
    }

    #[test]
    fn reference_scenes_parse() {
        let s = Scene::reference();
        assert_eq!(s.lights.len(), 1);
        assert_eq!(s.surfaces.len(), 7);
        assert_eq!(s.materials.len(), 5);
        Scene::narrowband_reference().validate().unwrap();
    }

    #[test]
    fn scene_errors_carry_lines() {
        let e = parse_scene("camera.fov = 40\nbogus = 1\n", "s.scn")
            .unwrap_err()
            .to_string();
        assert!(e.contains("s.scn:2"), "{e}");
        let e = parse_scene("material m = flat 1.5\n", "s.scn")
            .unwrap_err()
            .to_string();
        assert!(e.contains("s.scn:1"), "{e}");
        let e = parse_scene("material m = flat 0.5\nwalls = m m m m m\n", "s.scn")
            .unwrap_err()
            .to_string();
        assert!(e.contains("light"), "{e}");
        assert!(parse_spectrum("gaussian 500").is_err());
        assert!(parse_spectrum("wobble 3").is_err());
    }

    #[test]
    fn spectrum_expressions() {
        let s = parse_spectrum("flat 0.2 + gaussian 550 10 0.5").unwrap();
        let i = (0..N_SAMPLES)
            .find(|&i| crate::spectral::wavelength(i) > 540.0)
            .unwrap();
        assert!(s[i] > 0.2 && s[i] < 0.7);
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn shapes_intersect() {
        let sphere = Shape::Sphere {
            center: [0.0, 0.0, 0.0],
            radius: 1.0,
        };
        let (t, n) = sphere
            .intersect([0.0, 0.0, 5.0], [0.0, 0.0, -1.0], 1e-9, f64::INFINITY)
            .unwrap();
        assert!((t - 4.0).abs() < 1e-12);
        assert_eq!(n, [0.0, 0.0, 1.0]);
        let cube = Shape::Cuboid {
            min: [0.0; 3],
            max: [1.0; 3],
        };
        let (t, n) = cube
            .intersect([0.5, 3.0, 0.5], [0.0, -1.0, 0.0], 1e-9, f64::INFINITY)
            .unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        assert_eq!(n, [0.0, 1.0, 0.0]);
        let rect = wall_shape(0);
        assert!(rect
            .intersect([0.5, 0.5, 0.5], [0.0, -1.0, 0.0], 1e-9, f64::INFINITY)
            .is_some());
        assert!(rect
            .intersect([1.5, 0.5, 0.5], [0.0, -1.0, 0.0], 1e-9, f64::INFINITY)
            .is_none());
    }

    #[test]
    fn geometry_is_mode_independent() {
        let scene = Scene::reference();
        let job = small_job(-1);
        let (_, a) = render(&scene, &job, Mode::Spectral, None).unwrap();
        let (_, b) = render(&scene, &job, Mode::Rgb, None).unwrap();
        assert_eq!(a.path_hashes, b.path_hashes);
        assert_eq!(a.shading_events, b.shading_events);
        assert_eq!(a.lane_evaluations, 47 * b.lane_evaluations);
    }

    #[test]
    fn black_albedos_leave_only_emitters() {
        let mut scene = Scene::reference();
        for m in &mut scene.materials {
            m.albedo = SpectralCurve::zero();
        }
        let job = RenderJob::new(24, 24, 2, 3, 1);
        let (img, _) = render(&scene, &job, Mode::Spectral, None).unwrap();
        // Only pixels covering the panel are lit, by a fraction of its SPD.
        let spd = scene.lights[0].spd.as_slice();
        let peak = (0..N_SAMPLES)
            .max_by(|&a, &b| spd[a].total_cmp(&spd[b]))
            .unwrap();
        let mut lit = 0;
        for i in 0..img.pixels() {
            let p = img.pixel(i);
            let f = p[peak] / spd[peak];
            assert!((0.0..=1.0 + 1e-12).contains(&f));
            assert!(p
                .iter()
                .zip(spd)
                .all(|(a, b)| (a - f * b).abs() <= 1e-12 * b.max(1.0)));
            lit += usize::from(f > 0.0);
        }
        assert!(lit > 0 && lit < img.pixels() / 4);
        // Looking up at the panel shows emission only.
        scene.camera = Camera {
            position: [0.5, 0.1, 0.5],
            target: [0.5, 1.0, 0.5],
            fov: 20.0,
        };
        let (img, _) =
            render(&scene, &RenderJob::new(4, 4, 1, 3, 1), Mode::Spectral, None).unwrap();
        let spd = scene.lights[0].spd.as_slice();
        for i in 0..img.pixels() {
            let p = img.pixel(i);
            assert!(p.iter().zip(spd).all(|(a, b)| a == b || *a == 0.0));
        }
    }

    #[test]
    fn light_scaling_is_exact_linearity() {
        let scene = Scene::reference();
        let job = small_job(3);
        let (a, _) = render(&scene, &job, Mode::Spectral, None).unwrap();
        let (b, _) = render(
            &scene.scale_lights(2.0).unwrap(),
            &job,
            Mode::Spectral,
            None,
        )
        .unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn direct_lighting_matches_form_factor() {
        // Floor point under a centred square light; camera looks straight
        // down through a tiny field of view.
        let white = SpectralCurve::flat(0.5).unwrap().zero_outside_visible();
        let scene = Scene {
            camera: Camera {
                position: [0.5, 0.5, 0.5],
                target: [0.5, 0.0, 0.5000001],
                fov: 1e-4,
            },
            materials: vec![Material {
                name: "white".into(),
                albedo: white.clone(),
            }],
            surfaces: vec![Surface {
                shape: wall_shape(0),
                material: 0,
            }],
            lights: vec![Light {
                center: [0.5, 0.8, 0.5],
                size: [0.4, 0.4],
                spd: SpectralCurve::flat(2.0).unwrap().zero_outside_visible(),
            }],
        };
        let job = RenderJob::new(1, 1, 20000, 1, 11);
        let (img, _) = render(&scene, &job, Mode::Spectral, None).unwrap();
        // Differential area to a parallel rectangle, summed over four
        // quadrants of side a at height c.
        let (a, c) = (0.2f64, 0.8f64);
        let x = a / c;
        let s = (1.0 + x * x).sqrt();
        let quadrant = (x / s * (x / s).atan() + x / s * (x / s).atan()) / (2.0 * PI);
        let ff = 4.0 * quadrant;
        let expected = 0.5 * 2.0 * ff;
        let i = (0..N_SAMPLES)
            .find(|&i| crate::spectral::in_visible_band(i))
            .unwrap();
        assert!(
            (img.data[i] - expected).abs() / expected < 0.01,
            "{} vs {expected}",
            img.data[i]
        );
    }

    #[test]
    fn error_map_properties() {
        let a: Vec<LinearRgb> = (0..4).map(|i| LinearRgb([i as f64, 0.5, 0.25])).collect();
        let (m, mean) = error_map(&a, &a).unwrap();
        assert!(m.iter().all(|&v| v == 0.0) && mean == 0.0);
        let b: Vec<LinearRgb> = a.iter().map(|c| LinearRgb(c.0.map(|v| v + 0.1))).collect();
        let (m1, _) = error_map(&a, &b).unwrap();
        let (m2, _) = error_map(&b, &a).unwrap();
        assert_eq!(m1, m2);
        assert!(m1.iter().all(|&v| (v - 0.01).abs() < 1e-12));
    }

    #[test]
    fn concat_and_zero_image() {
        let a = ChannelImage::new(1, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = ChannelImage::new(1, 2, 3, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = ChannelImage::concat_channels(&[a, b]).unwrap();
        assert_eq!(c.pixel(1), &[4.0, 5.0, 6.0, 10.0, 11.0, 12.0]);
        let z = ChannelImage::zeros(2, 2, N_SAMPLES);
        let img = image_to_srgb(&z, None, 1.0).unwrap();
        assert!(img.pixels.iter().all(|p| *p == [0, 0, 0]));
    }

    #[test]
    fn job_validation() {
        assert!(RenderJob::new(4, 4, 0, 1, 0).validate().is_err());
        assert!(RenderJob::new(4, 4, 1, 0, 0).validate().is_err());
        assert!(RenderJob::new(4, 4, 1, -2, 0).validate().is_err());
        assert!(RenderJob::new(4, 4, 1, -1, 0).validate().is_ok());
    }
}
