//! RGB to latent-code MLP (3 -> 128 -> 128 -> k, SiLU) trained against a
//! frozen codec, and its per-pixel application to textures.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::colorimetry::{
    d65_white, delta_e76, lab_jacobian, reflectance_xyz_of_slice, rgb_of_reflectance,
    xyz_to_lab_unchecked, LinearRgb, Xyz,
};
use crate::error::{Error, Result};
use crate::io::{read_text, write_bytes};
use crate::optim::{clip_grad_norm, Adam, ReduceOnPlateau};
use crate::rng::stream;
use crate::spectral::SpectralCurve;

pub const HIDDEN: usize = 128;
pub const UPSAMPLER_VERSION: u32 = 1;

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in self.weight.chunks_exact(self.inputs).enumerate() {
            out[o] = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpsamplerMeta {
    pub seed: u64,
    pub epochs: usize,
    pub lambda_color: f64,
    pub lambda_maxabs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpsamplerWeights {
    pub version: u32,
    pub k: usize,
    pub dims: Vec<usize>,
    pub layers: Vec<Dense>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_meta: Option<UpsamplerMeta>,
}

impl UpsamplerWeights {
    /// Uniform(±1/sqrt(fan_in)) weights and biases.
    pub fn init(k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("upsampler k must be positive".into()));
        }
        let mut rng = stream(seed, "upsampler-init");
        let dims = vec![3, HIDDEN, HIDDEN, k];
        let layers = dims
            .windows(2)
            .map(|d| {
                let bound = 1.0 / (d[0] as f64).sqrt();
                let mut draw = |n: usize| {
                    (0..n)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect::<Vec<f64>>()
                };
                let weight = draw(d[0] * d[1]);
                let bias = draw(d[1]);
                Dense {
                    inputs: d[0],
                    outputs: d[1],
                    weight,
                    bias,
                }
            })
            .collect();
        Ok(UpsamplerWeights {
            version: UPSAMPLER_VERSION,
            k,
            dims,
            layers,
            training_meta: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != UPSAMPLER_VERSION {
            return Err(Error::Config(format!(
                "unsupported upsampler version {}",
                self.version
            )));
        }
        if self.dims != [3, HIDDEN, HIDDEN, self.k] || self.layers.len() != 3 {
            return Err(Error::Config(format!(
                "upsampler dims must be [3, {HIDDEN}, {HIDDEN}, k], got {:?}",
                self.dims
            )));
        }
        for (l, d) in self.layers.iter().zip(self.dims.windows(2)) {
            if l.inputs != d[0]
                || l.outputs != d[1]
                || l.weight.len() != d[0] * d[1]
                || l.bias.len() != d[1]
            {
                return Err(Error::Dimension {
                    expected: d[0] * d[1] + d[1],
                    got: l.weight.len() + l.bias.len(),
                });
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Config("upsampler parameters must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// All parameters as one vector: per layer, weights then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.weight);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_flat(&mut self, p: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }

    /// Unclamped network output.
    pub fn forward(&self, rgb: [f64; 3]) -> Vec<f64> {
        let mut h1 = vec![0.0; HIDDEN];
        let mut h2 = vec![0.0; HIDDEN];
        let mut out = vec![0.0; self.k];
        self.layers[0].forward(&rgb, &mut h1);
        h1.iter_mut().for_each(|v| *v = silu(*v));
        self.layers[1].forward(&h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = silu(*v));
        self.layers[2].forward(&h2, &mut out);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: UpsamplerWeights = serde_json::from_str(text)?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&read_text(path)?).map_err(|e| match e {
            Error::Json(j) => Error::format(path.display().to_string(), j.to_string()),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), self.to_json()?.as_bytes())
    }

    /// Weights trained against the shipped k=6 codec.
    pub fn shipped() -> Result<Self> {
        Self::from_json(include_str!("../assets/upsampler_k6.json"))
    }
}

/// Clamp-at-zero telemetry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClampStats {
    pub outputs: u64,
    pub clamped: u64,
}

/// Forward pass clamped at zero; returns the code and how many entries were
/// clamped.
pub fn upsample_counted(uw: &UpsamplerWeights, rgb: LinearRgb) -> (Vec<f64>, usize) {
    let mut z = uw.forward(rgb.0);
    let mut clamped = 0;
    for v in &mut z {
        if *v < 0.0 {
            *v = 0.0;
            clamped += 1;
        }
    }
    (z, clamped)
}

pub fn upsample(uw: &UpsamplerWeights, rgb: LinearRgb) -> Vec<f64> {
    upsample_counted(uw, rgb).0
}

/// Latent image (pixel-interleaved, k channels) of an RGB image.
pub fn upsample_image(uw: &UpsamplerWeights, pixels: &[LinearRgb]) -> (Vec<f64>, ClampStats) {
    let mut out = Vec::with_capacity(pixels.len() * uw.k);
    let mut stats = ClampStats::default();
    for &p in pixels {
        let (z, c) = upsample_counted(uw, p);
        stats.outputs += z.len() as u64;
        stats.clamped += c as u64;
        out.extend(z);
    }
    (out, stats)
}

/// Linear sRGB of a spectrum used as upsampler input: reflectances under D65
/// with white = (1,1,1).
pub fn rgb_of(s: &SpectralCurve) -> LinearRgb {
    rgb_of_reflectance(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpsampleTrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub lambda_color: f64,
    pub lambda_maxabs: f64,
    pub seed: u64,
}

impl Default for UpsampleTrainConfig {
    fn default() -> Self {
        UpsampleTrainConfig {
            lr: 2e-3,
            weight_decay: 1e-5,
            batch_size: 64,
            grad_clip_norm: 1.0,
            epochs: 4500,
            plateau_factor: 0.5,
            plateau_patience: 200,
            min_lr: 1e-6,
            lambda_color: 0.05,
            lambda_maxabs: 0.3,
            seed: 0,
        }
    }
}

impl UpsampleTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("grad_clip_norm", self.grad_clip_norm),
            ("plateau_factor", self.plateau_factor),
            ("min_lr", self.min_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("lambda_color", self.lambda_color),
            ("lambda_maxabs", self.lambda_maxabs),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.plateau_factor >= 1.0 {
            return Err(Error::Config("plateau_factor must be below 1".into()));
        }
        Ok(())
    }
}

/// Frozen decoder projected to reflectance XYZ: `M = W D`, 3 x k.
#[derive(Clone, Debug)]
pub struct ColorProjection {
    pub k: usize,
    pub m: Vec<[f64; 3]>,
    pub white: Xyz,
}

impl ColorProjection {
    pub fn new(codec: &Codec) -> Self {
        let k = codec.k();
        let m = (0..k)
            .map(|j| reflectance_xyz_of_slice(&codec.basis_spectrum(j)).0)
            .collect();
        ColorProjection {
            k,
            m,
            white: d65_white(),
        }
    }

    pub fn xyz(&self, z: &[f64]) -> Xyz {
        let mut c = [0.0; 3];
        for (col, &v) in self.m.iter().zip(z) {
            for i in 0..3 {
                c[i] += col[i] * v;
            }
        }
        Xyz(c)
    }
}

/// One training sample: input colour and target code.
#[derive(Clone, Debug, PartialEq)]
pub struct UpsamplePair {
    pub rgb: [f64; 3],
    pub z: Vec<f64>,
}

pub fn make_pairs(codec: &Codec, spectra: &[SpectralCurve]) -> Vec<UpsamplePair> {
    spectra
        .iter()
        .map(|s| UpsamplePair {
            rgb: rgb_of(s).0,
            z: codec.encode(s).into_inner(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpsampleLoss {
    pub mse: f64,
    pub maxabs: f64,
    pub color: f64,
}

impl UpsampleLoss {
    pub fn latent(&self, lambda_maxabs: f64) -> f64 {
        self.mse + lambda_maxabs * self.maxabs
    }

    pub fn total(&self, lambda_maxabs: f64, lambda_color: f64) -> f64 {
        self.latent(lambda_maxabs) + lambda_color * self.color
    }
}

struct Scratch {
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
    g_out: Vec<f64>,
    g_h2: Vec<f64>,
    g_h1: Vec<f64>,
}

impl Scratch {
    fn new(k: usize) -> Self {
        Scratch {
            a1: vec![0.0; HIDDEN],
            h1: vec![0.0; HIDDEN],
            a2: vec![0.0; HIDDEN],
            h2: vec![0.0; HIDDEN],
            out: vec![0.0; k],
            g_out: vec![0.0; k],
            g_h2: vec![0.0; HIDDEN],
            g_h1: vec![0.0; HIDDEN],
        }
    }
}

/// Batch-mean loss components; with `grads`, accumulates the gradient of
/// the total (with the given lambdas) into it.
pub fn loss_upsample(
    uw: &UpsamplerWeights,
    proj: &ColorProjection,
    batch: &[&UpsamplePair],
    lambda_maxabs: f64,
    lambda_color: f64,
    mut grads: Option<&mut [f64]>,
) -> UpsampleLoss {
    let k = uw.k;
    let nb = batch.len().max(1) as f64;
    let mut loss = UpsampleLoss::default();
    let mut s = Scratch::new(k);
    let [l1, l2, l3] = [&uw.layers[0], &uw.layers[1], &uw.layers[2]];
    let o1 = 0;
    let o2 = o1 + l1.param_count();
    let o3 = o2 + l2.param_count();
    for pair in batch {
        l1.forward(&pair.rgb, &mut s.a1);
        for i in 0..HIDDEN {
            s.h1[i] = silu(s.a1[i]);
        }
        l2.forward(&s.h1, &mut s.a2);
        for i in 0..HIDDEN {
            s.h2[i] = silu(s.a2[i]);
        }
        l3.forward(&s.h2, &mut s.out);

        let mut mse = 0.0;
        let mut arg = 0;
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            let d = s.out[j] - pair.z[j];
            mse += d * d;
            if d.abs() > max {
                max = d.abs();
                arg = j;
            }
        }
        loss.mse += mse / k as f64 / nb;
        loss.maxabs += max / nb;
        let xp = proj.xyz(&s.out);
        let xg = proj.xyz(&pair.z);
        let lp = xyz_to_lab_unchecked(xp, proj.white);
        let lg = xyz_to_lab_unchecked(xg, proj.white);
        let de = delta_e76(lp, lg);
        loss.color += de / nb;

        let Some(g) = grads.as_deref_mut() else {
            continue;
        };
        for j in 0..k {
            s.g_out[j] = 2.0 * (s.out[j] - pair.z[j]) / k as f64 / nb;
        }
        let d_arg = s.out[arg] - pair.z[arg];
        s.g_out[arg] += lambda_maxabs * d_arg.signum() / nb;
        if de > 0.0 && lambda_color != 0.0 {
            let jac = lab_jacobian(xp, proj.white);
            let dlab: [f64; 3] = std::array::from_fn(|i| (lp.0[i] - lg.0[i]) / de);
            let dxyz: [f64; 3] = std::array::from_fn(|c| (0..3).map(|r| jac[r][c] * dlab[r]).sum());
            for j in 0..k {
                let col = proj.m[j];
                s.g_out[j] +=
                    lambda_color * (col[0] * dxyz[0] + col[1] * dxyz[1] + col[2] * dxyz[2]) / nb;
            }
        }
        // Layer 3.
        s.g_h2.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..k {
            let go = s.g_out[j];
            let row = &l3.weight[j * HIDDEN..(j + 1) * HIDDEN];
            let gw = &mut g[o3 + j * HIDDEN..o3 + (j + 1) * HIDDEN];
            for i in 0..HIDDEN {
                gw[i] += go * s.h2[i];
                s.g_h2[i] += go * row[i];
            }
            g[o3 + k * HIDDEN + j] += go;
        }
        // Layer 2.
        s.g_h1.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..HIDDEN {
            let ga = s.g_h2[o] * silu_grad(s.a2[o]);
            if ga == 0.0 {
                continue;
            }
            let row = &l2.weight[o * HIDDEN..(o + 1) * HIDDEN];
            let gw = &mut g[o2 + o * HIDDEN..o2 + (o + 1) * HIDDEN];
            for i in 0..HIDDEN {
                gw[i] += ga * s.h1[i];
                s.g_h1[i] += ga * row[i];
            }
            g[o2 + HIDDEN * HIDDEN + o] += ga;
        }
        // Layer 1.
        for o in 0..HIDDEN {
            let ga = s.g_h1[o] * silu_grad(s.a1[o]);
            for i in 0..3 {
                g[o1 + o * 3 + i] += ga * pair.rgb[i];
            }
            g[o1 + 3 * HIDDEN + o] += ga;
        }
    }
    loss
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UpsampleEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UpsampleReport {
    pub pairs: usize,
    pub epochs: usize,
    /// `L_latent` over all pairs before training.
    pub initial_latent: f64,
    /// `L_latent` over all pairs with the returned weights.
    pub final_latent: f64,
    pub final_color: f64,
    /// Mean squared error of the clamped `upsample` output over all pairs.
    pub final_mse: f64,
    pub final_lr: f64,
    pub history: Vec<UpsampleEpoch>,
}

impl UpsampleReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,lr\n");
        for e in &self.history {
            s.push_str(&format!("{},{:.9e},{:.9e}\n", e.epoch, e.loss, e.lr));
        }
        s
    }
}

/// Mean squared error between clamped predictions and targets.
pub fn latent_mse(uw: &UpsamplerWeights, pairs: &[UpsamplePair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let k = uw.k as f64;
    pairs
        .iter()
        .map(|p| {
            upsample(uw, LinearRgb(p.rgb))
                .iter()
                .zip(&p.z)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / k
        })
        .sum::<f64>()
        / pairs.len() as f64
}

/// AdamW on shuffled minibatches with global-norm clipping and a plateau
/// scheduler on the epoch's mean training loss. The codec is only read.
pub fn train_upsampler(
    codec: &Codec,
    spectra: &[SpectralCurve],
    cfg: &UpsampleTrainConfig,
) -> Result<(UpsamplerWeights, UpsampleReport)> {
    cfg.validate()?;
    if spectra.is_empty() {
        return Err(Error::EmptyDataset(
            "upsampler training needs reflectances".into(),
        ));
    }
    let pairs = make_pairs(codec, spectra);
    let proj = ColorProjection::new(codec);
    let mut uw = UpsamplerWeights::init(codec.k(), cfg.seed)?;
    let all: Vec<&UpsamplePair> = pairs.iter().collect();
    let initial = loss_upsample(&uw, &proj, &all, cfg.lambda_maxabs, cfg.lambda_color, None);
    let mut params = uw.flatten();
    let mut opt = Adam::new(params.len(), cfg.lr).with_weight_decay(cfg.weight_decay);
    let mut sched = ReduceOnPlateau::new(cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr);
    let mut rng = stream(cfg.seed, "upsampler-shuffle");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut grads = vec![0.0; params.len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&UpsamplePair> = chunk.iter().map(|&i| &pairs[i]).collect();
            grads.iter_mut().for_each(|g| *g = 0.0);
            let l = loss_upsample(
                &uw,
                &proj,
                &batch,
                cfg.lambda_maxabs,
                cfg.lambda_color,
                Some(&mut grads),
            );
            let total = l.total(cfg.lambda_maxabs, cfg.lambda_color);
            if !total.is_finite() {
                return Err(Error::Diverged(format!(
                    "upsampler loss became {total} in epoch {epoch}"
                )));
            }
            epoch_loss += total * batch.len() as f64;
            clip_grad_norm(&mut grads, cfg.grad_clip_norm);
            opt.step(&mut params, &grads);
            uw.set_flat(&params);
        }
        epoch_loss /= pairs.len() as f64;
        history.push(UpsampleEpoch {
            epoch,
            loss: epoch_loss,
            lr: opt.lr,
        });
        opt.lr = sched.step(epoch_loss, opt.lr);
        if epoch % 250 == 0 {
            log::info!(
                "upsampler epoch {epoch}: loss {epoch_loss:.6e}, lr {:.2e}",
                opt.lr
            );
        }
    }
    let fin = loss_upsample(&uw, &proj, &all, cfg.lambda_maxabs, cfg.lambda_color, None);
    uw.training_meta = Some(UpsamplerMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        lambda_color: cfg.lambda_color,
        lambda_maxabs: cfg.lambda_maxabs,
    });
    let report = UpsampleReport {
        pairs: pairs.len(),
        epochs: cfg.epochs,
        initial_latent: initial.latent(cfg.lambda_maxabs),
        final_latent: fin.latent(cfg.lambda_maxabs),
        final_color: fin.color,
        final_mse: latent_mse(&uw, &pairs),
        final_lr: opt.lr,
        history,
    };
    Ok((uw, report))
}

/// Held-out colour fidelity of an upsampler.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UpsampleFidelity {
    pub count: usize,
    /// Mean ΔE76 of decode(upsample(rgb)) against decode(encode(R)).
    pub vs_codec: f64,
    /// Mean ΔE76 of decode(upsample(rgb)) against R under D65.
    pub vs_truth: f64,
    pub clamped: u64,
}

pub fn fidelity(
    uw: &UpsamplerWeights,
    codec: &Codec,
    spectra: &[SpectralCurve],
) -> Result<UpsampleFidelity> {
    if spectra.is_empty() {
        return Err(Error::EmptyDataset("no reflectances to evaluate".into()));
    }
    let white = d65_white();
    let lab = |s: &[f64]| xyz_to_lab_unchecked(reflectance_xyz_of_slice(s), white);
    let (mut a, mut b, mut clamped) = (0.0, 0.0, 0u64);
    for s in spectra {
        let (z, c) = upsample_counted(uw, rgb_of(s));
        clamped += c as u64;
        let up = lab(&codec.decode_slice(&z));
        a += delta_e76(up, lab(&codec.decode_slice(codec.encode(s).as_slice())));
        b += delta_e76(up, lab(s.as_slice()));
    }
    let n = spectra.len() as f64;
    Ok(UpsampleFidelity {
        count: spectra.len(),
        vs_codec: a / n,
        vs_truth: b / n,
        clamped,
    })
}

/// Luminance of the decoded code for black input, in reflectance Y units.
pub fn black_level(uw: &UpsamplerWeights, codec: &Codec) -> f64 {
    let z = upsample(uw, LinearRgb([0.0; 3]));
    reflectance_xyz_of_slice(&codec.decode_slice(&z)).y()
}
