//! Multi-objective codec training.
//!
//! Losses are evaluated on batches of paired reflectance `R` and
//! illumination `L` spectra, with `S = R ⊙ L` the true product and
//! `Ŝ = D(E(R) ⊙_B E(L))` its latent reconstruction:
//!
//! * `e2e  = MSE(Ŝ, S) · (2 − cos(Ŝ, S))`
//! * `rec  = MSE(D(E(R)), R) + MSE(D(E(L)), L)`
//! * `code = MSE(E(R) ⊙_B E(L), E(S))`
//! * `col  = MSE(T Ŝ, T S)` with `T` the radiance-convention XYZ projection
//! * `alg` = Hadamard orthogonality + idempotence of decoder columns
//!
//! MSEs average over vector entries, then over the batch. Gradients are
//! analytic, through the softplus parameterisation, and accumulated in a
//! fixed order so training is bit-reproducible.

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{softplus, softplus_grad, Codec, CodecWeights, TrainingMeta, DEFAULT_BETA};
use crate::colorimetry::cmf_table;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng;
use crate::spectral::{SpectralCurve, LAMBDA_STEP, N_SAMPLES};

/// Denominator floor for the cosine similarity in the e2e loss.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub e2e: f64,
    pub rec: f64,
    pub code: f64,
    pub col: f64,
    #[serde(default)]
    pub alg: f64,
}

impl Default for LossWeights {
    /// The configuration that held up best across 1-3 bounces.
    fn default() -> Self {
        LossWeights {
            e2e: 0.5,
            rec: 0.75,
            code: 1.0,
            col: 0.5,
            alg: 0.0,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        e2e: 0.0,
        rec: 0.0,
        code: 0.0,
        col: 0.0,
        alg: 0.0,
    };

    pub fn only(term: LossTerm) -> Self {
        let mut w = Self::ZERO;
        *w.get_mut(term) = 1.0;
        w
    }

    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::E2e => self.e2e,
            LossTerm::Rec => self.rec,
            LossTerm::Code => self.code,
            LossTerm::Col => self.col,
            LossTerm::Alg => self.alg,
        }
    }

    pub fn get_mut(&mut self, term: LossTerm) -> &mut f64 {
        match term {
            LossTerm::E2e => &mut self.e2e,
            LossTerm::Rec => &mut self.rec,
            LossTerm::Code => &mut self.code,
            LossTerm::Col => &mut self.col,
            LossTerm::Alg => &mut self.alg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in LossTerm::ALL {
            let v = self.get(t);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weight {} must be finite and >= 0, got {v}",
                    t.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossTerm {
    E2e,
    Rec,
    Code,
    Col,
    Alg,
}

impl LossTerm {
    pub const ALL: [LossTerm; 5] = [
        LossTerm::E2e,
        LossTerm::Rec,
        LossTerm::Code,
        LossTerm::Col,
        LossTerm::Alg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::E2e => "e2e",
            LossTerm::Rec => "rec",
            LossTerm::Code => "code",
            LossTerm::Col => "col",
            LossTerm::Alg => "alg",
        }
    }
}

/// Unweighted value of each loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub e2e: f64,
    pub rec: f64,
    pub code: f64,
    pub col: f64,
    pub alg: f64,
}

impl LossTerms {
    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::E2e => self.e2e,
            LossTerm::Rec => self.rec,
            LossTerm::Code => self.code,
            LossTerm::Col => self.col,
            LossTerm::Alg => self.alg,
        }
    }

    pub fn total(&self, w: &LossWeights) -> f64 {
        LossTerm::ALL.iter().map(|&t| w.get(t) * self.get(t)).sum()
    }
}

/// Paired training samples; `refl[i]` is lit by `illum[i]`.
#[derive(Clone, Debug, Default)]
pub struct PairBatch {
    pub refl: Vec<[f64; N_SAMPLES]>,
    pub illum: Vec<[f64; N_SAMPLES]>,
}

impl PairBatch {
    pub fn new(refl: Vec<[f64; N_SAMPLES]>, illum: Vec<[f64; N_SAMPLES]>) -> Result<Self> {
        if refl.len() != illum.len() {
            return Err(Error::Dimension {
                expected: refl.len(),
                got: illum.len(),
            });
        }
        Ok(PairBatch { refl, illum })
    }

    pub fn from_curves(refl: &[SpectralCurve], illum: &[SpectralCurve]) -> Result<Self> {
        Self::new(
            refl.iter().map(|c| *c.values()).collect(),
            illum.iter().map(|c| *c.values()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.refl.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refl.is_empty()
    }
}

/// Effective (non-negative) codec matrices for an arbitrary code length.
/// `enc` is k x n, `dec` is n x k, row-major.
#[derive(Clone, Debug)]
pub struct CodecMatrices {
    pub k: usize,
    pub enc: Vec<f64>,
    pub dec: Vec<f64>,
}

impl CodecMatrices {
    pub fn from_weights(w: &CodecWeights) -> Self {
        let (enc, dec) = w.effective_weights();
        CodecMatrices { k: w.k, enc, dec }
    }

    fn encode(&self, s: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(&self.enc[r * N_SAMPLES..(r + 1) * N_SAMPLES], s);
        }
    }

    fn decode(&self, z: &[f64], out: &mut [f64]) {
        let k = self.k;
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(&self.dec[r * k..(r + 1) * k], z);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of a loss with respect to the effective matrices.
#[derive(Clone, Debug)]
pub struct MatrixGrads {
    pub enc: Vec<f64>,
    pub dec: Vec<f64>,
}

impl MatrixGrads {
    fn zeros(k: usize) -> Self {
        MatrixGrads {
            enc: vec![0.0; k * N_SAMPLES],
            dec: vec![0.0; k * N_SAMPLES],
        }
    }
}

/// Gradient with respect to the raw (pre-softplus) parameters.
#[derive(Clone, Debug)]
pub struct RawGrads {
    pub raw_enc: Vec<f64>,
    pub raw_dec: Vec<f64>,
}

/// Hadamard algebra regulariser on decoder columns `b_i`:
/// `Σ_{i≠j} ‖b_i ⊙ b_j‖² / (k(k−1)) + Σ_i ‖b_i ⊙ b_i − b_i‖² / k`.
pub fn algebra_regularizer(dec: &[f64], k: usize) -> f64 {
    algebra_regularizer_impl(dec, k, None)
}

fn algebra_regularizer_impl(dec: &[f64], k: usize, mut grad: Option<(&mut [f64], f64)>) -> f64 {
    let n = dec.len() / k;
    let col = |i: usize, l: usize| dec[l * k + i];
    let pair_count = (k * (k - 1)) as f64;
    let mut orth = 0.0;
    let mut idem = 0.0;
    for l in 0..n {
        let sum_sq: f64 = (0..k).map(|i| col(i, l) * col(i, l)).sum();
        for i in 0..k {
            let b = col(i, l);
            let others = sum_sq - b * b;
            if k > 1 {
                orth += b * b * others;
            }
            let e = b * b - b;
            idem += e * e;
            if let Some((g, scale)) = grad.as_mut() {
                let mut d = 2.0 * e * (2.0 * b - 1.0) / k as f64;
                if k > 1 {
                    d += 4.0 * b * others / pair_count;
                }
                g[l * k + i] += *scale * d;
            }
        }
    }
    let orth = if k > 1 { orth / pair_count } else { 0.0 };
    orth + idem / k as f64
}

/// Evaluate all loss terms on a batch and, when `weights` is given, the
/// gradient of the weighted total with respect to the effective matrices.
pub fn evaluate(
    m: &CodecMatrices,
    batch: &PairBatch,
    weights: Option<&LossWeights>,
) -> (LossTerms, Option<MatrixGrads>) {
    let k = m.k;
    let n = N_SAMPLES;
    let nf = n as f64;
    let kf = k as f64;
    let bsz = batch.len().max(1) as f64;
    let cmf = &cmf_table().cmf;
    let mut terms = LossTerms::default();
    let mut grads = weights.map(|_| MatrixGrads::zeros(k));
    let lw = weights.copied().unwrap_or(LossWeights::ZERO);

    let mut z_r = vec![0.0; k];
    let mut z_l = vec![0.0; k];
    let mut z_s = vec![0.0; k];
    let mut p = vec![0.0; k];
    let mut s_hat = vec![0.0; n];
    let mut r_hat = vec![0.0; n];
    let mut l_hat = vec![0.0; n];
    let mut g_shat = vec![0.0; n];
    let mut g_p = vec![0.0; k];
    let mut g_zr = vec![0.0; k];
    let mut g_zl = vec![0.0; k];

    for (r, l) in batch.refl.iter().zip(&batch.illum) {
        let s: [f64; N_SAMPLES] = std::array::from_fn(|i| r[i] * l[i]);
        m.encode(r, &mut z_r);
        m.encode(l, &mut z_l);
        m.encode(&s, &mut z_s);
        for j in 0..k {
            p[j] = z_r[j] * z_l[j];
        }
        m.decode(&p, &mut s_hat);
        m.decode(&z_r, &mut r_hat);
        m.decode(&z_l, &mut l_hat);

        // e2e
        let diff: Vec<f64> = s_hat.iter().zip(&s).map(|(a, b)| a - b).collect();
        let mse = diff.iter().map(|d| d * d).sum::<f64>() / nf;
        let norm_hat = dot(&s_hat, &s_hat).sqrt();
        let norm_s = dot(&s, &s).sqrt();
        let den = norm_hat.max(COSINE_EPS) * norm_s.max(COSINE_EPS);
        let cos = dot(&s_hat, &s) / den;
        terms.e2e += mse * (2.0 - cos);

        // rec
        let mse_r = r_hat
            .iter()
            .zip(r)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / nf;
        let mse_l = l_hat
            .iter()
            .zip(l)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / nf;
        terms.rec += mse_r + mse_l;

        // code
        let code_diff: Vec<f64> = p.iter().zip(&z_s).map(|(a, b)| a - b).collect();
        terms.code += code_diff.iter().map(|d| d * d).sum::<f64>() / kf;

        // col
        let dxyz: [f64; 3] = std::array::from_fn(|c| dot(&cmf[c], &diff) * LAMBDA_STEP);
        terms.col += dxyz.iter().map(|d| d * d).sum::<f64>() / 3.0;

        let Some(g) = grads.as_mut() else { continue };

        // dL/dŜ from e2e and col.
        g_shat.iter_mut().for_each(|v| *v = 0.0);
        if lw.e2e != 0.0 {
            for i in 0..n {
                let mut dcos = s[i] / den;
                if norm_hat > COSINE_EPS {
                    dcos -= cos * s_hat[i] / (norm_hat * norm_hat);
                }
                g_shat[i] += lw.e2e / bsz * ((2.0 - cos) * 2.0 * diff[i] / nf - mse * dcos);
            }
        }
        if lw.col != 0.0 {
            let scale = lw.col / bsz * 2.0 / 3.0 * LAMBDA_STEP;
            for i in 0..n {
                g_shat[i] +=
                    scale * (cmf[0][i] * dxyz[0] + cmf[1][i] * dxyz[1] + cmf[2][i] * dxyz[2]);
            }
        }

        // Ŝ = D p
        for i in 0..n {
            for j in 0..k {
                g.dec[i * k + j] += g_shat[i] * p[j];
            }
        }
        for j in 0..k {
            g_p[j] = (0..n).map(|i| m.dec[i * k + j] * g_shat[i]).sum();
        }
        // code: p vs E S
        if lw.code != 0.0 {
            let scale = lw.code / bsz * 2.0 / kf;
            for j in 0..k {
                let d = scale * code_diff[j];
                g_p[j] += d;
                for i in 0..n {
                    g.enc[j * n + i] -= d * s[i];
                }
            }
        }
        for j in 0..k {
            g_zr[j] = g_p[j] * z_l[j];
            g_zl[j] = g_p[j] * z_r[j];
        }
        // rec: D E R and D E L
        if lw.rec != 0.0 {
            let scale = lw.rec / bsz * 2.0 / nf;
            for (hat, target, z, gz) in [(&r_hat, r, &z_r, &mut g_zr), (&l_hat, l, &z_l, &mut g_zl)]
            {
                for i in 0..n {
                    let gi = scale * (hat[i] - target[i]);
                    for j in 0..k {
                        g.dec[i * k + j] += gi * z[j];
                        gz[j] += m.dec[i * k + j] * gi;
                    }
                }
            }
        }
        for j in 0..k {
            for i in 0..n {
                g.enc[j * n + i] += g_zr[j] * r[i] + g_zl[j] * l[i];
            }
        }
    }

    terms.e2e /= bsz;
    terms.rec /= bsz;
    terms.code /= bsz;
    terms.col /= bsz;
    terms.alg = match grads.as_mut() {
        Some(g) if lw.alg != 0.0 => algebra_regularizer_impl(&m.dec, k, Some((&mut g.dec, lw.alg))),
        _ => algebra_regularizer(&m.dec, k),
    };
    (terms, grads)
}

pub fn loss_terms(w: &CodecWeights, batch: &PairBatch) -> LossTerms {
    evaluate(&CodecMatrices::from_weights(w), batch, None).0
}

pub fn loss_e2e(w: &CodecWeights, batch: &PairBatch) -> f64 {
    loss_terms(w, batch).e2e
}

pub fn loss_rec(w: &CodecWeights, batch: &PairBatch) -> f64 {
    loss_terms(w, batch).rec
}

pub fn loss_code(w: &CodecWeights, batch: &PairBatch) -> f64 {
    loss_terms(w, batch).code
}

pub fn loss_col(w: &CodecWeights, batch: &PairBatch) -> f64 {
    loss_terms(w, batch).col
}

pub fn loss_alg(w: &CodecWeights) -> f64 {
    let (_, dec) = w.effective_weights();
    algebra_regularizer(&dec, w.k)
}

pub fn total_loss(w: &CodecWeights, batch: &PairBatch, lw: &LossWeights) -> f64 {
    loss_terms(w, batch).total(lw)
}

/// Weighted total loss and its gradient with respect to the raw parameters.
pub fn gradients(w: &CodecWeights, batch: &PairBatch, lw: &LossWeights) -> (f64, RawGrads) {
    let m = CodecMatrices::from_weights(w);
    let (terms, g) = evaluate(&m, batch, Some(lw));
    let g = g.expect("gradient requested");
    let chain = |raw: &[f64], ge: &[f64]| -> Vec<f64> {
        raw.iter()
            .zip(ge)
            .map(|(&x, &d)| d * softplus_grad(x, w.beta))
            .collect()
    };
    (
        terms.total(lw),
        RawGrads {
            raw_enc: chain(&w.raw_enc, &g.enc),
            raw_dec: chain(&w.raw_dec, &g.dec),
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub val_fraction: f64,
    /// Log-uniform illumination scale augmentation range.
    pub illum_scale_min: f64,
    pub illum_scale_max: f64,
    /// (R, L) pairs drawn per epoch; `None` means one pass over the larger
    /// of the two training pools.
    pub pairs_per_epoch: Option<usize>,
}

/// (R, L) pairs per epoch unless configured otherwise.
pub const DEFAULT_PAIRS_PER_EPOCH: usize = 32768;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 128,
            max_epochs: 150,
            patience: 15,
            seed: 0,
            val_fraction: 0.10,
            illum_scale_min: 0.5,
            illum_scale_max: 2.0,
            pairs_per_epoch: Some(DEFAULT_PAIRS_PER_EPOCH),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return bad(format!(
                "val_fraction must lie in (0, 0.5), got {}",
                self.val_fraction
            ));
        }
        if self.patience > self.max_epochs && self.max_epochs > 0 {
            return bad(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if !(self.illum_scale_min > 0.0 && self.illum_scale_min <= self.illum_scale_max) {
            return bad("illumination scale range must satisfy 0 < min <= max".into());
        }
        if self.pairs_per_epoch == Some(0) {
            return bad("pairs_per_epoch must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossTerms,
    pub train_total: f64,
    pub val_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_val: f64,
    pub best_val: f64,
    /// 0 when no epoch improved on the initial weights.
    pub best_epoch: usize,
    pub epochs: Vec<EpochLog>,
    pub stopped_early: bool,
    pub fit_reflectances: usize,
    pub fit_illuminations: usize,
    pub val_pairs: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,e2e,rec,code,col,alg,train_total,val_total\n");
        for e in &self.epochs {
            let t = &e.train;
            let _ = writeln!(
                s,
                "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
                e.epoch, t.e2e, t.rec, t.code, t.col, t.alg, e.train_total, e.val_total
            );
        }
        s
    }
}

/// Training split of the dataset; validation is carved out internally.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub refl: Vec<SpectralCurve>,
    pub illum: Vec<SpectralCurve>,
}

/// Seeded raw weights: `U(-0.5, 0.5)/sqrt(n)` for the encoder and
/// `U(-0.5, 0.5)/sqrt(k)` for the decoder.
pub fn init_weights(k: usize, seed: u64) -> Result<CodecWeights> {
    let mut rng = rng::stream(seed, "codec-init");
    let enc_scale = 1.0 / (N_SAMPLES as f64).sqrt();
    let dec_scale = 1.0 / (k as f64).sqrt();
    let raw_enc = (0..k * N_SAMPLES)
        .map(|_| (rng.random::<f64>() - 0.5) * enc_scale)
        .collect();
    let raw_dec = (0..k * N_SAMPLES)
        .map(|_| (rng.random::<f64>() - 0.5) * dec_scale)
        .collect();
    CodecWeights::new(k, DEFAULT_BETA, raw_enc, raw_dec)
}

fn split_validation<T: Clone>(items: &[T], fraction: f64, rng: &mut impl Rng) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(rng);
    let n_val = ((items.len() as f64 * fraction).round() as usize)
        .clamp(1, items.len().saturating_sub(1).max(1));
    let n_val = if items.len() < 2 { 0 } else { n_val };
    let (val, fit) = idx.split_at(n_val);
    let pick = |ix: &[usize]| {
        let mut ix = ix.to_vec();
        ix.sort_unstable();
        ix.into_iter().map(|i| items[i].clone()).collect()
    };
    (pick(fit), pick(val))
}

fn pack(params: &[f64], template: &CodecWeights) -> CodecWeights {
    let split = template.raw_enc.len();
    CodecWeights {
        raw_enc: params[..split].to_vec(),
        raw_dec: params[split..].to_vec(),
        ..template.clone()
    }
}

/// Train a codec with Adam and early stopping on the validation loss.
///
/// Each epoch shuffles the reflectance pool (a per-epoch seeded stream),
/// walks it in batches, pairs every reflectance with an illumination drawn
/// uniformly with replacement, and scales that illumination by a
/// log-uniform factor. Returns the weights with the lowest validation loss
/// seen, including the initial weights.
pub fn train(
    data: &TrainData,
    k: usize,
    cfg: &TrainConfig,
    lw: &LossWeights,
) -> Result<(CodecWeights, TrainReport)> {
    cfg.validate()?;
    lw.validate()?;
    if data.refl.is_empty() || data.illum.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "need reflectances and illuminations, got {} and {}",
            data.refl.len(),
            data.illum.len()
        )));
    }
    let init = init_weights(k, cfg.seed)?;

    let mut split_rng = rng::stream(cfg.seed, "validation-split");
    let (fit_r, val_r) = split_validation(&data.refl, cfg.val_fraction, &mut split_rng);
    let (fit_l, val_l) = split_validation(&data.illum, cfg.val_fraction, &mut split_rng);
    let (val_r, val_l) = if val_r.is_empty() || val_l.is_empty() {
        (fit_r.clone(), fit_l.clone())
    } else {
        (val_r, val_l)
    };
    let val_batch = {
        let mut rng = rng::stream(cfg.seed, "validation-pairs");
        let n_pairs = val_r.len().max(val_l.len());
        let refl = (0..n_pairs)
            .map(|i| *val_r[i % val_r.len()].values())
            .collect();
        let illum = (0..n_pairs)
            .map(|_| *val_l[rng.random_range(0..val_l.len())].values())
            .collect();
        PairBatch::new(refl, illum)?
    };

    let eval_val = |w: &CodecWeights| loss_terms(w, &val_batch).total(lw);
    let initial_val = eval_val(&init);
    let mut report = TrainReport {
        initial_val,
        best_val: initial_val,
        best_epoch: 0,
        epochs: Vec::new(),
        stopped_early: false,
        fit_reflectances: fit_r.len(),
        fit_illuminations: fit_l.len(),
        val_pairs: val_batch.len(),
    };
    let mut best = init.clone();
    let mut params: Vec<f64> = init.raw_enc.iter().chain(&init.raw_dec).copied().collect();
    let mut opt = Adam::new(params.len(), cfg.lr);
    let pairs_per_epoch = cfg.pairs_per_epoch.unwrap_or(fit_r.len().max(fit_l.len()));
    let (ln_lo, ln_hi) = (cfg.illum_scale_min.ln(), cfg.illum_scale_max.ln());
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut rng = rng::stream(cfg.seed, &format!("epoch-{epoch}"));
        // Reflectance order: concatenated shuffled passes until the epoch is full.
        let mut order = Vec::with_capacity(pairs_per_epoch);
        while order.len() < pairs_per_epoch {
            let mut pass: Vec<usize> = (0..fit_r.len()).collect();
            pass.shuffle(&mut rng);
            order.extend(pass);
        }
        order.truncate(pairs_per_epoch);

        let mut epoch_terms = LossTerms::default();
        let mut epoch_total = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let refl = chunk.iter().map(|&i| *fit_r[i].values()).collect();
            let illum = chunk
                .iter()
                .map(|_| {
                    let l = &fit_l[rng.random_range(0..fit_l.len())];
                    let scale = rng.random_range(ln_lo..=ln_hi).exp();
                    l.values().map(|v| v * scale)
                })
                .collect();
            let batch = PairBatch::new(refl, illum)?;
            let w = pack(&params, &init);
            let m = CodecMatrices::from_weights(&w);
            let (terms, g) = evaluate(&m, &batch, Some(lw));
            let total = terms.total(lw);
            if !total.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}, batch {n_batches}: {terms:?}"
                )));
            }
            let g = g.expect("gradient requested");
            let grads: Vec<f64> = w
                .raw_enc
                .iter()
                .zip(&g.enc)
                .chain(w.raw_dec.iter().zip(&g.dec))
                .map(|(&x, &d)| d * softplus_grad(x, w.beta))
                .collect();
            opt.step(&mut params, &grads);
            for t in LossTerm::ALL {
                *term_mut(&mut epoch_terms, t) += terms.get(t);
            }
            epoch_total += total;
            n_batches += 1;
        }
        let nb = n_batches.max(1) as f64;
        for t in LossTerm::ALL {
            *term_mut(&mut epoch_terms, t) /= nb;
        }
        let current = pack(&params, &init);
        let val_total = eval_val(&current);
        if !val_total.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        debug!(
            "epoch {epoch}: train {:.6e} val {val_total:.6e}",
            epoch_total / nb
        );
        report.epochs.push(EpochLog {
            epoch,
            train: epoch_terms,
            train_total: epoch_total / nb,
            val_total,
        });
        if val_total < report.best_val {
            report.best_val = val_total;
            report.best_epoch = epoch;
            best = current;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stopped_early = true;
                info!(
                    "early stop at epoch {epoch}; best epoch {}",
                    report.best_epoch
                );
                break;
            }
        }
    }
    best.training_meta = Some(TrainingMeta {
        seed: cfg.seed,
        lambda_weights: *lw,
        epochs: report.epochs.len(),
        pairs_per_epoch: Some(pairs_per_epoch),
    });
    Ok((best, report))
}

fn term_mut(t: &mut LossTerms, term: LossTerm) -> &mut f64 {
    match term {
        LossTerm::E2e => &mut t.e2e,
        LossTerm::Rec => &mut t.rec,
        LossTerm::Code => &mut t.code,
        LossTerm::Col => &mut t.col,
        LossTerm::Alg => &mut t.alg,
    }
}

/// One point of a loss-weight grid search.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub id: String,
    pub weights: LossWeights,
    pub mean_de94: [f64; 3],
    pub score: f64,
    pub best_val: f64,
}

/// Value lists for each loss weight; the grid is their Cartesian product.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaGrid {
    pub e2e: Vec<f64>,
    pub rec: Vec<f64>,
    pub code: Vec<f64>,
    pub col: Vec<f64>,
    pub alg: Vec<f64>,
}

impl LambdaGrid {
    /// Reference ranges: rec 0:0.5:3, e2e 0:0.5:2, code and col 0:0.25:1
    /// (875 points).
    pub fn full() -> Self {
        LambdaGrid {
            e2e: parse_range("0:0.5:2").unwrap(),
            rec: parse_range("0:0.5:3").unwrap(),
            code: parse_range("0:0.25:1").unwrap(),
            col: parse_range("0:0.25:1").unwrap(),
            alg: vec![0.0],
        }
    }

    pub fn points(&self) -> Vec<LossWeights> {
        let mut out = Vec::new();
        for &rec in &self.rec {
            for &e2e in &self.e2e {
                for &code in &self.code {
                    for &col in &self.col {
                        for &alg in &self.alg {
                            out.push(LossWeights {
                                e2e,
                                rec,
                                code,
                                col,
                                alg,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Parse `start:step:stop` (inclusive) or a comma-separated list.
pub fn parse_range(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::format(format!("range '{text}'"), format!("bad number '{s}': {e}")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.len() {
        1 => text.split(',').map(num).collect(),
        3 => {
            let (a, step, b) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if !(step > 0.0) || b < a {
                return Err(Error::format(
                    format!("range '{text}'"),
                    "need step > 0 and stop >= start",
                ));
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| a + step * i as f64).collect())
        }
        _ => Err(Error::format(
            format!("range '{text}'"),
            "expected start:step:stop or a comma list",
        )),
    }
}

/// Train one codec per grid point and rank by mean multi-bounce ΔE94.
pub fn grid_search(
    grid: &LambdaGrid,
    data: &TrainData,
    test_refl: &[SpectralCurve],
    test_illum: &[SpectralCurve],
    k: usize,
    cfg: &TrainConfig,
    eval_pairs: usize,
) -> Result<Vec<GridRow>> {
    let mut rows = Vec::new();
    for (i, lw) in grid.points().into_iter().enumerate() {
        let (w, report) = train(data, k, cfg, &lw)?;
        let codec = Codec::new(w)?;
        let res =
            crate::eval::multibounce_eval(&codec, test_refl, test_illum, 3, eval_pairs, cfg.seed)?;
        let mean_de94 = [res[0].mean, res[1].mean, res[2].mean];
        let score = mean_de94.iter().sum::<f64>() / 3.0;
        info!("grid point {i}: {lw:?} -> {score:.4}");
        rows.push(GridRow {
            id: format!("v{i:04}"),
            weights: lw,
            mean_de94,
            score,
            best_val: report.best_val,
        });
    }
    rows.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.id.cmp(&b.id)));
    Ok(rows)
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from("rank,id,lambda_e2e,lambda_rec,lambda_code,lambda_col,lambda_alg,de94_b1,de94_b2,de94_b3,mean_de94,best_val\n");
    for (rank, r) in rows.iter().enumerate() {
        let w = &r.weights;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.9e}",
            rank + 1,
            r.id,
            w.e2e,
            w.rec,
            w.code,
            w.col,
            w.alg,
            r.mean_de94[0],
            r.mean_de94[1],
            r.mean_de94[2],
            r.score,
            r.best_val
        );
    }
    s
}

/// Softplus of every raw parameter; exposed for property tests.
pub fn effective(raw: &[f64], beta: f64) -> Vec<f64> {
    raw.iter().map(|&x| softplus(x, beta)).collect()
}
