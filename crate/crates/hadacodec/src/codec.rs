//! The non-negative linear spectral codec.
//!
//! Encoder and decoder are plain matrices, `z = W_enc s` and `s = W_dec z`,
//! whose entries are the softplus of unconstrained parameters. Linearity
//! makes scaling and addition exact in code space; the element-wise product
//! of codes stands in for the element-wise product of spectra.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{SpectralCurve, N_SAMPLES};
use crate::training::LossWeights;

pub const DEFAULT_BETA: f64 = 10.0;
pub const WEIGHTS_VERSION: u32 = 1;

/// Above this value of `beta * x` softplus returns `x` unchanged.
const SOFTPLUS_LINEAR_CUTOFF: f64 = 30.0;

#[inline]
pub fn softplus(x: f64, beta: f64) -> f64 {
    let bx = beta * x;
    if bx > SOFTPLUS_LINEAR_CUTOFF {
        x
    } else {
        bx.exp().ln_1p() / beta
    }
}

/// Derivative of [`softplus`] with respect to `x`: `sigmoid(beta x)`.
#[inline]
pub fn softplus_grad(x: f64, beta: f64) -> f64 {
    let bx = beta * x;
    if bx > SOFTPLUS_LINEAR_CUTOFF {
        1.0
    } else if bx >= 0.0 {
        1.0 / (1.0 + (-bx).exp())
    } else {
        let e = bx.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub lambda_weights: LossWeights,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs_per_epoch: Option<usize>,
}

/// Trainable codec parameters. `raw_enc` is k x n and `raw_dec` is n x k,
/// both row-major; the effective weights are their softplus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecWeights {
    pub version: u32,
    pub k: usize,
    pub n: usize,
    pub beta: f64,
    pub raw_enc: Vec<f64>,
    pub raw_dec: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_meta: Option<TrainingMeta>,
}

impl CodecWeights {
    pub fn new(k: usize, beta: f64, raw_enc: Vec<f64>, raw_dec: Vec<f64>) -> Result<Self> {
        let w = CodecWeights {
            version: WEIGHTS_VERSION,
            k,
            n: N_SAMPLES,
            beta,
            raw_enc,
            raw_dec,
            training_meta: None,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn blocks(&self) -> usize {
        self.k / 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k % 3 != 0 {
            return Err(Error::Config(format!(
                "code length k must be a positive multiple of 3, got {}",
                self.k
            )));
        }
        if self.n != N_SAMPLES {
            return Err(Error::Dimension {
                expected: N_SAMPLES,
                got: self.n,
            });
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "softplus beta must be positive, got {}",
                self.beta
            )));
        }
        for (name, arr) in [("raw_enc", &self.raw_enc), ("raw_dec", &self.raw_dec)] {
            if arr.len() != self.k * self.n {
                return Err(Error::Dimension {
                    expected: self.k * self.n,
                    got: arr.len(),
                });
            }
            if let Some(i) = arr.iter().position(|v| !v.is_finite()) {
                return Err(Error::format(
                    format!("{name}[{i}]"),
                    "weight is not finite",
                ));
            }
        }
        Ok(())
    }

    /// Softplus of the raw matrices: (W_enc k x n, W_dec n x k).
    pub fn effective_weights(&self) -> (Vec<f64>, Vec<f64>) {
        let sp = |v: &Vec<f64>| v.iter().map(|&x| softplus(x, self.beta)).collect();
        (sp(&self.raw_enc), sp(&self.raw_dec))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: CodecWeights = serde_json::from_str(text)?;
        if w.version != WEIGHTS_VERSION {
            return Err(Error::format(
                "version",
                format!("unsupported weights version {}", w.version),
            ));
        }
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// A k-dimensional latent code.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() % 3 != 0 {
            return Err(Error::Config(format!(
                "code length must be a positive multiple of 3, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("code entry {i} is not finite")));
        }
        Ok(LatentCode(values))
    }

    pub fn zeros(k: usize) -> Result<Self> {
        Self::new(vec![0.0; k])
    }

    pub fn ones(k: usize) -> Result<Self> {
        Self::new(vec![1.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_non_negative(&self) -> bool {
        self.0.iter().all(|&v| v >= 0.0)
    }

    pub fn scale(&self, alpha: f64) -> LatentCode {
        LatentCode(self.0.iter().map(|v| alpha * v).collect())
    }

    pub fn add(&self, other: &LatentCode) -> Result<LatentCode> {
        check_same_len(self, other)?;
        Ok(LatentCode(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    /// Block `i` of 3 channels: (3i, 3i+1, 3i+2).
    pub fn block(&self, i: usize) -> [f64; 3] {
        [self.0[3 * i], self.0[3 * i + 1], self.0[3 * i + 2]]
    }

    pub fn split_blocks(&self) -> Vec<[f64; 3]> {
        (0..self.0.len() / 3).map(|i| self.block(i)).collect()
    }

    pub fn join_blocks(blocks: &[[f64; 3]]) -> Result<LatentCode> {
        LatentCode::new(blocks.iter().flatten().copied().collect())
    }
}

fn check_same_len(a: &LatentCode, b: &LatentCode) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        })
    }
}

/// Blockwise Hadamard product of two codes. Block `i` of the result is the
/// element-wise product of block `i` of each input, which over all blocks
/// is the element-wise product of the full vectors.
pub fn blockwise_hadamard(z1: &LatentCode, z2: &LatentCode) -> Result<LatentCode> {
    check_same_len(z1, z2)?;
    Ok(LatentCode(
        z1.0.iter().zip(&z2.0).map(|(a, b)| a * b).collect(),
    ))
}

/// Inference-ready codec: raw parameters plus cached effective matrices.
#[derive(Clone, Debug)]
pub struct Codec {
    weights: CodecWeights,
    enc: Vec<f64>,
    dec: Vec<f64>,
}

impl Codec {
    pub fn new(weights: CodecWeights) -> Result<Self> {
        weights.validate()?;
        let (enc, dec) = weights.effective_weights();
        Ok(Codec { weights, enc, dec })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(CodecWeights::load(path)?)
    }

    /// The k=6 or k=9 codec bundled with the crate, trained with seed 0.
    pub fn shipped(k: usize) -> Result<Self> {
        let text = match k {
            6 => include_str!("../assets/codec_k6.json"),
            9 => include_str!("../assets/codec_k9.json"),
            _ => return Err(Error::Config(format!("no shipped codec for k={k}"))),
        };
        Self::new(CodecWeights::from_json(text)?)
    }

    pub fn weights(&self) -> &CodecWeights {
        &self.weights
    }

    pub fn k(&self) -> usize {
        self.weights.k
    }

    pub fn blocks(&self) -> usize {
        self.weights.blocks()
    }

    /// Effective encoder, k x n row-major.
    pub fn encoder(&self) -> &[f64] {
        &self.enc
    }

    /// Effective decoder, n x k row-major.
    pub fn decoder(&self) -> &[f64] {
        &self.dec
    }

    pub fn encode(&self, s: &SpectralCurve) -> LatentCode {
        LatentCode(self.encode_slice(s.as_slice()))
    }

    pub fn encode_slice(&self, s: &[f64]) -> Vec<f64> {
        let n = N_SAMPLES;
        (0..self.k())
            .map(|r| {
                self.enc[r * n..(r + 1) * n]
                    .iter()
                    .zip(s)
                    .map(|(w, v)| w * v)
                    .sum()
            })
            .collect()
    }

    pub fn decode(&self, z: &LatentCode) -> Result<SpectralCurve> {
        check_same_len(z, &LatentCode(vec![0.0; self.k()]))?;
        if let Some(i) = z.0.iter().position(|&v| v < 0.0) {
            return Err(Error::Domain(format!(
                "code entry {i} is negative ({}); the decoder is defined on non-negative codes",
                z.0[i]
            )));
        }
        SpectralCurve::from_slice(&self.decode_slice(&z.0))
    }

    /// `W_dec z` without domain checks.
    pub fn decode_slice(&self, z: &[f64]) -> Vec<f64> {
        let k = self.k();
        (0..N_SAMPLES)
            .map(|r| {
                self.dec[r * k..(r + 1) * k]
                    .iter()
                    .zip(z)
                    .map(|(w, v)| w * v)
                    .sum()
            })
            .collect()
    }

    /// Decoder column `i`: the basis spectrum of code channel `i`.
    pub fn basis_spectrum(&self, i: usize) -> Vec<f64> {
        (0..N_SAMPLES).map(|r| self.dec[r * self.k() + i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_codec(k: usize) -> Codec {
        let raw_enc = (0..k * N_SAMPLES)
            .map(|i| ((i * 37 % 101) as f64 / 101.0 - 0.5) * 0.3)
            .collect();
        let raw_dec = (0..k * N_SAMPLES)
            .map(|i| ((i * 53 % 97) as f64 / 97.0 - 0.5) * 0.4)
            .collect();
        Codec::new(CodecWeights::new(k, DEFAULT_BETA, raw_enc, raw_dec).unwrap()).unwrap()
    }

    #[test]
    fn softplus_regimes() {
        assert!((softplus(0.0, 10.0) - std::f64::consts::LN_2 / 10.0).abs() < 1e-15);
        assert!(softplus(-100.0, 10.0) <= 1e-40);
        assert!(softplus(-100.0, 10.0) >= 0.0);
        assert!((softplus(5.0, 10.0) - 5.0).abs() < 1e-12);
        assert!(softplus(1e6, 10.0).is_finite());
    }

    #[test]
    fn softplus_grad_matches_difference() {
        for x in [-2.0, -0.3, 0.0, 0.01, 0.5, 2.9, 3.1] {
            let h = 1e-6;
            let fd = (softplus(x + h, 10.0) - softplus(x - h, 10.0)) / (2.0 * h);
            assert!((fd - softplus_grad(x, 10.0)).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn encode_examples() {
        let c = toy_codec(6);
        assert!(c
            .encode(&SpectralCurve::zero())
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
        let s = SpectralCurve::from_fn(|w| 0.5 + 0.4 * (w / 50.0).sin()).unwrap();
        let z = c.encode(&s);
        let z3 = c.encode(&s.scale(3.0).unwrap());
        for (a, b) in z.as_slice().iter().zip(z3.as_slice()) {
            assert!((3.0 * a - b).abs() <= 1e-12 * b.abs());
        }
        // Flat 1.0 encodes to the row sums of the effective encoder.
        let ones = c.encode(&SpectralCurve::flat(1.0).unwrap());
        let (enc, _) = c.weights().effective_weights();
        for r in 0..6 {
            let row_sum: f64 = enc[r * N_SAMPLES..(r + 1) * N_SAMPLES].iter().sum();
            assert!((ones.as_slice()[r] - row_sum).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_examples() {
        let c = toy_codec(6);
        assert!(c.decode(&LatentCode::zeros(6).unwrap()).unwrap().is_zero());
        for i in 0..6 {
            let mut e = vec![0.0; 6];
            e[i] = 1.0;
            let s = c.decode(&LatentCode::new(e).unwrap()).unwrap();
            assert_eq!(s.as_slice(), c.basis_spectrum(i).as_slice());
        }
        let neg = LatentCode::new(vec![0.1, -0.1, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(c.decode(&neg), Err(Error::Domain(_))));
        assert!(c.decode(&LatentCode::zeros(9).unwrap()).is_err());
    }

    #[test]
    fn blockwise_product_examples() {
        let z = LatentCode::new(vec![0.2, 1.5, 3.0, 0.0, 7.0, 0.1]).unwrap();
        assert_eq!(
            blockwise_hadamard(&z, &LatentCode::ones(6).unwrap()).unwrap(),
            z
        );
        let zero = blockwise_hadamard(&z, &LatentCode::zeros(6).unwrap()).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
        assert!(blockwise_hadamard(&z, &LatentCode::ones(9).unwrap()).is_err());
        // Blockwise view agrees with the global element-wise product.
        let w = LatentCode::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = blockwise_hadamard(&z, &w).unwrap();
        for (b, (zb, wb)) in z.split_blocks().iter().zip(w.split_blocks()).enumerate() {
            let expected = [zb[0] * wb[0], zb[1] * wb[1], zb[2] * wb[2]];
            assert_eq!(p.block(b), expected);
        }
    }

    #[test]
    fn block_split_join() {
        let z = LatentCode::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(z.split_blocks(), vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(LatentCode::join_blocks(&z.split_blocks()).unwrap(), z);
        assert_eq!(LatentCode::zeros(9).unwrap().split_blocks().len(), 3);
    }

    #[test]
    fn weights_validation() {
        assert!(CodecWeights::new(5, 10.0, vec![0.0; 5 * 47], vec![0.0; 5 * 47]).is_err());
        assert!(CodecWeights::new(6, 10.0, vec![0.0; 6 * 46], vec![0.0; 6 * 47]).is_err());
        assert!(CodecWeights::new(6, 0.0, vec![0.0; 6 * 47], vec![0.0; 6 * 47]).is_err());
        let mut bad = vec![0.0; 6 * 47];
        bad[3] = f64::NAN;
        assert!(CodecWeights::new(6, 10.0, bad, vec![0.0; 6 * 47]).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let c = toy_codec(9);
        let mut w = c.weights().clone();
        w.raw_enc[0] = 0.1 + 0.2;
        w.raw_dec[5] = -1.234_567_890_123_456_7e-7;
        let back = CodecWeights::from_json(&w.to_json().unwrap()).unwrap();
        for (a, b) in w
            .raw_enc
            .iter()
            .zip(&back.raw_enc)
            .chain(w.raw_dec.iter().zip(&back.raw_dec))
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back, w);
    }

    #[test]
    fn shipped_codecs_load() {
        for k in [6, 9] {
            let c = Codec::shipped(k).unwrap();
            assert_eq!(c.k(), k);
            assert!(c.weights().training_meta.is_some());
        }
        assert!(Codec::shipped(12).is_err());
    }
}
