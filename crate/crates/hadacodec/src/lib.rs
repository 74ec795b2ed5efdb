//! Learned non-negative linear spectral codes.
//!
//! A [`Codec`] maps 47-sample spectra to k-dimensional non-negative latent
//! codes with a softplus-constrained linear encoder and decoder. Scaling
//! and addition are preserved exactly; the element-wise (Hadamard) product
//! of a reflectance and an illumination is approximated by the product of
//! their codes, which lets an ordinary RGB renderer run k/3 passes in place
//! of a full spectral render.

pub mod codec;
pub mod colorimetry;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod optim;
pub mod render;
pub mod rng;
pub mod spectral;
mod tables;
pub mod training;
pub mod upsampler;

pub use codec::{blockwise_hadamard, Codec, CodecWeights, LatentCode};
pub use error::{Error, Result};
pub use spectral::{SpectralCurve, N_SAMPLES};
pub use training::{LossWeights, TrainConfig};
