//! Encode spectra with a shipped codec, check the algebra, decode back.
//!
//! cargo run --example encode_decode

use hadacodec::colorimetry::{d65_white, delta_e94, xyz_of_reflectance, xyz_to_lab};
use hadacodec::{blockwise_hadamard, Codec, SpectralCurve};

fn main() -> hadacodec::Result<()> {
    let codec = Codec::shipped(6)?;
    println!("k = {}, {} blocks", codec.k(), codec.blocks());

    let r = SpectralCurve::from_fn(|l| 0.1 + 0.7 / (1.0 + (-(l - 590.0) / 15.0).exp()))?;
    let l = SpectralCurve::from_fn(|l| (-((l - 560.0) / 80.0).powi(2)).exp())?;

    let zr = codec.encode(&r);
    let zl = codec.encode(&l);
    println!("E(R) = {:.4?}", zr.as_slice());
    println!("E(L) = {:.4?}", zl.as_slice());

    // Scaling and addition are exact.
    let lhs = codec.encode(&r.scale(2.5)?.add(&l));
    let rhs = zr.scale(2.5).add(&zl)?;
    let err = lhs
        .as_slice()
        .iter()
        .zip(rhs.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("linearity |E(2.5R + L) - (2.5E(R) + E(L))|max = {err:.2e}");

    // The product is approximate.
    let truth = r.hadamard(&l);
    let approx = codec.decode(&blockwise_hadamard(&zr, &zl)?)?;
    let mult = codec.encode(&truth);
    let viol = mult
        .as_slice()
        .iter()
        .zip(blockwise_hadamard(&zr, &zl)?.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("|E(R⊙L) - E(R)⊙E(L)|max = {viol:.4}");

    let lab = |s: &SpectralCurve| xyz_to_lab(xyz_of_reflectance(s), d65_white());
    println!(
        "ΔE94 of D(E(R)) vs R: {:.3}",
        delta_e94(lab(&r)?, lab(&codec.decode(&zr)?)?)
    );
    println!(
        "ΔE94 of D(E(R)⊙E(L)) vs R⊙L: {:.3}",
        delta_e94(lab(&truth)?, lab(&approx)?)
    );
    Ok(())
}
