//! Lift sRGB albedos to latent codes with the shipped upsampler and check
//! the decoded colour against the codec's own encoding.
//!
//! cargo run --release --example upsample_rgb

use hadacodec::colorimetry::{d65_white, reflectance_xyz_of_slice, srgb8_to_linear, xyz_to_lab};
use hadacodec::dataset::{generate, GenOptions};
use hadacodec::upsampler::{fidelity, upsample, upsample_image, UpsamplerWeights};
use hadacodec::Codec;

fn main() -> hadacodec::Result<()> {
    let uw = UpsamplerWeights::shipped()?;
    let codec = Codec::shipped(uw.k)?;

    for srgb in [
        [200u8, 40, 40],
        [40, 160, 60],
        [50, 80, 200],
        [128, 128, 128],
    ] {
        let rgb = srgb8_to_linear(srgb);
        let z = upsample(&uw, rgb);
        let s = codec.decode_slice(&z);
        let lab = xyz_to_lab(reflectance_xyz_of_slice(&s), d65_white())?;
        println!("sRGB {srgb:?} -> z {:.3?} -> Lab {:.1?}", z, lab.0);
    }

    let tex: Vec<_> = (0..16u8)
        .map(|i| srgb8_to_linear([i * 16, 255 - i * 16, 128]))
        .collect();
    let (latent, stats) = upsample_image(&uw, &tex);
    println!(
        "16-pixel ramp: {} latent values, {} clamped",
        latent.len(),
        stats.clamped
    );

    let splits = generate(&GenOptions::default())?.splits();
    let f = fidelity(&uw, &codec, &splits.refl_test)?;
    println!(
        "held-out mean ΔE76: {:.3} vs codec, {:.3} vs truth ({} spectra)",
        f.vs_codec, f.vs_truth, f.count
    );
    Ok(())
}
