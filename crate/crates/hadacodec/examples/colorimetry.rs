//! Colour of a few reflectances and lights: XYZ, Lab under D65, sRGB.
//!
//! cargo run --example colorimetry

use hadacodec::colorimetry::{
    d65_curve, d65_white, delta_e76, delta_e94, linear_to_srgb8, rgb_of_reflectance,
    spectrum_to_xyz, xyz_of_reflectance, xyz_to_lab,
};
use hadacodec::SpectralCurve;

fn main() -> hadacodec::Result<()> {
    let white = SpectralCurve::flat(1.0)?;
    let grey = SpectralCurve::flat(0.18)?;
    // Long-pass "red paint" edge at 600 nm.
    let red = SpectralCurve::from_fn(|l| 0.05 + 0.85 / (1.0 + (-(l - 600.0) / 12.0).exp()))?;
    let green = SpectralCurve::from_fn(|l| 0.08 + 0.6 * (-((l - 530.0) / 35.0).powi(2)).exp())?;

    println!(
        "{:<6} {:>8} {:>8} {:>8}   {:>7} {:>7} {:>7}   srgb",
        "name", "X", "Y", "Z", "L*", "a*", "b*"
    );
    for (name, r) in [
        ("white", &white),
        ("grey", &grey),
        ("red", &red),
        ("green", &green),
    ] {
        let xyz = xyz_of_reflectance(r);
        let lab = xyz_to_lab(xyz, d65_white())?;
        let srgb = linear_to_srgb8(rgb_of_reflectance(r));
        println!(
            "{name:<6} {:8.3} {:8.3} {:8.3}   {:7.2} {:7.2} {:7.2}   {srgb:?}",
            xyz.0[0], xyz.0[1], xyz.0[2], lab.0[0], lab.0[1], lab.0[2]
        );
    }

    let lab = |r: &SpectralCurve| xyz_to_lab(xyz_of_reflectance(r), d65_white());
    let (a, b) = (lab(&red)?, lab(&green)?);
    println!(
        "red vs green: ΔE76 {:.2}, ΔE94 {:.2}",
        delta_e76(a, b),
        delta_e94(a, b)
    );

    // Radiance convention: a lit surface is just the product spectrum.
    let lit = red.hadamard(&d65_curve());
    let xyz = spectrum_to_xyz(&lit);
    println!("red under D65 as radiance: xy = {:?}", xyz.chromaticity());
    Ok(())
}
