//! Property tests over random spectra, codecs, images and files.

use hadacodec::codec::{blockwise_hadamard, Codec, CodecWeights, LatentCode};
use hadacodec::colorimetry::{linear_to_srgb8, spectrum_to_xyz, srgb8_to_linear, LinearRgb};
use hadacodec::io::{self, SpectraTable};
use hadacodec::render::{render, render_latent_multipass, ChannelImage, Mode, RenderJob, Scene};
use hadacodec::upsampler::{upsample, upsample_image, UpsamplerWeights};
use hadacodec::{SpectralCurve, N_SAMPLES};
use proptest::prelude::*;

fn spectrum() -> impl Strategy<Value = SpectralCurve> {
    prop::collection::vec(0.0f64..1.0, N_SAMPLES)
        .prop_map(|v| SpectralCurve::from_slice(&v).unwrap())
}

/// Random codec with raw weights in [-1, 1].
fn codec(k: usize) -> impl Strategy<Value = Codec> {
    (
        prop::collection::vec(-1.0f64..1.0, k * N_SAMPLES),
        prop::collection::vec(-1.0f64..1.0, N_SAMPLES * k),
    )
        .prop_map(move |(e, d)| Codec::new(CodecWeights::new(k, 10.0, e, d).unwrap()).unwrap())
}

fn rel_max(a: &[f64], b: &[f64]) -> f64 {
    let d = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let n = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if n == 0.0 {
        d
    } else {
        d / n
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn encoder_is_linear(c in codec(6), s1 in spectrum(), s2 in spectrum(), alpha in 0.0f64..10.0) {
        let lhs = c.encode(&s1.scale(alpha).unwrap().add(&s2));
        let rhs = c.encode(&s1).scale(alpha).add(&c.encode(&s2)).unwrap();
        prop_assert!(rel_max(lhs.as_slice(), rhs.as_slice()) <= 1e-12);
    }

    #[test]
    fn decoder_is_linear(c in codec(9), z1 in prop::collection::vec(0.0f64..4.0, 9), z2 in prop::collection::vec(0.0f64..4.0, 9), alpha in 0.0f64..10.0) {
        let (a, b) = (LatentCode::new(z1).unwrap(), LatentCode::new(z2).unwrap());
        let lhs = c.decode(&a.scale(alpha).add(&b).unwrap()).unwrap();
        let rhs = c.decode(&a).unwrap().scale(alpha).unwrap().add(&c.decode(&b).unwrap());
        prop_assert!(rel_max(lhs.as_slice(), rhs.as_slice()) <= 1e-12);
    }

    #[test]
    fn codes_and_decodes_stay_non_negative(c in codec(6), s in spectrum(), r in spectrum()) {
        let z = blockwise_hadamard(&c.encode(&s), &c.encode(&r)).unwrap();
        prop_assert!(z.is_non_negative());
        prop_assert!(c.decode(&z).unwrap().as_slice().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn spectral_ops_commute_and_associate(a in spectrum(), b in spectrum(), c in spectrum()) {
        prop_assert_eq!(a.hadamard(&b), b.hadamard(&a));
        prop_assert_eq!(a.add(&b), b.add(&a));
        let l = a.hadamard(&b).hadamard(&c);
        let r = a.hadamard(&b.hadamard(&c));
        prop_assert!(rel_max(l.as_slice(), r.as_slice()) <= 1e-12);
        let l = a.add(&b).add(&c);
        let r = a.add(&b.add(&c));
        prop_assert!(rel_max(l.as_slice(), r.as_slice()) <= 1e-12);
    }

    #[test]
    fn blockwise_product_is_per_block(z1 in prop::collection::vec(0.0f64..3.0, 6), z2 in prop::collection::vec(0.0f64..3.0, 6)) {
        let (a, b) = (LatentCode::new(z1.clone()).unwrap(), LatentCode::new(z2.clone()).unwrap());
        let p = blockwise_hadamard(&a, &b).unwrap();
        for blk in 0..2 {
            let x = p.block(blk);
            for c in 0..3 {
                prop_assert_eq!(x[c], z1[3 * blk + c] * z2[3 * blk + c]);
            }
        }
    }

    #[test]
    fn xyz_is_linear(a in spectrum(), b in spectrum(), alpha in 0.0f64..10.0) {
        let l = spectrum_to_xyz(&a.scale(alpha).unwrap().add(&b));
        let (xa, xb) = (spectrum_to_xyz(&a), spectrum_to_xyz(&b));
        for c in 0..3 {
            let r = alpha * xa.0[c] + xb.0[c];
            prop_assert!((l.0[c] - r).abs() <= 1e-12 * r.abs().max(1.0));
        }
    }

    #[test]
    fn srgb8_round_trips(c in prop::array::uniform3(any::<u8>())) {
        prop_assert_eq!(linear_to_srgb8(srgb8_to_linear(c)), c);
    }

    #[test]
    fn spectra_csv_round_trips(rows in prop::collection::vec(spectrum(), 1..6)) {
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("s{i}")).collect();
        let table = SpectraTable::from_curves(ids.clone(), &rows);
        let back = io::parse_spectra_csv(&io::spectra_csv(&table), "mem").unwrap();
        prop_assert_eq!(&back.ids, &ids);
        for (r, b) in rows.iter().zip(&back.rows) {
            prop_assert!(rel_max(b, r.as_slice()) <= 1e-8);
        }
    }

    #[test]
    fn raw_images_round_trip(w in 1usize..6, h in 1usize..6, ch in 1usize..8, vals in prop::collection::vec(0.0f32..1e6, 5 * 5 * 7)) {
        // Raw dumps store 32-bit floats.
        let data: Vec<f64> = vals[..w * h * ch].iter().map(|&v| v as f64).collect();
        let img = ChannelImage::new(w, h, ch, data).unwrap();
        prop_assert_eq!(io::decode_raw(&io::encode_raw(&img)).unwrap(), img);
    }

    #[test]
    fn codes_csv_round_trips(codes in prop::collection::vec(prop::collection::vec(0.0f64..100.0, 6), 1..5)) {
        let ids: Vec<String> = (0..codes.len()).map(|i| format!("c{i}")).collect();
        let (bi, bc) = io::parse_codes_csv(&io::codes_csv(&ids, &codes), "mem").unwrap();
        prop_assert_eq!(bi, ids);
        for (a, b) in codes.iter().zip(&bc) {
            prop_assert!(rel_max(b, a) <= 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn light_scaling_scales_every_pixel(alpha in 0.1f64..8.0, seed in any::<u64>()) {
        let scene = Scene::reference();
        let job = RenderJob::new(8, 8, 2, 3, seed);
        let codec = Codec::shipped(6).unwrap();
        for mode in [Mode::Spectral, Mode::Latent, Mode::Rgb] {
            let c = (mode == Mode::Latent).then_some(&codec);
            let (a, _) = render(&scene, &job, mode, c).unwrap();
            let (b, _) = render(&scene.scale_lights(alpha).unwrap(), &job, mode, c).unwrap();
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!((alpha * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn multipass_matches_single_latent(seed in any::<u64>(), depth in prop::sample::select(vec![1, 2, 3, -1])) {
        let codec = Codec::shipped(9).unwrap();
        let job = RenderJob::new(8, 6, 2, depth, seed);
        let scene = Scene::reference();
        let (single, s) = render(&scene, &job, Mode::Latent, Some(&codec)).unwrap();
        let (multi, m) = render_latent_multipass(&scene, &job, &codec).unwrap();
        prop_assert!(single.max_abs_diff(&multi).unwrap() <= 1e-9);
        prop_assert_eq!(s.path_hashes, m.path_hashes);
    }

    #[test]
    fn upsampling_is_per_pixel(px in prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 1..40), cut in 0usize..40) {
        let uw = UpsamplerWeights::shipped().unwrap();
        let pixels: Vec<LinearRgb> = px.into_iter().map(LinearRgb).collect();
        let (whole, _) = upsample_image(&uw, &pixels);
        let cut = cut.min(pixels.len());
        let (a, _) = upsample_image(&uw, &pixels[..cut]);
        let (b, _) = upsample_image(&uw, &pixels[cut..]);
        prop_assert_eq!(&whole[..a.len()], &a[..]);
        prop_assert_eq!(&whole[a.len()..], &b[..]);
        prop_assert_eq!(&whole[..uw.k], &upsample(&uw, pixels[0])[..]);
        prop_assert!(whole.iter().all(|v| *v >= 0.0));
    }
}
