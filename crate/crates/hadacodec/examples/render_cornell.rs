//! Render the bundled Cornell box spectrally, in two latent RGB passes and
//! as plain RGB; write previews and print the colour error of each.
//!
//! cargo run --release --example render_cornell -- [OUT_DIR] [narrowband]

use std::path::PathBuf;

use hadacodec::eval::scene_color_report;
use hadacodec::io::write_ppm;
use hadacodec::render::{
    image_linear_rgb, render, render_latent_multipass, shared_exposure, to_srgb8, Mode, RenderJob,
    Scene,
};
use hadacodec::Codec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "cornell_out".into()));
    let scene = if args.next().as_deref() == Some("narrowband") {
        Scene::narrowband_reference()
    } else {
        Scene::reference()
    };
    std::fs::create_dir_all(&out)?;
    let codec = Codec::shipped(6)?;
    let job = RenderJob::new(96, 96, 32, -1, 7);

    let (gt, s_stats) = render(&scene, &job, Mode::Spectral, None)?;
    let (latent, l_stats) = render_latent_multipass(&scene, &job, &codec)?;
    let (rgb, _) = render(&scene, &job, Mode::Rgb, None)?;

    let gt_rgb = image_linear_rgb(&gt, None)?;
    let exposure = shared_exposure(&gt_rgb);
    for (name, img, c) in [
        ("spectral", &gt, None),
        ("latent", &latent, Some(&codec)),
        ("rgb", &rgb, None),
    ] {
        let lin = image_linear_rgb(img, c)?;
        let (rep, _) = scene_color_report(&gt_rgb, &lin, exposure)?;
        write_ppm(
            &out.join(format!("{name}.ppm")),
            &to_srgb8(&lin, img.width, img.height, exposure),
        )?;
        println!(
            "{name:<9} mean ΔE76 {:6.3}  mse {:.3e}",
            rep.mean_de76, rep.mse
        );
    }
    println!(
        "lane evaluations: spectral {} / latent {} = {:.1}x",
        s_stats.lane_evaluations,
        l_stats.lane_evaluations,
        s_stats.lane_evaluations as f64 / l_stats.lane_evaluations as f64
    );
    Ok(())
}
