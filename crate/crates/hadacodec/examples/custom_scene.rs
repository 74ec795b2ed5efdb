//! Parse a scene from text, scale its light, and compare two renders with
//! an error map.
//!
//! cargo run --release --example custom_scene

use hadacodec::render::{error_map, image_linear_rgb, parse_scene, render, Mode, RenderJob};

const SCENE: &str = "
camera.position = 0.5 0.5 2.3
material white = flat 0.75
material teal = gaussian 500 40 0.8 0.05
material amber = gaussian 600 30 0.9 0.1
walls = white white white amber teal

[sphere]
center = 0.5 0.25 0.5
radius = 0.2
material = white

[light]
center = 0.5 0.999 0.5
size = 0.3 0.3
spd = blackbody 3200
power = 8
";

fn main() -> hadacodec::Result<()> {
    let scene = parse_scene(SCENE, "inline")?;
    let job = RenderJob::new(48, 48, 16, 4, 1);
    let (a, _) = render(&scene, &job, Mode::Spectral, None)?;
    let (b, _) = render(&scene.scale_lights(2.0)?, &job, Mode::Spectral, None)?;
    let ratio = b
        .data
        .iter()
        .zip(&a.data)
        .filter(|(_, y)| **y > 0.0)
        .map(|(x, y)| x / y)
        .fold(0.0f64, f64::max);
    println!("doubling the light: max pixel ratio {ratio:.12}");

    let (map, mean) = error_map(&image_linear_rgb(&a, None)?, &image_linear_rgb(&b, None)?)?;
    println!("error map over {} pixels, mean MSE {mean:.4e}", map.len());
    Ok(())
}
