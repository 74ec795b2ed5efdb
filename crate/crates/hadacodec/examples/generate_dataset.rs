//! Build the reflectance and illumination sets and print their makeup.
//!
//! cargo run --release --example generate_dataset -- [OUT_DIR]

use hadacodec::dataset::{generate, write_dataset, GenOptions};

fn main() -> hadacodec::Result<()> {
    let ds = generate(&GenOptions::default())?;
    let summary = ds.summary();
    println!(
        "reflectances: {} train, {} test",
        summary.reflectance_train, summary.reflectance_test
    );
    println!(
        "illuminations: {} train, {} test ({} kept of {} after de-duplication)",
        summary.illumination_train,
        summary.illumination_test,
        summary.dedup_kept,
        summary.illumination_pool
    );
    for (origin, counts) in &summary.origins {
        println!("  {origin:<18} {counts:?}");
    }
    if let Some(dir) = std::env::args().nth(1) {
        for p in write_dataset(std::path::Path::new(&dir), &ds)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}
