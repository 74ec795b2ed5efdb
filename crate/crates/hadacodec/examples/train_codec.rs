//! Train a small k=6 codec from scratch and compare it with the shipped one.
//!
//! cargo run --release --example train_codec -- [EPOCHS]

use hadacodec::dataset::{generate, GenOptions};
use hadacodec::eval::multibounce_eval;
use hadacodec::training::{train, TrainData};
use hadacodec::{Codec, LossWeights, TrainConfig};

fn main() -> hadacodec::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .map_or(20, |s| s.parse().expect("EPOCHS must be an integer"));
    let splits = generate(&GenOptions::default())?.splits();
    let data = TrainData {
        refl: splits.refl_train.clone(),
        illum: splits.illum_train.clone(),
    };
    let cfg = TrainConfig {
        max_epochs: epochs,
        pairs_per_epoch: Some(4096),
        ..Default::default()
    };
    let (weights, report) = train(&data, 6, &cfg, &LossWeights::default())?;
    for e in report.epochs.iter().step_by((epochs / 10).max(1)) {
        println!(
            "epoch {:4}  train {:.4e}  val {:.4e}",
            e.epoch, e.train_total, e.val_total
        );
    }
    println!(
        "best validation loss {:.4e} at epoch {}",
        report.best_val, report.best_epoch
    );

    let fresh = Codec::new(weights)?;
    for (name, codec) in [("fresh", &fresh), ("shipped", &Codec::shipped(6)?)] {
        let res = multibounce_eval(codec, &splits.refl_test, &splits.illum_test, 3, 500, 0)?;
        let means: Vec<String> = res.iter().map(|r| format!("{:.2}", r.mean)).collect();
        println!("{name:<8} mean ΔE94 by bounce: {}", means.join(" / "));
    }
    Ok(())
}
