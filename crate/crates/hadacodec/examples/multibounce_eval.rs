//! Multi-bounce ΔE94 of the shipped k=6 and k=9 codecs on the test split.
//!
//! cargo run --release --example multibounce_eval

use hadacodec::dataset::{generate, GenOptions};
use hadacodec::eval::{multibounce_csv, multibounce_eval};
use hadacodec::Codec;

fn main() -> hadacodec::Result<()> {
    let splits = generate(&GenOptions::default())?.splits();
    for k in [6, 9] {
        let codec = Codec::shipped(k)?;
        let res = multibounce_eval(&codec, &splits.refl_test, &splits.illum_test, 3, 500, 0)?;
        println!("k = {k}");
        print!("{}", multibounce_csv(&res));
    }
    Ok(())
}
