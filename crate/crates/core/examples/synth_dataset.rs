//! Generate a small synthetic dataset on disk and read it back.
//!
//! `cargo run --example synth_dataset [out_dir]`

use condreg::datagen::{make_dataset, Dataset, Split, SynthSpec};
use condreg::metrics::dice;

fn main() -> condreg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/example_data".into());
    let spec = SynthSpec::default();
    println!(
        "spec {spec:?}, invertibility margin {:.3}",
        spec.invertibility_margin()
    );
    make_dataset(20, &spec, 0, (0.8, 0.1, 0.1), &out)?;
    let ds = Dataset::open(&out)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let pairs = ds.load_split(split)?;
        let d: f64 = pairs
            .iter()
            .map(|p| dice(&p.fixed_labels, &p.moving_labels, p.labels()).map(|s| s.mean))
            .sum::<condreg::Result<f64>>()?;
        println!(
            "{split:?}: {} pairs, mean unregistered Dice {:.3}",
            pairs.len(),
            d / pairs.len() as f64
        );
    }
    println!("written to {out}");
    Ok(())
}
