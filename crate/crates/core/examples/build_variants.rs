//! Build the four conditioning variants and compare their parameter budgets.
//!
//! `cargo run --example build_variants [dims]`

use condreg::condnet::{build_variant, Conditioning, ModelConfig};

fn main() -> condreg::Result<()> {
    let dims: usize = std::env::args()
        .nth(1)
        .map_or(Ok(3), |s| s.parse())
        .expect("dims must be 2 or 3");
    println!(
        "{:<8} {:>10} {:>10} {:>13} {:>9} {:>7} {:>16}",
        "variant", "total", "trunk", "conditioning", "mappings", "inputs", "hypernet (est.)"
    );
    for variant in [
        Conditioning::CirDm,
        Conditioning::CirCm,
        Conditioning::Concat,
        Conditioning::Fixed,
    ] {
        let cfg = match variant {
            Conditioning::Fixed => ModelConfig::fixed(1.0, dims),
            v => ModelConfig::variant(v, dims),
        };
        let model = build_variant(cfg)?;
        let r = model.parameter_report();
        println!(
            "{:<8} {:>10} {:>10} {:>13} {:>9} {:>7} {:>16}",
            variant.to_string(),
            r.total,
            r.trunk,
            r.conditioning,
            r.mapping_networks,
            r.input_channels,
            r.hypernetwork_estimate
        );
    }
    Ok(())
}
