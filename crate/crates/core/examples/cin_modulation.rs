//! How lambda modulates feature statistics through conditional instance
//! normalization.
//!
//! `cargo run --example cin_modulation`

use condreg::autograd::Array;
use condreg::condnet::{build_variant, cin, Conditioning, ModelConfig};

fn main() -> condreg::Result<()> {
    let model = build_variant(ModelConfig::variant(Conditioning::CirDm, 2))?;
    let (block, layer) = model.cin_layers().next().expect("model has CIN layers");
    let c = model.config().conv_filters;
    let features = Array::new(
        vec![c, 8, 8],
        (0..c * 64)
            .map(|i| ((i * 37) % 101) as f64 / 10.0)
            .collect(),
    );
    for lambda_norm in [0.0, 0.5, 1.0] {
        let code = model.block_code(block, lambda_norm)?;
        let affine = layer.affine(model.params(), code.as_ref());
        let out = cin(&features, &affine);
        let ch0 = &out.data()[..64];
        let mean = ch0.iter().sum::<f64>() / 64.0;
        let std = (ch0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0).sqrt();
        println!(
            "lambda_norm {lambda_norm:.1}: |z| = {:.3}, channel 0 gamma {:+.4} beta {:+.4} -> mean {mean:+.4} std {std:.4}",
            code.as_ref().map_or(0.0, |z| z.norm()),
            affine.gamma[0],
            affine.beta[0]
        );
    }
    Ok(())
}
