//! Local NCC, diffusion energy and the multi-level objective on a toy pair.
//!
//! `cargo run --example similarity_losses`

use condreg::datagen::{generate_pair, SynthSpec};
use condreg::grid::{image_pyramid, warp, DisplacementField, Interpolation};
use condreg::metrics::{
    dice, diffusion_energy, local_ncc, pyramid_loss, window_for_level, LossConfig,
};

fn main() -> condreg::Result<()> {
    let pair = generate_pair(3, &SynthSpec::with_shape(&[32, 32]))?;
    let gt = pair
        .gt_field
        .clone()
        .expect("synthetic pairs carry their field");

    println!(
        "NCC(F, M)        = {:.4}",
        local_ncc(&pair.fixed, &pair.moving, 5)?
    );
    println!(
        "NCC(F, F)        = {:.4}",
        local_ncc(&pair.fixed, &pair.fixed, 5)?
    );
    println!("diffusion(gt)    = {:.5}", diffusion_energy(&gt)?);
    let d = dice(&pair.fixed_labels, &pair.moving_labels, pair.labels())?;
    println!(
        "Dice before      = {:.4} over {} labels",
        d.mean,
        d.per_label.len()
    );

    // objective at the finest of two levels, scoring the ground-truth field against unwarped levels
    let levels = 2;
    let fixed = image_pyramid(&pair.fixed, levels)?;
    let moving = image_pyramid(&pair.moving, levels)?;
    let warped: Vec<_> = moving
        .iter()
        .map(|m| {
            warp(
                m,
                &DisplacementField::zeros(m.shape().clone()),
                Interpolation::Linear,
            )
        })
        .collect::<Result<_, _>>()?;
    for lambda in [0.0, 1.0, 10.0] {
        let cfg = LossConfig::new(lambda, levels, (0.0, 10.0), levels)?;
        println!(
            "loss(lambda={lambda:>4}) = {:.4}",
            pyramid_loss(&fixed, &warped, &gt, &cfg)?
        );
    }
    println!(
        "NCC windows per level: {:?}",
        (1..=3).map(window_for_level).collect::<Vec<_>>()
    );
    Ok(())
}
