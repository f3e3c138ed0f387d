//! Warp an image by a smooth displacement field and inspect its Jacobian.
//!
//! `cargo run --example warp_and_jacobian`

use condreg::grid::{
    jacobian_determinant, resample_image, std_jacobian, warp, DisplacementField, GridShape, Image,
    Interpolation, Resample,
};

fn main() -> condreg::Result<()> {
    let shape = GridShape::new(vec![32, 32])?;
    let img = Image::from_fn(shape.clone(), |x| {
        let (r, c) = (x[0] as f64 - 16.0, x[1] as f64 - 16.0);
        if r * r + c * c < 80.0 {
            1.0
        } else {
            0.0
        }
    })?;
    // a gentle swirl around the centre
    let field = DisplacementField::from_fn(shape, |x| {
        let (r, c) = (x[0] as f64 - 16.0, x[1] as f64 - 16.0);
        let s = 2.0 * (-(r * r + c * c) / 120.0).exp();
        vec![s * c / 16.0, -s * r / 16.0]
    })?;

    let linear = warp(&img, &field, Interpolation::Linear)?;
    let nearest = warp(&img, &field, Interpolation::Nearest)?;
    let (_, det) = jacobian_determinant(&field)?;
    let (lo, hi) = det
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!(
        "mass before {:.1}, after linear {:.1}, after nearest {:.1}",
        img.data().iter().sum::<f64>(),
        linear.data().iter().sum::<f64>(),
        nearest.data().iter().sum::<f64>()
    );
    println!(
        "Jacobian determinant in [{lo:.4}, {hi:.4}], std {:.4}",
        std_jacobian(&field)?
    );

    // the pyramid helpers: halve then double
    let coarse = resample_image(&img, Resample::Down2)?;
    let back = resample_image(&coarse, Resample::Up2)?;
    println!(
        "pyramid: {:?} -> {:?} -> {:?}",
        img.shape().dims(),
        coarse.shape().dims(),
        back.shape().dims()
    );
    Ok(())
}
