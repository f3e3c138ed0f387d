use super::diffusion::{diffusion_energy_raw, diffusion_grad_raw};
use super::ncc::{check_window, local_ncc_grad_raw, local_ncc_raw};
use crate::grid::{same_grid, DisplacementField, Image};
use crate::{Error, Result};

/// Weighting and level for one evaluation of the pyramid objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Raw regularization weight (not normalized).
    pub lambda_weight: f64,
    /// Active level `l`, 1-based; level 1 is the coarsest.
    pub level: usize,
}

impl LossConfig {
    pub fn new(
        lambda_weight: f64,
        level: usize,
        lambda_range: (f64, f64),
        levels: usize,
    ) -> Result<Self> {
        if !(lambda_range.0..=lambda_range.1).contains(&lambda_weight) {
            return Err(Error::Range(format!(
                "lambda {lambda_weight} outside [{}, {}]",
                lambda_range.0, lambda_range.1
            )));
        }
        if level == 0 || level > levels {
            return Err(Error::Config(format!("level {level} not in 1..={levels}")));
        }
        Ok(LossConfig {
            lambda_weight,
            level,
        })
    }
}

/// NCC window for pyramid level `i` (1-based, coarsest first): `1 + 2i`.
pub fn window_for_level(i: usize) -> usize {
    1 + 2 * i
}

fn check_pyramids(
    f: &[Image],
    warped: &[Image],
    field: &DisplacementField,
    level: usize,
) -> Result<()> {
    if level == 0 || f.len() != level || warped.len() != level {
        return Err(Error::Config(format!(
            "level {level} needs {level} pyramid images, got {} fixed and {} warped",
            f.len(),
            warped.len()
        )));
    }
    for (i, (a, b)) in f.iter().zip(warped).enumerate() {
        same_grid(a.shape(), b.shape(), "pyramid_loss level")?;
        check_window(window_for_level(i + 1), a.shape().min_axis())?;
    }
    same_grid(f[level - 1].shape(), field.shape(), "pyramid_loss field")?;
    Ok(())
}

/// `sum_i -(1 / 2^(l-i)) NCC_{1+2i}(F_i, M_i(phi)) + lambda * diffusion(phi)`.
///
/// Pyramids are ordered coarsest first and the field lives at level `l`.
pub fn pyramid_loss(
    f_pyramid: &[Image],
    warped_pyramid: &[Image],
    field: &DisplacementField,
    cfg: &LossConfig,
) -> Result<f64> {
    check_pyramids(f_pyramid, warped_pyramid, field, cfg.level)?;
    let l = cfg.level;
    let mut loss = 0.0;
    for (i, (f, w)) in f_pyramid.iter().zip(warped_pyramid).enumerate() {
        let weight = 1.0 / (1u64 << (l - 1 - i)) as f64;
        loss -= weight
            * local_ncc_raw(
                f.data(),
                w.data(),
                f.shape().dims(),
                window_for_level(i + 1),
            );
    }
    let dims = field.shape().dims();
    Ok(loss + cfg.lambda_weight * diffusion_energy_raw(field.data(), dims, field.components()))
}

/// Value and gradient of [`pyramid_loss`] with respect to every warped level
/// and the field.
#[derive(Clone, Debug)]
pub struct PyramidGrad {
    pub value: f64,
    pub warped: Vec<Vec<f64>>,
    pub field: Vec<f64>,
}

pub fn pyramid_loss_grad(
    f_pyramid: &[Image],
    warped_pyramid: &[Image],
    field: &DisplacementField,
    cfg: &LossConfig,
) -> Result<PyramidGrad> {
    check_pyramids(f_pyramid, warped_pyramid, field, cfg.level)?;
    let l = cfg.level;
    let mut value = 0.0;
    let mut warped = Vec::with_capacity(l);
    for (i, (f, w)) in f_pyramid.iter().zip(warped_pyramid).enumerate() {
        let weight = 1.0 / (1u64 << (l - 1 - i)) as f64;
        let (v, _, gw) = local_ncc_grad_raw(
            f.data(),
            w.data(),
            f.shape().dims(),
            window_for_level(i + 1),
        );
        value -= weight * v;
        warped.push(gw.into_iter().map(|g| -weight * g).collect());
    }
    let dims = field.shape().dims();
    let nc = field.components();
    value += cfg.lambda_weight * diffusion_energy_raw(field.data(), dims, nc);
    let field_grad = diffusion_grad_raw(field.data(), dims, nc)
        .into_iter()
        .map(|g| cfg.lambda_weight * g)
        .collect();
    Ok(PyramidGrad {
        value,
        warped,
        field: field_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn shape(d: &[usize]) -> GridShape {
        GridShape::new(d.to_vec()).unwrap()
    }

    fn textured(d: &[usize]) -> Image {
        Image::from_fn(shape(d), |i| {
            ((i[0] * 13 + i[1] * 7) % 11) as f64 * 0.1 + (i[1] as f64).sin()
        })
        .unwrap()
    }

    #[test]
    fn single_level_perfect_match() {
        let f = textured(&[8, 8]);
        let cfg = LossConfig::new(0.0, 1, (0.0, 10.0), 3).unwrap();
        let u = DisplacementField::zeros(shape(&[8, 8]));
        let v = pyramid_loss(&[f.clone()], &[f], &u, &cfg).unwrap();
        assert!((v + 1.0).abs() < 1e-4);
    }

    #[test]
    fn two_level_weights() {
        let f1 = textured(&[8, 8]);
        let f2 = textured(&[16, 16]);
        let cfg = LossConfig::new(0.0, 2, (0.0, 10.0), 3).unwrap();
        let u = DisplacementField::zeros(shape(&[16, 16]));
        let v = pyramid_loss(&[f1.clone(), f2.clone()], &[f1, f2], &u, &cfg).unwrap();
        assert!((v + 1.5).abs() < 1e-4);
    }

    #[test]
    fn zero_similarity_plus_regularizer() {
        // constant images have zero local variance, hence zero NCC
        let f = Image::constant(shape(&[6, 7]), 1.0);
        let m = Image::constant(shape(&[6, 7]), 4.0);
        let u = DisplacementField::from_fn(shape(&[6, 7]), |i| vec![i[0] as f64, 0.0]).unwrap();
        let cfg = LossConfig::new(2.0, 1, (0.0, 10.0), 3).unwrap();
        let v = pyramid_loss(&[f], &[m], &u, &cfg).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_config_error() {
        let f = textured(&[8, 8]);
        let cfg = LossConfig::new(0.0, 2, (0.0, 10.0), 3).unwrap();
        let u = DisplacementField::zeros(shape(&[8, 8]));
        assert!(matches!(
            pyramid_loss(&[f.clone()], &[f], &u, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn loss_config_validates_ranges() {
        assert!(matches!(
            LossConfig::new(11.0, 1, (0.0, 10.0), 3),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            LossConfig::new(1.0, 4, (0.0, 10.0), 3),
            Err(Error::Config(_))
        ));
    }
}
