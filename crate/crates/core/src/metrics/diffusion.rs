use crate::grid::{strides, DisplacementField};
use crate::{Error, Result};

// Visits every forward difference `u_k(x + e_j) - u_k(x)` with its weight
// 1 / (D * C * M_j), M_j being the number of valid positions along axis j.
fn for_each_difference(dims: &[usize], n_comp: usize, mut visit: impl FnMut(usize, usize, f64)) {
    let nd = dims.len();
    let n: usize = dims.iter().product();
    let st = strides(dims);
    for j in 0..nd {
        let valid = n / dims[j] * (dims[j] - 1);
        let w = 1.0 / (nd * n_comp * valid) as f64;
        for k in 0..n_comp {
            let base = k * n;
            for flat in 0..n {
                if (flat / st[j]) % dims[j] + 1 < dims[j] {
                    visit(base + flat, base + flat + st[j], w);
                }
            }
        }
    }
}

/// Mean squared forward-difference gradient over axes, components and voxels.
pub fn diffusion_energy_raw(field: &[f64], dims: &[usize], n_comp: usize) -> f64 {
    let mut e = 0.0;
    for_each_difference(dims, n_comp, |a, b, w| {
        let d = field[b] - field[a];
        e += w * d * d;
    });
    e
}

pub fn diffusion_grad_raw(field: &[f64], dims: &[usize], n_comp: usize) -> Vec<f64> {
    let mut g = vec![0.0; field.len()];
    for_each_difference(dims, n_comp, |a, b, w| {
        let d = 2.0 * w * (field[b] - field[a]);
        g[b] += d;
        g[a] -= d;
    });
    g
}

/// Diffusion regularizer of a displacement field (non-negative).
pub fn diffusion_energy(field: &DisplacementField) -> Result<f64> {
    let dims = field.shape().dims();
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::Dimension(format!(
            "diffusion energy needs at least 2 voxels per axis, got {dims:?}"
        )));
    }
    Ok(diffusion_energy_raw(field.data(), dims, field.components()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn shape(d: &[usize]) -> GridShape {
        GridShape::new(d.to_vec()).unwrap()
    }

    #[test]
    fn constant_fields_have_zero_energy() {
        assert_eq!(
            diffusion_energy(&DisplacementField::zeros(shape(&[4, 5]))).unwrap(),
            0.0
        );
        let c = DisplacementField::from_fn(shape(&[4, 5]), |_| vec![5.0, 5.0]).unwrap();
        assert_eq!(diffusion_energy(&c).unwrap(), 0.0);
    }

    #[test]
    fn unit_slope_against_forward_difference_oracle() {
        let (h, w) = (6usize, 7usize);
        let f = DisplacementField::from_fn(shape(&[h, w]), |i| vec![i[0] as f64, 0.0]).unwrap();
        // oracle: squared forward differences, averaged per axis over valid
        // positions and both components, then averaged over the two axes
        let u0 = |r: usize, _c: usize| r as f64;
        let mut ax0 = 0.0;
        for r in 0..h - 1 {
            for c in 0..w {
                ax0 += (u0(r + 1, c) - u0(r, c)).powi(2);
            }
        }
        let mut ax1 = 0.0;
        for r in 0..h {
            for c in 0..w - 1 {
                ax1 += (u0(r, c + 1) - u0(r, c)).powi(2);
            }
        }
        let expected =
            0.5 * (ax0 / (2.0 * ((h - 1) * w) as f64) + ax1 / (2.0 * (h * (w - 1)) as f64));
        assert!((diffusion_energy(&f).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.25).abs() < 1e-15);
    }

    #[test]
    fn singleton_axis_is_rejected() {
        let f = DisplacementField::zeros(shape(&[1, 5]));
        assert!(matches!(diffusion_energy(&f), Err(Error::Dimension(_))));
    }
}
