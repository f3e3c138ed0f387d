use super::{next_index, strides, DisplacementField};
use crate::{Error, Result};

/// `det(I + du/dx)` at every interior voxel, central differences.
///
/// The returned grid has two fewer voxels per axis (boundary excluded); it is
/// returned as a flat C-order vector together with its dims.
pub fn jacobian_determinant(field: &DisplacementField) -> Result<(Vec<usize>, Vec<f64>)> {
    let dims = field.shape().dims();
    if dims.iter().any(|&d| d < 3) {
        return Err(Error::Dimension(format!(
            "jacobian needs at least 3 voxels per axis, got {dims:?}"
        )));
    }
    let nd = dims.len();
    let n = field.shape().len();
    let st = strides(dims);
    let inner: Vec<usize> = dims.iter().map(|d| d - 2).collect();
    let u = field.data();
    let mut out = Vec::with_capacity(inner.iter().product());
    let mut idx = vec![0usize; nd];
    let mut m = [[0.0f64; 3]; 3];
    loop {
        let flat: usize = idx.iter().zip(&st).map(|(i, s)| (i + 1) * s).sum();
        for k in 0..nd {
            for j in 0..nd {
                let d = 0.5 * (u[k * n + flat + st[j]] - u[k * n + flat - st[j]]);
                m[k][j] = d + if k == j { 1.0 } else { 0.0 };
            }
        }
        out.push(det(&m, nd));
        if !next_index(&mut idx, &inner) {
            break;
        }
    }
    Ok((inner, out))
}

fn det(m: &[[f64; 3]; 3], nd: usize) -> f64 {
    if nd == 2 {
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    } else {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

/// Population standard deviation of the interior Jacobian determinant.
pub fn std_jacobian(field: &DisplacementField) -> Result<f64> {
    let (_, j) = jacobian_determinant(field)?;
    let n = j.len() as f64;
    let mean = j.iter().sum::<f64>() / n;
    let var = j.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn affine(dims: &[usize], a: [[f64; 3]; 3]) -> DisplacementField {
        let nd = dims.len();
        DisplacementField::from_fn(GridShape::new(dims.to_vec()).unwrap(), |i| {
            (0..nd)
                .map(|k| (0..nd).map(|j| a[k][j] * i[j] as f64).sum())
                .collect()
        })
        .unwrap()
    }

    #[test]
    fn zero_field_has_unit_determinant() {
        let f = DisplacementField::zeros(GridShape::new(vec![5, 6, 4]).unwrap());
        let (dims, j) = jacobian_determinant(&f).unwrap();
        assert_eq!(dims, vec![3, 4, 2]);
        assert!(j.iter().all(|&v| v == 1.0));
        assert_eq!(std_jacobian(&f).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_stretch() {
        let f = affine(&[6, 7], [[0.1, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0; 3]]);
        let (_, j) = jacobian_determinant(&f).unwrap();
        assert!(j.iter().all(|&v| (v - 1.1).abs() < 1e-12));
    }

    #[test]
    fn affine_3d_matches_det_of_identity_plus_a() {
        let a = [[0.1, -0.2, 0.05], [0.3, 0.0, 0.1], [-0.1, 0.2, -0.3]];
        let f = affine(&[5, 6, 7], a);
        let mut ia = a;
        for (k, row) in ia.iter_mut().enumerate() {
            row[k] += 1.0;
        }
        let expected = det(&ia, 3);
        let (_, j) = jacobian_determinant(&f).unwrap();
        assert!(j.iter().all(|&v| (v - expected).abs() < 1e-6));
        assert!(std_jacobian(&f).unwrap() <= 1e-6);
    }

    #[test]
    fn too_small_grid_is_rejected() {
        let f = DisplacementField::zeros(GridShape::new(vec![2, 5]).unwrap());
        assert!(matches!(jacobian_determinant(&f), Err(Error::Dimension(_))));
    }
}
