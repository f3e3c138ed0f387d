use crate::grid::{same_grid, Image};
use crate::{Error, Result};

/// Stabilizer added to the product of local variances.
pub const NCC_EPS: f64 = 1e-5;

/// Sum over the `(2r+1)^D` box around every voxel, truncated at the borders.
pub fn box_sum(data: &[f64], dims: &[usize], radius: usize) -> Vec<f64> {
    let mut cur = data.to_vec();
    let mut tmp = vec![0.0; data.len()];
    let mut prefix = Vec::new();
    for axis in 0..dims.len() {
        let n = dims[axis];
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product();
        prefix.resize(n + 1, 0.0);
        for o in 0..outer {
            for k in 0..inner {
                let at = |i: usize| (o * n + i) * inner + k;
                prefix[0] = 0.0;
                for i in 0..n {
                    prefix[i + 1] = prefix[i] + cur[at(i)];
                }
                for i in 0..n {
                    let lo = i.saturating_sub(radius);
                    let hi = (i + radius + 1).min(n);
                    tmp[at(i)] = prefix[hi] - prefix[lo];
                }
            }
        }
        std::mem::swap(&mut cur, &mut tmp);
    }
    cur
}

struct Moments {
    count: Vec<f64>,
    sum_a: Vec<f64>,
    sum_b: Vec<f64>,
    cross: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
}

fn moments(a: &[f64], b: &[f64], dims: &[usize], window: usize) -> Moments {
    let r = window / 2;
    let ones = vec![1.0; a.len()];
    let count = box_sum(&ones, dims, r);
    let sum_a = box_sum(a, dims, r);
    let sum_b = box_sum(b, dims, r);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let saa = box_sum(&aa, dims, r);
    let sbb = box_sum(&bb, dims, r);
    let sab = box_sum(&ab, dims, r);
    let n = a.len();
    let mut m = Moments {
        cross: Vec::with_capacity(n),
        var_a: Vec::with_capacity(n),
        var_b: Vec::with_capacity(n),
        count,
        sum_a,
        sum_b,
    };
    for p in 0..n {
        let c = m.count[p];
        m.cross.push(sab[p] - m.sum_a[p] * m.sum_b[p] / c);
        m.var_a
            .push((saa[p] - m.sum_a[p] * m.sum_a[p] / c).max(0.0));
        m.var_b
            .push((sbb[p] - m.sum_b[p] * m.sum_b[p] / c).max(0.0));
    }
    m
}

/// Mean squared local correlation coefficient over a `window^D` box.
///
/// Works on any number of axes; `window` must be odd.
pub fn local_ncc_raw(a: &[f64], b: &[f64], dims: &[usize], window: usize) -> f64 {
    let m = moments(a, b, dims, window);
    let n = a.len() as f64;
    (0..a.len())
        .map(|p| m.cross[p] * m.cross[p] / (m.var_a[p] * m.var_b[p] + NCC_EPS))
        .sum::<f64>()
        / n
}

/// [`local_ncc_raw`] together with its gradient with respect to both inputs.
pub fn local_ncc_grad_raw(
    a: &[f64],
    b: &[f64],
    dims: &[usize],
    window: usize,
) -> (f64, Vec<f64>, Vec<f64>) {
    let r = window / 2;
    let m = moments(a, b, dims, window);
    let len = a.len();
    let inv_n = 1.0 / len as f64;
    let mut value = 0.0;
    // per-centre partials, pre-scaled by 1/N
    let mut d_cross = vec![0.0; len];
    let mut d_va = vec![0.0; len];
    let mut d_vb = vec![0.0; len];
    let mut d_cross_mb = vec![0.0; len];
    let mut d_cross_ma = vec![0.0; len];
    let mut d_va_ma = vec![0.0; len];
    let mut d_vb_mb = vec![0.0; len];
    for p in 0..len {
        let den = m.var_a[p] * m.var_b[p] + NCC_EPS;
        let cc = m.cross[p] * m.cross[p] / den;
        value += cc;
        let mean_a = m.sum_a[p] / m.count[p];
        let mean_b = m.sum_b[p] / m.count[p];
        d_cross[p] = 2.0 * m.cross[p] / den * inv_n;
        d_va[p] = -cc * m.var_b[p] / den * inv_n;
        d_vb[p] = -cc * m.var_a[p] / den * inv_n;
        d_cross_mb[p] = d_cross[p] * mean_b;
        d_cross_ma[p] = d_cross[p] * mean_a;
        d_va_ma[p] = d_va[p] * mean_a;
        d_vb_mb[p] = d_vb[p] * mean_b;
    }
    let s_cross = box_sum(&d_cross, dims, r);
    let s_va = box_sum(&d_va, dims, r);
    let s_vb = box_sum(&d_vb, dims, r);
    let s_cross_mb = box_sum(&d_cross_mb, dims, r);
    let s_cross_ma = box_sum(&d_cross_ma, dims, r);
    let s_va_ma = box_sum(&d_va_ma, dims, r);
    let s_vb_mb = box_sum(&d_vb_mb, dims, r);
    let mut ga = vec![0.0; len];
    let mut gb = vec![0.0; len];
    for q in 0..len {
        ga[q] = b[q] * s_cross[q] - s_cross_mb[q] + 2.0 * (a[q] * s_va[q] - s_va_ma[q]);
        gb[q] = a[q] * s_cross[q] - s_cross_ma[q] + 2.0 * (b[q] * s_vb[q] - s_vb_mb[q]);
    }
    (value * inv_n, ga, gb)
}

pub(crate) fn check_window(window: usize, min_axis: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "NCC window must be odd, got {window}"
        )));
    }
    if window > min_axis {
        return Err(Error::Config(format!(
            "NCC window {window} exceeds the smallest axis ({min_axis})"
        )));
    }
    Ok(())
}

/// Local normalized cross-correlation (squared, in `[0, 1]`).
pub fn local_ncc(f: &Image, m: &Image, window: usize) -> Result<f64> {
    same_grid(f.shape(), m.shape(), "local_ncc")?;
    check_window(window, f.shape().min_axis())?;
    Ok(local_ncc_raw(f.data(), m.data(), f.shape().dims(), window))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn random_image(dims: &[usize], seed: u64) -> Image {
        let mut s = seed;
        Image::from_fn(GridShape::new(dims.to_vec()).unwrap(), |_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            10.0 * (s >> 11) as f64 / (1u64 << 53) as f64
        })
        .unwrap()
    }

    #[test]
    fn box_sum_counts_truncated_windows() {
        let ones = vec![1.0; 12];
        let s = box_sum(&ones, &[3, 4], 1);
        assert_eq!(
            s,
            vec![4.0, 6.0, 6.0, 4.0, 6.0, 9.0, 9.0, 6.0, 4.0, 6.0, 6.0, 4.0]
        );
    }

    #[test]
    fn self_correlation_is_one() {
        let f = random_image(&[9, 11], 3);
        assert!((local_ncc(&f, &f, 3).unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn affine_intensity_invariance() {
        let f = random_image(&[8, 8, 6], 5);
        let g = f.map(|v| 2.0 * v + 3.0).unwrap();
        assert!((local_ncc(&f, &g, 3).unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn bad_windows_are_config_errors() {
        let f = random_image(&[5, 5], 1);
        assert!(matches!(local_ncc(&f, &f, 4), Err(Error::Config(_))));
        assert!(matches!(local_ncc(&f, &f, 7), Err(Error::Config(_))));
    }
}
