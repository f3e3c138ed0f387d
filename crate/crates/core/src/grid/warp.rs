use super::{next_index, same_grid, strides, DisplacementField, Image, LabelMap};
use crate::{Error, Result};

/// Interpolation used when sampling at `x + u(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Linear,
    Nearest,
}

/// Corner lookup for one sample point, shared by the forward and adjoint passes.
struct Stencil {
    lo: [usize; 3],
    hi: [usize; 3],
    t: [f64; 3],
    // false where the unclamped coordinate fell outside the grid
    inside: [bool; 3],
}

impl Stencil {
    fn new(p: &[f64], dims: &[usize]) -> Self {
        let mut s = Stencil {
            lo: [0; 3],
            hi: [0; 3],
            t: [0.0; 3],
            inside: [false; 3],
        };
        for a in 0..dims.len() {
            let max = (dims[a] - 1) as f64;
            let pc = p[a].clamp(0.0, max);
            s.inside[a] = p[a] >= 0.0 && p[a] <= max && dims[a] > 1;
            if dims[a] == 1 {
                continue;
            }
            let lo = (pc.floor() as usize).min(dims[a] - 2);
            s.lo[a] = lo;
            s.hi[a] = lo + 1;
            s.t[a] = pc - lo as f64;
        }
        s
    }
}

#[inline]
fn corner(s: &Stencil, mask: usize, nd: usize, st: &[usize]) -> (usize, f64) {
    let mut off = 0;
    let mut w = 1.0;
    for a in 0..nd {
        if mask >> a & 1 == 1 {
            off += s.hi[a] * st[a];
            w *= s.t[a];
        } else {
            off += s.lo[a] * st[a];
            w *= 1.0 - s.t[a];
        }
    }
    (off, w)
}

fn nearest_offset(p: &[f64], dims: &[usize], st: &[usize]) -> usize {
    let mut off = 0;
    for a in 0..dims.len() {
        let max = (dims[a] - 1) as f64;
        off += (p[a].clamp(0.0, max).round() as usize) * st[a];
    }
    off
}

/// Warps `channels` stacked images (each `prod(dims)` long) by `field`
/// (components first). Out-of-grid samples are clamped to the border.
pub fn warp_raw(
    images: &[f64],
    n_channels: usize,
    dims: &[usize],
    field: &[f64],
    mode: Interpolation,
) -> Vec<f64> {
    let nd = dims.len();
    let n: usize = dims.iter().product();
    debug_assert_eq!(images.len(), n * n_channels);
    debug_assert_eq!(field.len(), n * nd);
    let st = strides(dims);
    let mut out = vec![0.0; n * n_channels];
    let mut idx = vec![0usize; nd];
    let mut p = [0.0; 3];
    for flat in 0..n {
        for a in 0..nd {
            p[a] = idx[a] as f64 + field[a * n + flat];
        }
        match mode {
            Interpolation::Nearest => {
                let off = nearest_offset(&p[..nd], dims, &st);
                for c in 0..n_channels {
                    out[c * n + flat] = images[c * n + off];
                }
            }
            Interpolation::Linear => {
                let s = Stencil::new(&p[..nd], dims);
                for mask in 0..(1 << nd) {
                    let (off, w) = corner(&s, mask, nd, &st);
                    if w == 0.0 {
                        continue;
                    }
                    for c in 0..n_channels {
                        out[c * n + flat] += w * images[c * n + off];
                    }
                }
            }
        }
        next_index(&mut idx, dims);
    }
    out
}

/// Adjoint of linear [`warp_raw`]: accumulates `grad_out` into the image
/// gradient (when requested) and the field gradient.
pub fn warp_raw_backward(
    images: &[f64],
    n_channels: usize,
    dims: &[usize],
    field: &[f64],
    grad_out: &[f64],
    mut grad_images: Option<&mut [f64]>,
    grad_field: &mut [f64],
) {
    let nd = dims.len();
    let n: usize = dims.iter().product();
    let st = strides(dims);
    let mut idx = vec![0usize; nd];
    let mut p = [0.0; 3];
    for flat in 0..n {
        for a in 0..nd {
            p[a] = idx[a] as f64 + field[a * n + flat];
        }
        let s = Stencil::new(&p[..nd], dims);
        for mask in 0..(1 << nd) {
            let (off, w) = corner(&s, mask, nd, &st);
            let mut gsum = 0.0;
            for c in 0..n_channels {
                let g = grad_out[c * n + flat];
                gsum += g * images[c * n + off];
                if let Some(gi) = grad_images.as_deref_mut() {
                    gi[c * n + off] += w * g;
                }
            }
            if gsum == 0.0 {
                continue;
            }
            // d(weight)/d(t_a) for each axis
            for a in 0..nd {
                if !s.inside[a] {
                    continue;
                }
                let mut dw = if mask >> a & 1 == 1 { 1.0 } else { -1.0 };
                for b in 0..nd {
                    if b != a {
                        dw *= if mask >> b & 1 == 1 {
                            s.t[b]
                        } else {
                            1.0 - s.t[b]
                        };
                    }
                }
                grad_field[a * n + flat] += gsum * dw;
            }
        }
        next_index(&mut idx, dims);
    }
}

fn check_field(field: &DisplacementField) -> Result<()> {
    if field.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Value(
            "displacement field has non-finite values".into(),
        ));
    }
    Ok(())
}

/// Resamples `image` at `x + u(x)`.
pub fn warp(image: &Image, field: &DisplacementField, mode: Interpolation) -> Result<Image> {
    same_grid(image.shape(), field.shape(), "warp")?;
    check_field(field)?;
    let out = warp_raw(image.data(), 1, image.shape().dims(), field.data(), mode);
    Image::new(image.shape().clone(), out)?.with_spacing(image.spacing().to_vec())
}

/// Propagates a label map through `field` with nearest-neighbour sampling.
pub fn warp_labels(labels: &LabelMap, field: &DisplacementField) -> Result<LabelMap> {
    same_grid(labels.shape(), field.shape(), "warp_labels")?;
    check_field(field)?;
    let dims = labels.shape().dims();
    let nd = dims.len();
    let n = labels.shape().len();
    let st = strides(dims);
    let u = field.data();
    let src = labels.data();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; nd];
    let mut p = [0.0; 3];
    for flat in 0..n {
        for a in 0..nd {
            p[a] = idx[a] as f64 + u[a * n + flat];
        }
        out.push(src[nearest_offset(&p[..nd], dims, &st)]);
        next_index(&mut idx, dims);
    }
    LabelMap::new(labels.shape().clone(), out, labels.labels().to_vec())?
        .with_spacing(labels.spacing().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn shape(d: &[usize]) -> GridShape {
        GridShape::new(d.to_vec()).unwrap()
    }

    #[test]
    fn zero_field_is_identity_for_both_modes() {
        let s = shape(&[5, 7]);
        let im = Image::from_fn(s.clone(), |i| (i[0] * 7 + i[1]) as f64 * 0.37 - 1.0).unwrap();
        let zero = DisplacementField::zeros(s);
        assert_eq!(warp(&im, &zero, Interpolation::Linear).unwrap(), im);
        assert_eq!(warp(&im, &zero, Interpolation::Nearest).unwrap(), im);
    }

    #[test]
    fn ramp_shift_by_one() {
        let s = shape(&[6, 8]);
        let ramp = Image::from_fn(s.clone(), |i| i[1] as f64).unwrap();
        let u = DisplacementField::from_fn(s, |_| vec![0.0, 1.0]).unwrap();
        let out = warp(&ramp, &u, Interpolation::Linear).unwrap();
        for r in 0..6 {
            for c in 0..7 {
                assert!((out.get(&[r, c]) - (c as f64 + 1.0)).abs() < 1e-12);
            }
            // last column clamps to the border
            assert_eq!(out.get(&[r, 7]), 7.0);
        }
    }

    #[test]
    fn integer_shift_of_labels_is_exact_in_interior() {
        let s = shape(&[8, 8]);
        let lab = LabelMap::from_values(s.clone(), (0..64).map(|i| ((i * 7) % 4) as i32).collect())
            .unwrap();
        let u = DisplacementField::from_fn(s, |_| vec![2.0, -1.0]).unwrap();
        let out = warp_labels(&lab, &u).unwrap();
        for r in 0..6 {
            for c in 1..8 {
                assert_eq!(out.data()[r * 8 + c], lab.data()[(r + 2) * 8 + c - 1]);
            }
        }
    }

    #[test]
    fn mismatched_grid_is_a_dimension_error() {
        let im = Image::zeros(shape(&[4, 4]));
        let u = DisplacementField::zeros(shape(&[4, 5]));
        assert!(matches!(
            warp(&im, &u, Interpolation::Linear),
            Err(Error::Dimension(_))
        ));
    }
}
