use super::{DisplacementField, Image};
use crate::{Error, Result};

/// Resampling factor for [`resample_image`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    Down2,
    Up2,
}

/// Source index pair and weight of output sample `j` when upsampling an axis of
/// length `n` by two (half-voxel aligned, border clamped).
#[inline]
fn up_tap(j: usize, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let s = ((j as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = (s.floor() as usize).min(n - 2);
    (lo, lo + 1, s - lo as f64)
}

fn split(dims: &[usize], n_channels: usize, axis: usize) -> (usize, usize) {
    let outer = n_channels * dims[..axis].iter().product::<usize>();
    let inner = dims[axis + 1..].iter().product::<usize>();
    (outer, inner)
}

fn upsample_axis(data: &[f64], n_channels: usize, dims: &[usize], axis: usize) -> Vec<f64> {
    let n = dims[axis];
    let (outer, inner) = split(dims, n_channels, axis);
    let mut out = vec![0.0; outer * 2 * n * inner];
    for o in 0..outer {
        for j in 0..2 * n {
            let (lo, hi, t) = up_tap(j, n);
            let dst = (o * 2 * n + j) * inner;
            let a = (o * n + lo) * inner;
            let b = (o * n + hi) * inner;
            for k in 0..inner {
                out[dst + k] = (1.0 - t) * data[a + k] + t * data[b + k];
            }
        }
    }
    out
}

fn upsample_axis_adjoint(grad: &[f64], n_channels: usize, dims: &[usize], axis: usize) -> Vec<f64> {
    // dims are the *input* (coarse) dims
    let n = dims[axis];
    let (outer, inner) = split(dims, n_channels, axis);
    let mut out = vec![0.0; outer * n * inner];
    for o in 0..outer {
        for j in 0..2 * n {
            let (lo, hi, t) = up_tap(j, n);
            let src = (o * 2 * n + j) * inner;
            let a = (o * n + lo) * inner;
            let b = (o * n + hi) * inner;
            for k in 0..inner {
                out[a + k] += (1.0 - t) * grad[src + k];
                out[b + k] += t * grad[src + k];
            }
        }
    }
    out
}

/// Multilinear x2 upsampling of `n_channels` stacked arrays.
pub fn upsample2_raw(data: &[f64], n_channels: usize, dims: &[usize]) -> Vec<f64> {
    let mut cur = data.to_vec();
    let mut d = dims.to_vec();
    for axis in 0..dims.len() {
        cur = upsample_axis(&cur, n_channels, &d, axis);
        d[axis] *= 2;
    }
    cur
}

/// Adjoint of [`upsample2_raw`]; `dims` are the coarse dims.
pub fn upsample2_raw_adjoint(grad: &[f64], n_channels: usize, dims: &[usize]) -> Vec<f64> {
    let mut d: Vec<usize> = dims.iter().map(|x| x * 2).collect();
    let mut cur = grad.to_vec();
    for axis in (0..dims.len()).rev() {
        d[axis] /= 2;
        cur = upsample_axis_adjoint(&cur, n_channels, &d, axis);
    }
    cur
}

/// 2-wide average pooling along every axis (odd trailing voxels dropped).
pub fn avg_pool2_raw(data: &[f64], n_channels: usize, dims: &[usize]) -> Vec<f64> {
    let mut cur = data.to_vec();
    let mut d = dims.to_vec();
    for axis in 0..dims.len() {
        let n = d[axis];
        let m = n / 2;
        let (outer, inner) = split(&d, n_channels, axis);
        let mut out = vec![0.0; outer * m * inner];
        for o in 0..outer {
            for i in 0..m {
                let dst = (o * m + i) * inner;
                let a = (o * n + 2 * i) * inner;
                let b = a + inner;
                for k in 0..inner {
                    out[dst + k] = 0.5 * (cur[a + k] + cur[b + k]);
                }
            }
        }
        cur = out;
        d[axis] = m;
    }
    cur
}

/// Adjoint of [`avg_pool2_raw`]; `dims` are the fine dims.
pub fn avg_pool2_raw_adjoint(grad: &[f64], n_channels: usize, dims: &[usize]) -> Vec<f64> {
    let mut d: Vec<usize> = dims.iter().map(|x| x / 2).collect();
    let mut cur = grad.to_vec();
    for axis in (0..dims.len()).rev() {
        let n = dims[axis];
        let m = d[axis];
        d[axis] = n;
        let (outer, inner) = split(&d, n_channels, axis);
        let mut out = vec![0.0; outer * n * inner];
        for o in 0..outer {
            for i in 0..m {
                let src = (o * m + i) * inner;
                let a = (o * n + 2 * i) * inner;
                let b = a + inner;
                for k in 0..inner {
                    let g = 0.5 * cur[src + k];
                    out[a + k] = g;
                    out[b + k] = g;
                }
            }
        }
        cur = out;
    }
    cur
}

/// Halves (average pooling) or doubles (multilinear) every axis.
pub fn resample_image(image: &Image, factor: Resample) -> Result<Image> {
    let dims = image.shape().dims();
    let (shape, data) = match factor {
        Resample::Down2 => {
            let shape = image.shape().halved()?;
            (shape, avg_pool2_raw(image.data(), 1, dims))
        }
        Resample::Up2 => (
            image.shape().doubled(),
            upsample2_raw(image.data(), 1, dims),
        ),
    };
    Image::new(shape, data)
}

/// Upsamples a field to double resolution and doubles its voxel-unit values.
pub fn upsample_field(field: &DisplacementField) -> DisplacementField {
    let dims = field.shape().dims();
    let mut data = upsample2_raw(field.data(), field.components(), dims);
    data.iter_mut().for_each(|v| *v *= 2.0);
    DisplacementField::new(field.shape().doubled(), data)
        .expect("upsampling a valid field yields a valid field")
}

/// Inverse companion of [`upsample_field`]: average pooling and halved values.
pub fn downsample_field(field: &DisplacementField) -> Result<DisplacementField> {
    let shape = field.shape().halved()?;
    let mut data = avg_pool2_raw(field.data(), field.components(), field.shape().dims());
    data.iter_mut().for_each(|v| *v *= 0.5);
    DisplacementField::new(shape, data)
}

/// `levels` images from coarsest to finest, the last being `image` itself.
pub fn image_pyramid(image: &Image, levels: usize) -> Result<Vec<Image>> {
    if levels == 0 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    let mut out = vec![image.clone()];
    for _ in 1..levels {
        let next = resample_image(out.last().unwrap(), Resample::Down2)?;
        out.push(next);
    }
    out.reverse();
    Ok(out)
}
