//! Regular-grid images, displacement fields and label maps.
//!
//! All arrays are stored C-order (last axis fastest). Displacement fields
//! store their components first: component `k` is the displacement along
//! axis `k`, in voxel units, and the map is `phi(x) = x + u(x)`.

mod io;
mod jacobian;
mod resample;
mod warp;

pub use io::{load_tensor, save_tensor, Tensor, TensorKind};
pub use jacobian::{jacobian_determinant, std_jacobian};
pub use resample::{
    avg_pool2_raw, avg_pool2_raw_adjoint, downsample_field, image_pyramid, resample_image,
    upsample2_raw, upsample2_raw_adjoint, upsample_field, Resample,
};
pub use warp::{warp, warp_labels, warp_raw, warp_raw_backward, Interpolation};

use crate::{Error, Result};

/// Spatial extent of a 2D or 3D grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct GridShape(Vec<usize>);

impl GridShape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::Dimension(format!(
                "grids must be 2D or 3D, got {} axes",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Dimension(format!("empty axis in shape {dims:?}")));
        }
        Ok(GridShape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn ndim(&self) -> usize {
        self.0.len()
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_axis(&self) -> usize {
        self.0.iter().copied().min().unwrap_or(0)
    }

    pub fn halved(&self) -> Result<Self> {
        if self.0.iter().any(|&d| d < 2) {
            return Err(Error::Dimension(format!(
                "cannot halve shape {:?}: every axis needs at least 2 voxels",
                self.0
            )));
        }
        Ok(GridShape(self.0.iter().map(|d| d / 2).collect()))
    }

    pub fn doubled(&self) -> Self {
        GridShape(self.0.iter().map(|d| d * 2).collect())
    }
}

impl TryFrom<Vec<usize>> for GridShape {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        GridShape::new(v)
    }
}

impl From<GridShape> for Vec<usize> {
    fn from(s: GridShape) -> Self {
        s.0
    }
}

/// C-order strides for `dims`.
pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Advances a C-order multi-index in place. Returns false after the last index.
pub(crate) fn next_index(idx: &mut [usize], dims: &[usize]) -> bool {
    for a in (0..dims.len()).rev() {
        idx[a] += 1;
        if idx[a] < dims[a] {
            return true;
        }
        idx[a] = 0;
    }
    false
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Value(format!(
            "{what} has a non-finite value at flat index {i}"
        )));
    }
    Ok(())
}

fn unit_spacing(ndim: usize) -> Vec<f64> {
    vec![1.0; ndim]
}

/// Scalar intensity image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    shape: GridShape,
    spacing: Vec<f64>,
    data: Vec<f64>,
}

impl Image {
    pub fn new(shape: GridShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "image data has {} values, shape {:?} needs {}",
                data.len(),
                shape.dims(),
                shape.len()
            )));
        }
        check_finite(&data, "image")?;
        let spacing = unit_spacing(shape.ndim());
        Ok(Image {
            shape,
            spacing,
            data,
        })
    }

    pub fn zeros(shape: GridShape) -> Self {
        let n = shape.len();
        Image::filled(shape, n, 0.0)
    }

    pub fn constant(shape: GridShape, value: f64) -> Self {
        let n = shape.len();
        Image::filled(shape, n, value)
    }

    fn filled(shape: GridShape, n: usize, value: f64) -> Self {
        Image {
            spacing: unit_spacing(shape.ndim()),
            shape,
            data: vec![value; n],
        }
    }

    /// Builds an image by evaluating `f` at every voxel index.
    pub fn from_fn(shape: GridShape, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let dims = shape.dims().to_vec();
        let mut idx = vec![0; dims.len()];
        let mut data = Vec::with_capacity(shape.len());
        loop {
            data.push(f(&idx));
            if !next_index(&mut idx, &dims) {
                break;
            }
        }
        Image::new(shape, data)
    }

    pub fn with_spacing(mut self, spacing: Vec<f64>) -> Result<Self> {
        validate_spacing(&spacing, self.shape.ndim())?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let s = strides(self.shape.dims());
        self.data[idx.iter().zip(&s).map(|(i, s)| i * s).sum::<usize>()]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Image> {
        Image::new(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
        .map(|im| Image {
            spacing: self.spacing.clone(),
            ..im
        })
    }
}

fn validate_spacing(spacing: &[f64], ndim: usize) -> Result<()> {
    if spacing.len() != ndim || spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Value(format!(
            "spacing {spacing:?} must hold {ndim} positive finite values"
        )));
    }
    Ok(())
}

/// Dense displacement field `u`, components first, in voxel units.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    shape: GridShape,
    spacing: Vec<f64>,
    data: Vec<f64>,
}

impl DisplacementField {
    pub fn new(shape: GridShape, data: Vec<f64>) -> Result<Self> {
        let need = shape.len() * shape.ndim();
        if data.len() != need {
            return Err(Error::Dimension(format!(
                "field data has {} values, shape {:?} with {} components needs {need}",
                data.len(),
                shape.dims(),
                shape.ndim()
            )));
        }
        check_finite(&data, "displacement field")?;
        Ok(DisplacementField {
            spacing: unit_spacing(shape.ndim()),
            shape,
            data,
        })
    }

    pub fn zeros(shape: GridShape) -> Self {
        let n = shape.len() * shape.ndim();
        DisplacementField {
            spacing: unit_spacing(shape.ndim()),
            shape,
            data: vec![0.0; n],
        }
    }

    /// Builds a field by evaluating `f` (returning one vector per voxel).
    pub fn from_fn(shape: GridShape, mut f: impl FnMut(&[usize]) -> Vec<f64>) -> Result<Self> {
        let dims = shape.dims().to_vec();
        let n = shape.len();
        let nd = dims.len();
        let mut data = vec![0.0; n * nd];
        let mut idx = vec![0; nd];
        let mut flat = 0;
        loop {
            let v = f(&idx);
            if v.len() != nd {
                return Err(Error::Dimension(format!(
                    "field generator returned {} components, expected {nd}",
                    v.len()
                )));
            }
            for (k, x) in v.into_iter().enumerate() {
                data[k * n + flat] = x;
            }
            flat += 1;
            if !next_index(&mut idx, &dims) {
                break;
            }
        }
        DisplacementField::new(shape, data)
    }

    pub fn with_spacing(mut self, spacing: Vec<f64>) -> Result<Self> {
        validate_spacing(&spacing, self.shape.ndim())?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn components(&self) -> usize {
        self.shape.ndim()
    }

    pub fn component(&self, k: usize) -> &[f64] {
        let n = self.shape.len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Multiplies every displacement by `factor`.
    pub fn scaled(&self, factor: f64) -> DisplacementField {
        DisplacementField {
            shape: self.shape.clone(),
            spacing: self.spacing.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Integer segmentation aligned with an image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    shape: GridShape,
    spacing: Vec<f64>,
    data: Vec<i32>,
    labels: Vec<i32>,
}

impl LabelMap {
    /// `labels` is the foreground label set; every voxel must be 0 or one of them.
    pub fn new(shape: GridShape, data: Vec<i32>, labels: Vec<i32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "label data has {} values, shape {:?} needs {}",
                data.len(),
                shape.dims(),
                shape.len()
            )));
        }
        let mut labels = labels;
        labels.sort_unstable();
        labels.dedup();
        if labels.iter().any(|&l| l <= 0) {
            return Err(Error::Value(
                "foreground labels must be positive integers".into(),
            ));
        }
        if let Some(v) = data
            .iter()
            .find(|&&v| v != 0 && labels.binary_search(&v).is_err())
        {
            return Err(Error::Value(format!(
                "voxel label {v} is neither background nor in the label set {labels:?}"
            )));
        }
        Ok(LabelMap {
            spacing: unit_spacing(shape.ndim()),
            shape,
            data,
            labels,
        })
    }

    /// Builds a map whose label set is every positive value present.
    pub fn from_values(shape: GridShape, data: Vec<i32>) -> Result<Self> {
        let mut labels: Vec<i32> = data.iter().copied().filter(|&v| v > 0).collect();
        labels.sort_unstable();
        labels.dedup();
        LabelMap::new(shape, data, labels)
    }

    pub fn with_spacing(mut self, spacing: Vec<f64>) -> Result<Self> {
        validate_spacing(&spacing, self.shape.ndim())?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn count(&self, label: i32) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }
}

pub(crate) fn same_grid(a: &GridShape, b: &GridShape, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "{what}: grid {:?} does not match {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}
