//! 2D slice extraction and lossless 8-bit PNG encoding.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use condreg::grid::{strides, DisplacementField, Image};

/// Fixed intensity window: values are clipped to `[low, high]` and mapped
/// linearly onto `0..=255`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub low: f64,
    pub high: f64,
}

impl Default for Window {
    fn default() -> Self {
        Window { low: 0.0, high: 1.0 }
    }
}

impl Window {
    fn byte(&self, v: f64) -> u8 {
        let t = ((v - self.low) / (self.high - self.low)).clamp(0.0, 1.0);
        (t * 255.0).round() as u8
    }
}

/// An axis-aligned plane through a grid: 2D grids have the single plane
/// `"xy"`; 3D grids are cut at the middle of axis 0 (`"sagittal"`),
/// axis 1 (`"coronal"`) or axis 2 (`"axial"`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Xy,
    Sagittal,
    Coronal,
    Axial,
}

impl Plane {
    pub fn for_dims(ndim: usize) -> Vec<Plane> {
        if ndim == 2 {
            vec![Plane::Xy]
        } else {
            vec![Plane::Axial, Plane::Sagittal, Plane::Coronal]
        }
    }

    /// Axis held fixed by the cut, or `None` for 2D.
    fn cut_axis(self) -> Option<usize> {
        match self {
            Plane::Xy => None,
            Plane::Sagittal => Some(0),
            Plane::Coronal => Some(1),
            Plane::Axial => Some(2),
        }
    }

    /// The two in-plane axes (row axis, column axis).
    pub fn axes(self) -> (usize, usize) {
        match self.cut_axis() {
            None => (0, 1),
            Some(0) => (1, 2),
            Some(1) => (0, 2),
            _ => (0, 1),
        }
    }
}

/// Row-major values of the middle cut through `data` on `dims`.
pub fn extract(data: &[f64], dims: &[usize], plane: Plane) -> (usize, usize, Vec<f64>) {
    let st = strides(dims);
    let (ra, ca) = plane.axes();
    let base = plane.cut_axis().map_or(0, |a| (dims[a] / 2) * st[a]);
    let (h, w) = (dims[ra], dims[ca]);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            out.push(data[base + r * st[ra] + c * st[ca]]);
        }
    }
    (h, w, out)
}

fn encode_png(width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> String {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(bytes).expect("in-memory PNG data");
    }
    STANDARD.encode(buf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedSlice {
    pub plane: Plane,
    pub width: usize,
    pub height: usize,
    /// Base64 PNG (8-bit grayscale for images, RGB for heatmaps).
    pub png_base64: String,
    pub window: Window,
    /// Voxel offset of the slice origin within the full grid (the Jacobian
    /// is only defined on interior voxels).
    pub offset: usize,
}

pub fn image_slices(image: &Image, window: Window) -> Vec<EncodedSlice> {
    let dims = image.shape().dims();
    Plane::for_dims(dims.len())
        .into_iter()
        .map(|plane| {
            let (h, w, vals) = extract(image.data(), dims, plane);
            let bytes: Vec<u8> = vals.iter().map(|&v| window.byte(v)).collect();
            EncodedSlice {
                plane,
                width: w,
                height: h,
                png_base64: encode_png(w, h, png::ColorType::Grayscale, &bytes),
                window,
                offset: 0,
            }
        })
        .collect()
}

/// Diverging blue-white-red map: `low` blue, the window centre white,
/// `high` red.
fn heat(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    if t < 0.5 {
        let s = t / 0.5;
        [(255.0 * s) as u8, (255.0 * s) as u8, 255]
    } else {
        let s = (1.0 - t) / 0.5;
        [255, (255.0 * s) as u8, (255.0 * s) as u8]
    }
}

/// Heatmap of determinants on the interior grid `dims`.
pub fn jacobian_slices(det: &[f64], dims: &[usize], window: Window) -> Vec<EncodedSlice> {
    Plane::for_dims(dims.len())
        .into_iter()
        .map(|plane| {
            let (h, w, vals) = extract(det, dims, plane);
            let bytes: Vec<u8> = vals
                .iter()
                .flat_map(|&v| heat((v - window.low) / (window.high - window.low)))
                .collect();
            EncodedSlice {
                plane,
                width: w,
                height: h,
                png_base64: encode_png(w, h, png::ColorType::Rgb, &bytes),
                window,
                offset: 1,
            }
        })
        .collect()
}

/// Deformed grid lines in one plane: points are `[row, col]` in voxel units
/// of the full grid, i.e. `x + u(x)` restricted to the two in-plane axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOverlay {
    pub plane: Plane,
    pub step: usize,
    pub lines: Vec<Vec<[f64; 2]>>,
}

pub fn grid_overlay(field: &DisplacementField, step: usize) -> Vec<GridOverlay> {
    let dims = field.shape().dims();
    let step = step.max(1);
    Plane::for_dims(dims.len())
        .into_iter()
        .map(|plane| {
            let (ra, ca) = plane.axes();
            let (h, w, ur) = extract(field.component(ra), dims, plane);
            let (_, _, uc) = extract(field.component(ca), dims, plane);
            let point = |r: usize, c: usize| [r as f64 + ur[r * w + c], c as f64 + uc[r * w + c]];
            let mut lines = Vec::new();
            for r in (0..h).step_by(step) {
                lines.push((0..w).map(|c| point(r, c)).collect());
            }
            for c in (0..w).step_by(step) {
                lines.push((0..h).map(|r| point(r, c)).collect());
            }
            GridOverlay { plane, step, lines }
        })
        .collect()
}
