//! Tensor container: a directory holding `header.json` and `data.bin`
//! (little-endian, C-order, no padding). Images and fields are stored as
//! `f32`, label maps as `i32`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{DisplacementField, GridShape, Image, LabelMap};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Image,
    Field,
    Labels,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F32,
    I32,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: TensorKind,
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    components: Option<usize>,
    dtype: Dtype,
    spacing: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<i32>>,
}

/// Any object the container can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    Image(Image),
    Field(DisplacementField),
    Labels(LabelMap),
}

impl Tensor {
    pub fn kind(&self) -> TensorKind {
        match self {
            Tensor::Image(_) => TensorKind::Image,
            Tensor::Field(_) => TensorKind::Field,
            Tensor::Labels(_) => TensorKind::Labels,
        }
    }

    pub fn into_image(self) -> Result<Image> {
        match self {
            Tensor::Image(im) => Ok(im),
            other => Err(Error::Data(format!(
                "expected an image, found {:?}",
                other.kind()
            ))),
        }
    }

    pub fn into_field(self) -> Result<DisplacementField> {
        match self {
            Tensor::Field(f) => Ok(f),
            other => Err(Error::Data(format!(
                "expected a field, found {:?}",
                other.kind()
            ))),
        }
    }

    pub fn into_labels(self) -> Result<LabelMap> {
        match self {
            Tensor::Labels(l) => Ok(l),
            other => Err(Error::Data(format!(
                "expected labels, found {:?}",
                other.kind()
            ))),
        }
    }
}

impl From<Image> for Tensor {
    fn from(v: Image) -> Self {
        Tensor::Image(v)
    }
}

impl From<DisplacementField> for Tensor {
    fn from(v: DisplacementField) -> Self {
        Tensor::Field(v)
    }
}

impl From<LabelMap> for Tensor {
    fn from(v: LabelMap) -> Self {
        Tensor::Labels(v)
    }
}

pub fn save_tensor(dir: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (header, bytes) = match tensor {
        Tensor::Image(im) => (
            Header {
                kind: TensorKind::Image,
                shape: im.shape().dims().to_vec(),
                components: None,
                dtype: Dtype::F32,
                spacing: im.spacing().to_vec(),
                labels: None,
            },
            f32_bytes(im.data()),
        ),
        Tensor::Field(f) => (
            Header {
                kind: TensorKind::Field,
                shape: f.shape().dims().to_vec(),
                components: Some(f.components()),
                dtype: Dtype::F32,
                spacing: f.spacing().to_vec(),
                labels: None,
            },
            f32_bytes(f.data()),
        ),
        Tensor::Labels(l) => {
            let mut bytes = Vec::with_capacity(l.data().len() * 4);
            for &v in l.data() {
                bytes
                    .write_i32::<LittleEndian>(v)
                    .expect("writing to a Vec");
            }
            (
                Header {
                    kind: TensorKind::Labels,
                    shape: l.shape().dims().to_vec(),
                    components: None,
                    dtype: Dtype::I32,
                    spacing: l.spacing().to_vec(),
                    labels: Some(l.labels().to_vec()),
                },
                bytes,
            )
        }
    };
    let header_path = dir.join("header.json");
    let text = serde_json::to_string_pretty(&header)?;
    fs::write(&header_path, text).map_err(|e| Error::io(&header_path, e))?;
    let data_path = dir.join("data.bin");
    let file = fs::File::create(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&data_path, e))
}

fn f32_bytes(values: &[f64]) -> Vec<u8> {
    let mut bytes = vec![0u8; values.len() * 4];
    for (chunk, &v) in bytes.chunks_exact_mut(4).zip(values) {
        LittleEndian::write_f32(chunk, v as f32);
    }
    bytes
}

pub fn load_tensor(dir: impl AsRef<Path>) -> Result<Tensor> {
    let dir = dir.as_ref();
    let header_path = dir.join("header.json");
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: Header = serde_json::from_str(&text)
        .map_err(|e| Error::format(&header_path, format!("malformed header: {e}")))?;
    let shape = GridShape::new(header.shape.clone())
        .map_err(|e| Error::format(&header_path, e.to_string()))?;
    let expected_dtype = match header.kind {
        TensorKind::Labels => Dtype::I32,
        _ => Dtype::F32,
    };
    if header.dtype != expected_dtype {
        return Err(Error::format(
            &header_path,
            format!(
                "kind {:?} cannot be stored as {:?}",
                header.kind, header.dtype
            ),
        ));
    }
    let components = match header.kind {
        TensorKind::Field => {
            let c = header
                .components
                .ok_or_else(|| Error::format(&header_path, "field header lacks `components`"))?;
            if c != shape.ndim() {
                return Err(Error::format(
                    &header_path,
                    format!(
                        "field has {c} components on a {}-dimensional grid",
                        shape.ndim()
                    ),
                ));
            }
            c
        }
        _ => 1,
    };
    let count = shape.len() * components;
    let data_path = dir.join("data.bin");
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    if bytes.len() != count * 4 {
        return Err(Error::format(
            &data_path,
            format!(
                "size mismatch: expected {} bytes, found {}",
                count * 4,
                bytes.len()
            ),
        ));
    }
    let as_f64 = || -> Vec<f64> {
        bytes
            .chunks_exact(4)
            .map(|c| LittleEndian::read_f32(c) as f64)
            .collect()
    };
    let wrap = |e: Error| Error::format(dir, e.to_string());
    let tensor = match header.kind {
        TensorKind::Image => Tensor::Image(
            Image::new(shape, as_f64())
                .and_then(|i| i.with_spacing(header.spacing))
                .map_err(wrap)?,
        ),
        TensorKind::Field => Tensor::Field(
            DisplacementField::new(shape, as_f64())
                .and_then(|f| f.with_spacing(header.spacing))
                .map_err(wrap)?,
        ),
        TensorKind::Labels => {
            let data: Vec<i32> = bytes.chunks_exact(4).map(LittleEndian::read_i32).collect();
            let lm = match header.labels {
                Some(labels) => LabelMap::new(shape, data, labels),
                None => LabelMap::from_values(shape, data),
            };
            Tensor::Labels(
                lm.and_then(|l| l.with_spacing(header.spacing))
                    .map_err(wrap)?,
            )
        }
    };
    Ok(tensor)
}
