//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records every operation of one forward pass; `backward`
//! walks it in reverse and returns gradients for every node that depends on a
//! parameter. Spatial tensors are laid out `[channels, axis0, axis1(, axis2)]`.

mod graph;
mod kernels;
mod params;

pub use graph::{Gradients, Graph, Var};
pub use kernels::{conv_forward, ConvGeometry};
pub use params::{ParamId, ParamStore};

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "array shape {shape:?} does not match {} values",
            data.len()
        );
        Array { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Array {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Array {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Channel count of a spatial tensor.
    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    /// Spatial dims of a `[C, ...]` tensor.
    pub fn spatial(&self) -> &[usize] {
        &self.shape[1..]
    }
}
