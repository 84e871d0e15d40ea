//! Minimal dense-tensor math with reverse-mode differentiation: just enough
//! primitives for the four window-emulator architectures, on 32-bit floats,
//! with bit-deterministic single-threaded execution.

mod gru;
mod linalg;
mod tape;

pub use gru::{gru_cell, GruConvention, GruVars};
pub use linalg::{matmul_into, matmul_nt_into, matmul_tn_into};
pub use tape::{Gradients, Tape, Var};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "shape {shape:?} needs {expect} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn scalar(v: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn filled(shape: Vec<usize>, v: f32) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![v; len],
        }
    }

    /// Uniform init in (−bound, bound), drawn row-major.
    pub fn uniform(shape: Vec<usize>, bound: f32, rng: &mut impl Rng) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: (0..len).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn iter(&self) -> impl Iterator<Item = f32> + '_ {
        self.data.iter().copied()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm across all elements, accumulated in f64.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }
}
