//! Minimal 64-bit reverse-mode autodiff and the layers built on it.
//!
//! Desk-scale models here are small enough that a plain tape over contiguous
//! `f64` buffers beats pulling in a tensor framework: gradients check against
//! finite differences at 1e-10, every run is bit-reproducible, and the whole
//! engine is a few hundred lines.

pub mod adam;
pub mod layers;
pub mod params;
pub mod tape;


pub use adam::{AdamW, AdamWConfig};
pub use params::{ParamDump, ParamStore};
pub use tape::{GradStore, Node, Tape};

use serde::{Deserialize, Serialize};

/// Dense row-major tensor. Most ops read it as `[rows, cols]`; convolution
/// ops read it as `[channels, length]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Tensor {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }
}

/// Sinusoidal position table, `[n, dim]`. Even columns are sines, odd
/// columns cosines, wavelengths geometric from 1 to 10000.
pub fn sinusoidal_positions(n: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; n * dim];
    for pos in 0..n {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            let angle = pos as f64 * freq;
            data[pos * dim + 2 * i] = angle.sin();
            data[pos * dim + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![n, dim], data)
}
