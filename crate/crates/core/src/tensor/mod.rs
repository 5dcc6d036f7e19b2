//! Dense NHWC tensors and the handful of differentiable operations the
//! autoencoder is built from.
//!
//! Every operation here is a plain function over immutable inputs. Reductions
//! run in a fixed order with `f64` accumulators, so results are bit-identical
//! from run to run.

mod activation;
mod conv;
mod io;
mod loss;

pub use activation::{relu_backward, relu_forward};
pub use conv::{
    conv2d_backward, conv2d_forward, conv2d_transpose_backward, conv2d_transpose_forward,
    same_padding, ConvGradients, ConvKernel,
};
pub use loss::mse_loss;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Checked constructor: the data length must match the shape and every
    /// value must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let t = Self::from_parts(shape, data)?;
        if let Some(pos) = t.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite value {} at flat index {pos}",
                t.data[pos]
            )));
        }
        Ok(t)
    }

    /// Like [`Tensor::new`] but skips the finiteness scan.
    pub fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "dimensions must be positive, got {shape:?}"
        );
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Interprets the tensor as `[batch, height, width, channels]`.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [b, h, w, c] => Ok([b, h, w, c]),
            _ => Err(Error::Shape(format!(
                "expected a rank-4 [B,H,W,C] tensor, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::from_parts(shape, self.data)
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "dot of {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies out batch item `index` as a `[1, H, W, C]` tensor.
    pub fn batch_item(&self, index: usize) -> Result<Tensor> {
        let [b, h, w, c] = self.dims4()?;
        if index >= b {
            return Err(Error::Argument(format!(
                "batch index {index} out of range for batch of {b}"
            )));
        }
        let n = h * w * c;
        Ok(Tensor {
            shape: vec![1, h, w, c],
            data: self.data[index * n..(index + 1) * n].to_vec(),
        })
    }

    /// Stacks equally shaped `[1, H, W, C]` tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Argument("cannot stack an empty list".into()))?;
        let [_, h, w, c] = first.dims4()?;
        let mut data = Vec::with_capacity(items.len() * h * w * c);
        for t in items {
            let [b, th, tw, tc] = t.dims4()?;
            if [th, tw, tc] != [h, w, c] {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    t.shape, first.shape
                )));
            }
            if b != 1 {
                return Err(Error::Shape(format!("stack expects batch 1, got {b}")));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: vec![items.len(), h, w, c],
            data,
        })
    }
}
