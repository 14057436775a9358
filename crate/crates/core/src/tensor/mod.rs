//! Dense `f32` tensors and the small, fixed set of differentiable layers used
//! by every model in the crate.
//!
//! Layers are free functions paired with explicit `*_backward` functions;
//! there is no autograd tape. Reductions accumulate in `f64`.

mod checkpoint;
mod conv;
mod gradcheck;
mod layers;
mod optim;

pub use checkpoint::Checkpoint;
pub use conv::{conv2d, conv2d_backward, Conv2dGrads};
pub use gradcheck::finite_diff_check;
pub use layers::{
    dense, dense_backward, dropout, dropout_backward, global_avg_pool, global_avg_pool_backward,
    maxpool, maxpool_backward, relu, relu_backward, sigmoid, softmax, softmax_ce, DenseGrads, Mode,
    SoftmaxCe,
};
pub use optim::{kaiming_normal, LayerParams, Sgd, SgdConfig};

use crate::error::{Error, Result};

/// Row-major `f32` tensor with positive extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(
                "Tensor::new",
                format!("extents must be positive, got {shape:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!(
                    "shape {shape:?} holds {n} values but data has {}",
                    data.len()
                ),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "extents must be positive: {shape:?}"
        );
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
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

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// `(C, H, W)` extents, or a shape error naming `op`.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(
                op,
                format!("expected a rank-3 [C,H,W] tensor, got {:?}", self.shape),
            )),
        }
    }

    /// Element at `(c, y, x)` of a rank-3 tensor.
    pub fn at3(&self, c: usize, y: usize, x: usize) -> f32 {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies the window `[y0, y0+h) x [x0, x0+w)` of every channel.
    pub fn crop3(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let (c, sh, sw) = self.dims3("crop3")?;
        if y0 + h > sh || x0 + w > sw || h == 0 || w == 0 {
            return Err(Error::shape(
                "crop3",
                format!("window {h}x{w} at ({y0},{x0}) exceeds {sh}x{sw}"),
            ));
        }
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in y0..y0 + h {
                let row = (ch * sh + y) * sw;
                out.extend_from_slice(&self.data[row + x0..row + x0 + w]);
            }
        }
        Self::new(vec![c, h, w], out)
    }
}
