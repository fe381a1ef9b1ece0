//! Dense rank-3 feature maps (rows x cols x features, row-major with the
//! feature axis fastest), elementwise activations and global average pooling.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub features: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize, features: usize) -> Self {
        Tensor {
            rows,
            cols,
            features,
            data: vec![0.0; rows * cols * features],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, features: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * features {
            return Err(Error::ShapeMismatch(format!(
                "tensor {rows}x{cols}x{features} needs {} values, got {}",
                rows * cols * features,
                data.len()
            )));
        }
        Ok(Tensor {
            rows,
            cols,
            features,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, r: usize, c: usize, f: usize) -> usize {
        (r * self.cols + c) * self.features + f
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize, f: usize) -> f64 {
        self.data[self.idx(r, c, f)]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize, f: usize) -> &mut f64 {
        let i = self.idx(r, c, f);
        &mut self.data[i]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.features == other.features
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.features)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn parse(name: &str) -> Option<Activation> {
        match name {
            "identity" | "none" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed in terms of the activation output y = f(x).
    /// For relu the subgradient at 0 is taken as 0.
    #[inline]
    pub fn grad_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn forward(&self, t: &Tensor) -> Tensor {
        let mut out = t.clone();
        for v in &mut out.data {
            *v = self.apply(*v);
        }
        out
    }

    /// Maps upstream gradients through the activation, given the activation
    /// outputs produced by [`Activation::forward`].
    pub fn backward(&self, output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        if !output.same_shape(grad_out) {
            return Err(Error::ShapeMismatch(format!(
                "activation backward: output {:?} vs grad {:?}",
                output.shape(),
                grad_out.shape()
            )));
        }
        let mut grad_in = grad_out.clone();
        for (g, &y) in grad_in.data.iter_mut().zip(&output.data) {
            *g *= self.grad_from_output(y);
        }
        Ok(grad_in)
    }
}

/// Averages each feature map over all spatial positions.
pub fn global_avg_pool(t: &Tensor) -> Vec<f64> {
    let n = (t.rows * t.cols) as f64;
    let mut out = vec![0.0; t.features];
    for r in 0..t.rows {
        for c in 0..t.cols {
            let base = (r * t.cols + c) * t.features;
            for f in 0..t.features {
                out[f] += t.data[base + f];
            }
        }
    }
    for v in &mut out {
        *v /= n;
    }
    out
}

/// Spreads a pooled-feature gradient uniformly back over the spatial grid.
pub fn global_avg_pool_backward(
    rows: usize,
    cols: usize,
    grad_pooled: &[f64],
) -> Tensor {
    let n = (rows * cols) as f64;
    let features = grad_pooled.len();
    let mut out = Tensor::zeros(rows, cols, features);
    for r in 0..rows {
        for c in 0..cols {
            let base = (r * cols + c) * features;
            for f in 0..features {
                out.data[base + f] = grad_pooled[f] / n;
            }
        }
    }
    out
}
