//! Small neural-network kernels with explicit reverse-mode gradients.
//!
//! Every layer caches what its backward pass needs during `forward`, and
//! accumulates parameter gradients into its [`Param`]s during `backward`.
//! Dense layers take `(batch, features)` tensors; convolution and batch
//! normalization take `(batch, channels, length)`.

mod batchnorm;
pub mod checkpoint;
mod conv;
mod dense;
pub mod gradcheck;
mod layer;
mod loss;
mod optim;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

pub use batchnorm::BatchNorm1d;
pub use conv::Conv1d;
pub use dense::Dense;
pub use layer::{AnyLayer, Sequential};
pub use loss::{bce_loss, mse_loss, BCE_EPS};
pub use optim::{sgd_step, Sgd};

use crate::error::{Error, Result};

/// Row-major real tensor.
pub type Tensor = ArrayD<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
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

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A trainable array with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: &'static str,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: &'static str, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.raw_dim());
        Param { name, value, grad }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Glorot-uniform initialisation.
pub(crate) fn glorot<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_shape_fn(IxDyn(shape), |_| rng.random_range(-bound..=bound))
}

/// Common interface of every layer and layer container.
pub trait Layer {
    /// Forward pass; caches intermediates for [`Layer::backward`].
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor>;

    /// Eval-mode forward pass without touching any cache.
    fn predict(&self, input: &Tensor) -> Result<Tensor>;

    /// Propagates `upstream` (gradient w.r.t. the last forward output) back to
    /// the input, accumulating parameter gradients.
    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor>;

    fn params(&self) -> Vec<&Param>;

    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

pub(crate) fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.ndim() != rank {
        return Err(Error::InvalidArgument(format!(
            "{what} expects a rank-{rank} tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

pub(crate) fn missing_cache(what: &str) -> Error {
    Error::InvalidArgument(format!("{what}: backward called before forward"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
