use super::{missing_cache, Activation, BatchNorm1d, Conv1d, Dense, Layer, Mode, Param, Tensor};
use crate::error::{Error, Result};

/// Elementwise activation usable on tensors of any rank.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationLayer {
    pub activation: Activation,
    output: Option<Tensor>,
}

impl ActivationLayer {
    pub fn new(activation: Activation) -> Self {
        ActivationLayer {
            activation,
            output: None,
        }
    }
}

impl Layer for ActivationLayer {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let y = self.predict(input)?;
        self.output = Some(y.clone());
        Ok(y)
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let act = self.activation;
        Ok(input.mapv(|v| act.apply(v)))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let y = self.output.as_ref().ok_or_else(|| missing_cache("activation layer"))?;
        if y.shape() != upstream.shape() {
            return Err(Error::shape(y.shape(), upstream.shape()));
        }
        let act = self.activation;
        let mut dx = upstream.clone();
        dx.zip_mut_with(y, |g, &out| *g *= act.derivative_from_output(out));
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

/// Closed set of layer kinds, so models stay `Clone` and checkpointable.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyLayer {
    Dense(Dense),
    Conv1d(Conv1d),
    BatchNorm(BatchNorm1d),
    Activation(ActivationLayer),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $e:expr) => {
        match $self {
            AnyLayer::Dense($l) => $e,
            AnyLayer::Conv1d($l) => $e,
            AnyLayer::BatchNorm($l) => $e,
            AnyLayer::Activation($l) => $e,
        }
    };
}

impl Layer for AnyLayer {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        dispatch!(self, l => l.forward(input, mode))
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        dispatch!(self, l => l.predict(input))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        dispatch!(self, l => l.backward(upstream))
    }

    fn params(&self) -> Vec<&Param> {
        dispatch!(self, l => l.params())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        dispatch!(self, l => l.params_mut())
    }
}

impl From<Dense> for AnyLayer {
    fn from(l: Dense) -> Self {
        AnyLayer::Dense(l)
    }
}

impl From<Conv1d> for AnyLayer {
    fn from(l: Conv1d) -> Self {
        AnyLayer::Conv1d(l)
    }
}

impl From<BatchNorm1d> for AnyLayer {
    fn from(l: BatchNorm1d) -> Self {
        AnyLayer::BatchNorm(l)
    }
}

impl From<Activation> for AnyLayer {
    fn from(a: Activation) -> Self {
        AnyLayer::Activation(ActivationLayer::new(a))
    }
}

/// Layers applied in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<AnyLayer>,
}

impl Sequential {
    pub fn new(layers: Vec<AnyLayer>) -> Self {
        Sequential { layers }
    }

    pub fn push(&mut self, layer: impl Into<AnyLayer>) {
        self.layers.push(layer.into());
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.predict(&x)?;
        }
        Ok(x)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let mut g = upstream.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
