use ndarray::{Array1, Array2, Axis, Ix1, Ix2};
use rand::Rng;

use super::{expect_rank, glorot, missing_cache, Activation, Layer, Mode, Param, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `activation(W x + b)` with `W: out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
    cache: Option<(Array2<f64>, Array2<f64>)>,
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let weight = glorot(&[outputs, inputs], inputs, outputs, rng);
        Self::from_parts(weight.into_dimensionality().unwrap(), Array1::zeros(outputs), activation)
    }

    pub fn from_parts(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Self {
        Dense {
            weight: Param::new("weight", weight.into_dyn()),
            bias: Param::new("bias", bias.into_dyn()),
            activation,
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn w(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality::<Ix2>().unwrap()
    }

    fn b(&self) -> ndarray::ArrayView1<'_, f64> {
        self.bias.value.view().into_dimensionality::<Ix1>().unwrap()
    }

    fn compute(&self, input: &Tensor) -> Result<(Array2<f64>, Array2<f64>)> {
        expect_rank(input, 2, "dense layer")?;
        let x = input.view().into_dimensionality::<Ix2>().unwrap();
        if x.ncols() != self.inputs() {
            return Err(Error::shape(&[x.nrows(), self.inputs()], x.shape()));
        }
        let mut y = x.dot(&self.w().t());
        y += &self.b();
        let act = self.activation;
        y.mapv_inplace(|v| act.apply(v));
        Ok((x.to_owned(), y))
    }
}

impl Layer for Dense {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (x, y) = self.compute(input)?;
        let out = y.clone().into_dyn();
        self.cache = Some((x, y));
        Ok(out)
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.compute(input)?.1.into_dyn())
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let (x, y) = self.cache.as_ref().ok_or_else(|| missing_cache("dense layer"))?;
        if upstream.shape() != y.shape() {
            return Err(Error::shape(y.shape(), upstream.shape()));
        }
        let up = upstream.view().into_dimensionality::<Ix2>().unwrap();
        let act = self.activation;
        let mut dz = up.to_owned();
        if act != super::Activation::Linear {
            dz.zip_mut_with(y, |g, &out| *g *= act.derivative_from_output(out));
        }
        let dw = dz.t().dot(x);
        let db = dz.sum_axis(Axis(0));
        let dx = dz.dot(&self.w());
        let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
        gw += &dw;
        let mut gb = self.bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
        gb += &db;
        Ok(dx.into_dyn())
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
