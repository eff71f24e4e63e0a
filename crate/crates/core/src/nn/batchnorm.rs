use ndarray::{Array1, Array3, Axis, Ix1, Ix3};

use super::{expect_rank, missing_cache, Layer, Mode, Param, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(batch, channels, length)`.
///
/// Train mode standardizes with the batch statistics (mean and biased
/// variance over batch and length) and updates the running estimates; eval
/// mode uses the running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
struct Cache {
    normalized: Array3<f64>,
    inv_std: Array1<f64>,
    mode: Mode,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        BatchNorm1d {
            gamma: Param::new("gamma", Array1::<f64>::ones(channels).into_dyn()),
            beta: Param::new("beta", Array1::<f64>::zeros(channels).into_dyn()),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn gamma(&self) -> ndarray::ArrayView1<'_, f64> {
        self.gamma.value.view().into_dimensionality::<Ix1>().unwrap()
    }

    fn beta(&self) -> ndarray::ArrayView1<'_, f64> {
        self.beta.value.view().into_dimensionality::<Ix1>().unwrap()
    }

    fn check(&self, input: &Tensor) -> Result<()> {
        expect_rank(input, 3, "batch norm layer")?;
        if input.shape()[1] != self.channels() {
            let mut expected = input.shape().to_vec();
            expected[1] = self.channels();
            return Err(Error::shape(&expected, input.shape()));
        }
        Ok(())
    }

    /// Per-channel mean and biased variance over batch and length.
    pub fn batch_stats(x: &Array3<f64>) -> (Array1<f64>, Array1<f64>) {
        let (b, c, l) = x.dim();
        let n = (b * l) as f64;
        let mut mean = Array1::zeros(c);
        let mut var = Array1::zeros(c);
        for ch in 0..c {
            let lane = x.index_axis(Axis(1), ch);
            let m = lane.sum() / n;
            mean[ch] = m;
            var[ch] = lane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        }
        (mean, var)
    }

    fn normalize(&self, x: &Array3<f64>, mean: &Array1<f64>, var: &Array1<f64>) -> (Array3<f64>, Array1<f64>) {
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut xhat = x.clone();
        for (ch, mut lane) in xhat.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (mean[ch], inv_std[ch]);
            lane.mapv_inplace(|v| (v - m) * s);
        }
        (xhat, inv_std)
    }

    fn affine(&self, xhat: &Array3<f64>) -> Array3<f64> {
        let (gamma, beta) = (self.gamma(), self.beta());
        let mut y = xhat.clone();
        for (ch, mut lane) in y.axis_iter_mut(Axis(1)).enumerate() {
            let (g, b) = (gamma[ch], beta[ch]);
            lane.mapv_inplace(|v| g * v + b);
        }
        y
    }
}

impl Layer for BatchNorm1d {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check(input)?;
        let x = input.view().into_dimensionality::<Ix3>().unwrap().to_owned();
        let (xhat, inv_std) = match mode {
            Mode::Train => {
                let (mean, var) = Self::batch_stats(&x);
                let n = (x.dim().0 * x.dim().2) as f64;
                let unbiased = if n > 1.0 { var.mapv(|v| v * n / (n - 1.0)) } else { var.clone() };
                let m = self.momentum;
                self.running_mean = &self.running_mean * (1.0 - m) + &mean * m;
                self.running_var = &self.running_var * (1.0 - m) + &unbiased * m;
                self.normalize(&x, &mean, &var)
            }
            Mode::Eval => self.normalize(&x, &self.running_mean, &self.running_var),
        };
        let y = self.affine(&xhat);
        self.cache = Some(Cache {
            normalized: xhat,
            inv_std,
            mode,
        });
        Ok(y.into_dyn())
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check(input)?;
        let x = input.view().into_dimensionality::<Ix3>().unwrap().to_owned();
        let (xhat, _) = self.normalize(&x, &self.running_mean, &self.running_var);
        Ok(self.affine(&xhat).into_dyn())
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("batch norm layer"))?;
        let xhat = &cache.normalized;
        if upstream.shape() != xhat.shape() {
            return Err(Error::shape(xhat.shape(), upstream.shape()));
        }
        let dy = upstream.view().into_dimensionality::<Ix3>().unwrap();
        let (b, c, l) = xhat.dim();
        let n = (b * l) as f64;
        let gamma = self.gamma().to_owned();
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        let mut dx = Array3::zeros((b, c, l));
        for ch in 0..c {
            let dy_c = dy.index_axis(Axis(1), ch);
            let xh_c = xhat.index_axis(Axis(1), ch);
            let sum_dy = dy_c.sum();
            let sum_dy_xh: f64 = dy_c.iter().zip(xh_c.iter()).map(|(g, x)| g * x).sum();
            dgamma[ch] = sum_dy_xh;
            dbeta[ch] = sum_dy;
            let scale = gamma[ch] * cache.inv_std[ch];
            let mut dx_c = dx.index_axis_mut(Axis(1), ch);
            match cache.mode {
                Mode::Train => {
                    ndarray::Zip::from(&mut dx_c).and(&dy_c).and(&xh_c).for_each(|d, &g, &x| {
                        *d = scale * (g - sum_dy / n - x * sum_dy_xh / n);
                    });
                }
                Mode::Eval => {
                    ndarray::Zip::from(&mut dx_c).and(&dy_c).for_each(|d, &g| *d = scale * g);
                }
            }
        }
        let mut gg = self.gamma.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
        gg += &dgamma;
        let mut gb = self.beta.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
        gb += &dbeta;
        Ok(dx.into_dyn())
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
