use ndarray::{Array1, Array2, Array3, ArrayView3, Axis, Ix1, Ix3};
use rand::Rng;

use super::{expect_rank, glorot, missing_cache, Layer, Mode, Param, Tensor};
use crate::error::{Error, Result};

/// Same-length 1-D cross-correlation over `(batch, in_channels, length)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `out_channels x in_channels x width`
    pub kernels: Param,
    pub bias: Param,
    cache: Option<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
struct Cache {
    cols: Array2<f64>,
    batch: usize,
    len: usize,
}

impl Conv1d {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, width: usize, rng: &mut R) -> Result<Self> {
        let kernels = glorot(
            &[out_channels, in_channels, width],
            in_channels * width,
            out_channels * width,
            rng,
        );
        Self::from_parts(kernels.into_dimensionality().unwrap(), Array1::zeros(out_channels))
    }

    pub fn from_parts(kernels: Array3<f64>, bias: Array1<f64>) -> Result<Self> {
        let (out_c, _, width) = kernels.dim();
        if width % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "convolution width must be odd for same padding, got {width}"
            )));
        }
        if bias.len() != out_c {
            return Err(Error::shape(&[out_c], &[bias.len()]));
        }
        Ok(Conv1d {
            kernels: Param::new("kernels", kernels.into_dyn()),
            bias: Param::new("bias", bias.into_dyn()),
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.value.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.kernels.value.shape()[2]
    }

    fn kernel_matrix(&self) -> ndarray::ArrayView2<'_, f64> {
        let cols = self.in_channels() * self.width();
        self.kernels
            .value
            .view()
            .into_shape_with_order((self.out_channels(), cols))
            .unwrap()
    }

    /// Rows index `(b, t)`, columns index `(c, k)`.
    fn im2col(&self, x: ArrayView3<f64>) -> Array2<f64> {
        let (batch, chans, len) = x.dim();
        let width = self.width();
        let pad = width / 2;
        let mut cols = Array2::zeros((batch * len, chans * width));
        for b in 0..batch {
            for c in 0..chans {
                let lane = x.slice(ndarray::s![b, c, ..]);
                for k in 0..width {
                    for t in 0..len {
                        let src = t + k;
                        if src >= pad && src - pad < len {
                            cols[[b * len + t, c * width + k]] = lane[src - pad];
                        }
                    }
                }
            }
        }
        cols
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        expect_rank(input, 3, "conv1d layer")?;
        if input.shape()[1] != self.in_channels() {
            let mut expected = input.shape().to_vec();
            expected[1] = self.in_channels();
            return Err(Error::shape(&expected, input.shape()));
        }
        Ok(())
    }

    fn compute(&self, input: &Tensor) -> Result<(Array2<f64>, Tensor)> {
        self.check_input(input)?;
        let x = input.view().into_dimensionality::<Ix3>().unwrap();
        let (batch, _, len) = x.dim();
        let cols = self.im2col(x);
        let mut out = cols.dot(&self.kernel_matrix().t());
        out += &self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        let y = out
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((batch, len, self.out_channels()))
            .unwrap()
            .permuted_axes([0, 2, 1])
            .as_standard_layout()
            .to_owned();
        Ok((cols, y.into_dyn()))
    }
}

impl Layer for Conv1d {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (cols, y) = self.compute(input)?;
        self.cache = Some(Cache {
            cols,
            batch: input.shape()[0],
            len: input.shape()[2],
        });
        Ok(y)
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.compute(input)?.1)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let (out_c, in_c, width) = (self.out_channels(), self.in_channels(), self.width());
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("conv1d layer"))?;
        let (batch, len) = (cache.batch, cache.len);
        if upstream.shape() != [batch, out_c, len] {
            return Err(Error::shape(&[batch, out_c, len], upstream.shape()));
        }
        // (batch, out, len) -> (batch * len, out)
        let g = upstream
            .view()
            .into_dimensionality::<Ix3>()
            .unwrap()
            .permuted_axes([0, 2, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((batch * len, out_c))
            .unwrap();
        let dk = g.t().dot(&cache.cols);
        let db = g.sum_axis(Axis(0));
        let dcols = g.dot(&self.kernel_matrix());

        let mut gk = self
            .kernels
            .grad
            .view_mut()
            .into_shape_with_order((out_c, in_c * width))
            .unwrap();
        gk += &dk;
        let mut gb = self.bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
        gb += &db;

        let pad = width / 2;
        let mut dx = Array3::<f64>::zeros((batch, in_c, len));
        for b in 0..batch {
            for c in 0..in_c {
                for k in 0..width {
                    for t in 0..len {
                        let src = t + k;
                        if src >= pad && src - pad < len {
                            dx[[b, c, src - pad]] += dcols[[b * len + t, c * width + k]];
                        }
                    }
                }
            }
        }
        Ok(dx.into_dyn())
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.kernels, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.kernels, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn unit_kernel_is_identity() {
        let mut conv = Conv1d::from_parts(array![[[1.0]]], array![0.0]).unwrap();
        let x = array![[[1.0, -2.0, 3.5, 0.25]]].into_dyn();
        assert_eq!(conv.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn same_padding_zero_extends() {
        // [1, 1, 1] sums each sample with its neighbours, zeros outside
        let conv = Conv1d::from_parts(array![[[1.0, 1.0, 1.0]]], array![0.5]).unwrap();
        let y = conv.predict(&array![[[1.0, 2.0, 3.0]]].into_dyn()).unwrap();
        assert_eq!(y, array![[[3.5, 6.5, 5.5]]].into_dyn());
    }

    #[test]
    fn even_width_rejected() {
        assert!(Conv1d::from_parts(Array3::zeros((1, 1, 2)), array![0.0]).is_err());
    }

    #[test]
    fn channel_mismatch() {
        let conv = Conv1d::from_parts(Array3::zeros((2, 3, 3)), Array1::zeros(2)).unwrap();
        let err = conv.predict(&Tensor::zeros(ndarray::IxDyn(&[1, 2, 5]))).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }
}
