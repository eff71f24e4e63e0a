//! Stacked autoencoder trained on normal traffic only.
//!
//! Each autoencoder maps `dims[i] -> dims[i + 1] -> dims[i]`. Encoding runs
//! the encoders front to back; decoding runs the decoders back to front, so
//! the outermost decoder (sigmoid) produces the reconstruction. The
//! elementwise absolute reconstruction error is the feature handed to the
//! residual groups.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::checkpoint::LayerRecord;
use crate::nn::{bce_loss, mse_loss, Activation, AnyLayer, Dense, Layer, Mode, Param, Sgd, Tensor};

/// Layer widths of the reference architecture (150 -> 110 -> 90 -> 64).
pub const REFERENCE_DIMS: [usize; 4] = [150, 110, 90, 64];

/// Reference widths rescaled to an input width of `input`.
pub fn scaled_dims(input: usize) -> Vec<usize> {
    REFERENCE_DIMS
        .iter()
        .map(|&w| ((w as f64 * input as f64 / REFERENCE_DIMS[0] as f64).round() as usize).max(1))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReconstructionLoss {
    #[default]
    Mse,
    /// Per-dimension binary cross-entropy against targets clamped to `[0, 1]`.
    Bce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub loss: ReconstructionLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr: 0.01,
            batch_size: 64,
            momentum: 0.9,
            seed: 0,
            loss: ReconstructionLoss::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Mean loss per epoch.
pub type History = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: Dense,
    pub decoder: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedAutoencoder {
    pub aes: Vec<Autoencoder>,
}

/// Minibatch SGD on a chain of dense layers reconstructing its own input.
fn train_chain(chain: &mut [&mut Dense], data: &Array2<f64>, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<History> {
    cfg.validate()?;
    let n = data.nrows();
    let mut history = Vec::with_capacity(cfg.epochs);
    if n == 0 || cfg.epochs == 0 {
        return Ok(history);
    }
    let mut opt = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = data.select(Axis(0), batch).into_dyn();
            let target = match cfg.loss {
                ReconstructionLoss::Mse => x.clone(),
                ReconstructionLoss::Bce => x.mapv(|v| v.clamp(0.0, 1.0)),
            };
            for layer in chain.iter_mut() {
                layer.zero_grad();
            }
            let mut h = x;
            for layer in chain.iter_mut() {
                h = layer.forward(&h, Mode::Train)?;
            }
            let (loss, grad) = match cfg.loss {
                ReconstructionLoss::Mse => mse_loss(&h, &target)?,
                ReconstructionLoss::Bce => bce_loss(&h, &target)?,
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("training loss at epoch {epoch}"),
                });
            }
            total += loss * batch.len() as f64;
            let mut g = grad;
            for layer in chain.iter_mut().rev() {
                g = layer.backward(&g)?;
            }
            opt.step(chain.iter_mut().flat_map(|l| l.params_mut()).collect())?;
        }
        history.push(total / n as f64);
    }
    Ok(history)
}

fn check_normal_only(labels: &[u8], rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(&[rows], &[labels.len()]));
    }
    if let Some(i) = labels.iter().position(|&l| l != 0) {
        return Err(Error::InvalidArgument(format!(
            "autoencoder training data must be normal traffic only; row {i} is labelled anomalous"
        )));
    }
    Ok(())
}

impl StackedAutoencoder {
    /// Fresh Glorot-initialised SAE; `dims` lists the input width followed
    /// by each latent width.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "SAE needs at least two positive widths, got {dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let aes = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let out_act = if i == 0 { Activation::Sigmoid } else { Activation::Relu };
                Autoencoder {
                    encoder: Dense::new(w[0], w[1], Activation::Relu, &mut rng),
                    decoder: Dense::new(w[1], w[0], out_act, &mut rng),
                }
            })
            .collect();
        Ok(StackedAutoencoder { aes })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_width()];
        dims.extend(self.aes.iter().map(|ae| ae.encoder.outputs()));
        dims
    }

    pub fn input_width(&self) -> usize {
        self.aes[0].encoder.inputs()
    }

    pub fn latent_width(&self) -> usize {
        self.aes.last().unwrap().encoder.outputs()
    }

    fn check_width(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::shape(&[x.nrows(), self.input_width()], x.shape()));
        }
        Ok(())
    }

    fn encode_partial(&self, x: &Array2<f64>, depth: usize) -> Result<Array2<f64>> {
        let mut h = x.clone().into_dyn();
        for ae in &self.aes[..depth] {
            h = ae.encoder.predict(&h)?;
        }
        Ok(h.into_dimensionality().unwrap())
    }

    /// Latent representation after every encoder.
    pub fn encode(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width(x)?;
        self.encode_partial(x, self.aes.len())
    }

    /// Decoders applied in reverse order to a latent batch.
    pub fn decode(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        let mut h = z.clone().into_dyn();
        for ae in self.aes.iter().rev() {
            h = ae.decoder.predict(&h)?;
        }
        Ok(h.into_dimensionality().unwrap())
    }

    pub fn reconstruct(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.decode(&self.encode(x)?)
    }

    /// Row-wise `|x - reconstruct(x)|`.
    pub fn reconstruction_errors(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let rec = self.reconstruct(x)?;
        Ok((x - &rec).mapv(f64::abs))
    }

    /// Mean squared reconstruction error over all entries.
    pub fn reconstruction_loss(&self, x: &Array2<f64>) -> Result<f64> {
        let rec = self.reconstruct(x)?;
        Ok(mse_loss(&rec.into_dyn(), &x.clone().into_dyn())?.0)
    }

    /// Greedy layer-wise pretraining: autoencoder `i` learns to reconstruct
    /// the latent codes of the (frozen) encoders before it.
    pub fn pretrain_layerwise(&mut self, rows: &Array2<f64>, labels: &[u8], cfg: &TrainConfig) -> Result<Vec<History>> {
        self.check_width(rows)?;
        check_normal_only(labels, rows.nrows())?;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut histories = Vec::with_capacity(self.aes.len());
        for depth in 0..self.aes.len() {
            let inputs = self.encode_partial(rows, depth)?;
            let ae = &mut self.aes[depth];
            let history = train_chain(&mut [&mut ae.encoder, &mut ae.decoder], &inputs, cfg, &mut rng)?;
            log::debug!("pretrained autoencoder {} ({} epochs)", depth + 1, history.len());
            histories.push(history);
        }
        Ok(histories)
    }

    /// End-to-end reconstruction training through every layer.
    pub fn fine_tune(&mut self, rows: &Array2<f64>, labels: &[u8], cfg: &TrainConfig) -> Result<History> {
        self.check_width(rows)?;
        check_normal_only(labels, rows.nrows())?;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5AE));
        let (mut encoders, mut decoders): (Vec<&mut Dense>, Vec<&mut Dense>) =
            self.aes.iter_mut().map(|ae| (&mut ae.encoder, &mut ae.decoder)).unzip();
        decoders.reverse();
        encoders.extend(decoders);
        train_chain(&mut encoders, rows, cfg, &mut rng)
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.aes
            .iter()
            .flat_map(|ae| ae.encoder.params().into_iter().chain(ae.decoder.params()))
            .flat_map(|p| p.value.iter().copied().collect::<Vec<_>>())
            .collect()
    }

    /// Encoder and decoder of every autoencoder, in stacking order.
    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.aes
            .iter()
            .flat_map(|ae| {
                [
                    AnyLayer::Dense(ae.encoder.clone()).to_record(),
                    AnyLayer::Dense(ae.decoder.clone()).to_record(),
                ]
            })
            .collect()
    }

    pub fn from_records(records: &[LayerRecord]) -> Result<Self> {
        if records.is_empty() || !records.len().is_multiple_of(2) {
            return Err(Error::Checkpoint("SAE section needs encoder/decoder pairs".into()));
        }
        let dense = |r: &LayerRecord| match AnyLayer::from_record(r)? {
            AnyLayer::Dense(d) => Ok(d),
            _ => Err(Error::Checkpoint("SAE section may only hold dense layers".into())),
        };
        let aes = records
            .chunks(2)
            .map(|pair| {
                Ok(Autoencoder {
                    encoder: dense(&pair[0])?,
                    decoder: dense(&pair[1])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for w in aes.windows(2) {
            if w[0].encoder.outputs() != w[1].encoder.inputs() {
                return Err(Error::Checkpoint("SAE layer widths do not chain".into()));
            }
        }
        Ok(StackedAutoencoder { aes })
    }
}

/// Forward is [`StackedAutoencoder::reconstruct`] on `(batch, width)`
/// tensors, so the whole encode/decode chain can be backpropagated.
impl Layer for StackedAutoencoder {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        if input.ndim() != 2 || input.shape()[1] != self.input_width() {
            return Err(Error::shape(&[input.shape()[0], self.input_width()], input.shape()));
        }
        let mut h = input.clone();
        for ae in self.aes.iter_mut() {
            h = ae.encoder.forward(&h, mode)?;
        }
        for ae in self.aes.iter_mut().rev() {
            h = ae.decoder.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let x: Array2<f64> = input
            .clone()
            .into_dimensionality()
            .map_err(|_| Error::shape(&[input.shape()[0], self.input_width()], input.shape()))?;
        Ok(self.reconstruct(&x)?.into_dyn())
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let mut g = upstream.clone();
        for ae in self.aes.iter_mut() {
            g = ae.decoder.backward(&g)?;
        }
        for ae in self.aes.iter_mut().rev() {
            g = ae.encoder.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param> {
        self.aes
            .iter()
            .flat_map(|ae| ae.encoder.params().into_iter().chain(ae.decoder.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.aes
            .iter_mut()
            .flat_map(|ae| ae.encoder.params_mut().into_iter().chain(ae.decoder.params_mut()))
            .collect()
    }
}

/// Elementwise `|x - x_rec|`.
pub fn reconstruction_error(x: ArrayView1<f64>, x_rec: ArrayView1<f64>) -> Result<Array1<f64>> {
    if x.len() != x_rec.len() {
        return Err(Error::shape(&[x.len()], &[x_rec.len()]));
    }
    Ok(ndarray::Zip::from(&x).and(&x_rec).map_collect(|a, b| (a - b).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn reference_widths() {
        assert_eq!(scaled_dims(150), vec![150, 110, 90, 64]);
        assert_eq!(scaled_dims(8), vec![8, 6, 5, 3]);
    }

    #[test]
    fn latent_and_output_widths() {
        let sae = StackedAutoencoder::new(&REFERENCE_DIMS, 1).unwrap();
        let x = Array2::from_elem((3, 150), 0.5);
        assert_eq!(sae.encode(&x).unwrap().dim(), (3, 64));
        assert_eq!(sae.reconstruct(&x).unwrap().dim(), (3, 150));
        assert_eq!(sae.dims(), REFERENCE_DIMS.to_vec());
    }

    #[test]
    fn single_autoencoder_encode_is_its_encoder() {
        let sae = StackedAutoencoder::new(&[5, 2], 3).unwrap();
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64 / 20.0);
        let direct = sae.aes[0].encoder.predict(&x.clone().into_dyn()).unwrap();
        assert_eq!(sae.encode(&x).unwrap().into_dyn(), direct);
    }

    #[test]
    fn zero_weights_give_zero_latent() {
        let mut sae = StackedAutoencoder::new(&[4, 3, 2], 3).unwrap();
        for ae in &mut sae.aes {
            ae.encoder.weight.value.fill(0.0);
        }
        let z = sae.encode(&Array2::ones((2, 4))).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn width_mismatch() {
        let sae = StackedAutoencoder::new(&[4, 3, 2], 3).unwrap();
        assert!(sae.encode(&Array2::ones((2, 5))).is_err());
    }

    #[test]
    fn error_vector_rules() {
        let e = reconstruction_error(array![1.0, 2.0].view(), array![0.0, 4.0].view()).unwrap();
        assert_eq!(e, array![1.0, 2.0]);
        let x = array![0.3, -1.0, 2.0];
        let y = array![1.0, 1.0, 1.0];
        assert_eq!(
            reconstruction_error(x.view(), y.view()).unwrap(),
            reconstruction_error(y.view(), x.view()).unwrap()
        );
        assert!(reconstruction_error(x.view(), x.view()).unwrap().iter().all(|&v| v == 0.0));
        assert!(reconstruction_error(x.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let mut sae = StackedAutoencoder::new(&[4, 3, 2], 9).unwrap();
        let before = sae.clone();
        let rows = Array2::from_elem((10, 4), 0.4);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        sae.pretrain_layerwise(&rows, &[0; 10], &cfg).unwrap();
        sae.fine_tune(&rows, &[0; 10], &cfg).unwrap();
        assert_eq!(sae, before);
    }

    #[test]
    fn anomalous_rows_are_rejected() {
        let mut sae = StackedAutoencoder::new(&[4, 3, 2], 9).unwrap();
        let rows = Array2::from_elem((3, 4), 0.4);
        let cfg = TrainConfig::default();
        assert!(sae.pretrain_layerwise(&rows, &[0, 1, 0], &cfg).is_err());
        assert!(sae.fine_tune(&rows, &[0, 0, 1], &cfg).is_err());
    }

    #[test]
    fn non_positive_learning_rate_is_a_config_error() {
        let mut sae = StackedAutoencoder::new(&[4, 3, 2], 9).unwrap();
        let rows = Array2::from_elem((3, 4), 0.4);
        let cfg = TrainConfig { lr: 0.0, ..Default::default() };
        assert!(matches!(sae.fine_tune(&rows, &[0; 3], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_records_round_trip() {
        let sae = StackedAutoencoder::new(&[6, 4, 3], 2).unwrap();
        let back = StackedAutoencoder::from_records(&sae.to_records()).unwrap();
        assert_eq!(back, sae);
    }
}
