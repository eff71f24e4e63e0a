//! Residual groups over reconstruction-error vectors and the classifier head.
//!
//! An error vector of width `d` is read as a 1-channel sequence of length
//! `d`. A block of depth `L` computes `F(e) + e`, where `F` is `L` rounds of
//! conv -> batch norm -> ReLU followed by a width-1 projection back to one
//! channel. A group feeds the same vector to blocks of depth 1..=n,
//! concatenates their outputs and applies a dense layer. The head
//! concatenates the group outputs of every scale and emits a sigmoid score.

use ndarray::{concatenate, s, Array2, Array3, Axis, Ix2, Ix3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::checkpoint::{Checkpoint, LayerRecord};
use crate::nn::{
    bce_loss, expect_rank, Activation, AnyLayer, BatchNorm1d, Conv1d, Dense, Layer, Mode, Param, Sequential, Sgd,
    Tensor,
};
use crate::sae::{History, StackedAutoencoder};

fn reshape(t: &Tensor, shape: &[usize]) -> Tensor {
    t.as_standard_layout().into_owned().into_shape_with_order(shape.to_vec()).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualConfig {
    /// Blocks per group; block `i` has depth `i + 1`.
    pub blocks: usize,
    pub channels: usize,
    pub kernel: usize,
    pub group_width: usize,
    pub tau: f64,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        ResidualConfig {
            blocks: 3,
            channels: 8,
            kernel: 3,
            group_width: 32,
            tau: 0.5,
        }
    }
}

impl ResidualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.channels == 0 || self.group_width == 0 {
            return Err(Error::Config("residual blocks, channels and group width must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("conv width must be odd, got {}", self.kernel)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("threshold must lie in [0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

/// `y = F(x) + x` on `(batch, 1, d)` tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub body: Sequential,
}

impl ResidualBlock {
    pub fn new(depth: usize, channels: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidArgument("residual block depth must be positive".into()));
        }
        let mut body = Sequential::default();
        for layer in 0..depth {
            let input = if layer == 0 { 1 } else { channels };
            body.push(Conv1d::new(input, channels, kernel, rng)?);
            body.push(BatchNorm1d::new(channels));
            body.push(Activation::Relu);
        }
        body.push(Conv1d::new(channels, 1, 1, rng)?);
        Ok(ResidualBlock { body })
    }

    /// Number of conv -> BN -> ReLU rounds.
    pub fn depth(&self) -> usize {
        self.body.layers.iter().filter(|l| matches!(l, AnyLayer::BatchNorm(_))).count()
    }

    /// Zeroes every convolution so that `F = 0`.
    pub fn zero_residual(&mut self) {
        for layer in &mut self.body.layers {
            if let AnyLayer::Conv1d(c) = layer {
                c.kernels.value.fill(0.0);
                c.bias.value.fill(0.0);
            }
        }
    }

    fn check(input: &Tensor) -> Result<()> {
        expect_rank(input, 3, "residual block")?;
        if input.shape()[1] != 1 {
            return Err(Error::shape(&[input.shape()[0], 1, input.shape()[2]], input.shape()));
        }
        Ok(())
    }
}

impl Layer for ResidualBlock {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        Self::check(input)?;
        Ok(self.body.forward(input, mode)? + input)
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        Self::check(input)?;
        Ok(self.body.predict(input)? + input)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        Ok(self.body.backward(upstream)? + upstream)
    }

    fn params(&self) -> Vec<&Param> {
        self.body.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.body.params_mut()
    }
}

/// Parallel blocks on a mirrored input, concatenated, then a dense layer.
/// Takes and returns `(batch, features)` tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGroup {
    pub blocks: Vec<ResidualBlock>,
    pub fc: Dense,
}

impl ResidualGroup {
    pub fn new(width: usize, cfg: &ResidualConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let blocks = (1..=cfg.blocks)
            .map(|depth| ResidualBlock::new(depth, cfg.channels, cfg.kernel, rng))
            .collect::<Result<Vec<_>>>()?;
        let fc = Dense::new(cfg.blocks * width, cfg.group_width, Activation::Relu, rng);
        Ok(ResidualGroup { blocks, fc })
    }

    pub fn input_width(&self) -> usize {
        self.fc.inputs() / self.blocks.len()
    }

    pub fn output_width(&self) -> usize {
        self.fc.outputs()
    }

    fn as_sequence(&self, input: &Tensor) -> Result<Tensor> {
        expect_rank(input, 2, "residual group")?;
        let (b, d) = (input.shape()[0], input.shape()[1]);
        if d != self.input_width() {
            return Err(Error::shape(&[b, self.input_width()], input.shape()));
        }
        Ok(reshape(input, &[b, 1, d]))
    }

    fn compose(outputs: Vec<Tensor>) -> Tensor {
        let flat: Vec<Array2<f64>> = outputs
            .into_iter()
            .map(|t| {
                let (b, d) = (t.shape()[0], t.shape()[2]);
                reshape(&t, &[b, d]).into_dimensionality().unwrap()
            })
            .collect();
        let views: Vec<_> = flat.iter().map(|a| a.view()).collect();
        concatenate(Axis(1), &views).unwrap().into_dyn()
    }

    /// Concatenated block outputs before the dense layer.
    pub fn compose_forward(&self, input: &Tensor) -> Result<Tensor> {
        let x = self.as_sequence(input)?;
        let outputs = self.blocks.iter().map(|b| b.predict(&x)).collect::<Result<Vec<_>>>()?;
        Ok(Self::compose(outputs))
    }
}

impl Layer for ResidualGroup {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let x = self.as_sequence(input)?;
        let outputs = self
            .blocks
            .iter_mut()
            .map(|b| b.forward(&x, mode))
            .collect::<Result<Vec<_>>>()?;
        self.fc.forward(&Self::compose(outputs), mode)
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.fc.predict(&self.compose_forward(input)?)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let g = self.fc.backward(upstream)?;
        let g = g.into_dimensionality::<Ix2>().unwrap();
        let (b, d) = (g.nrows(), self.input_width());
        let mut dx = Array3::<f64>::zeros((b, 1, d)).into_dyn();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let part = g.slice(s![.., i * d..(i + 1) * d]).to_owned();
            let part = reshape(&part.into_dyn(), &[b, 1, d]);
            dx += &block.backward(&part)?;
        }
        Ok(reshape(&dx, &[b, d]))
    }

    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.blocks.iter().flat_map(|b| b.params()).collect();
        p.extend(self.fc.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        p.extend(self.fc.params_mut());
        p
    }
}

/// Dense layer to one sigmoid unit; `score >= tau` means anomaly.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub fc: Dense,
    pub tau: f64,
}

impl ClassifierHead {
    pub fn new(inputs: usize, tau: f64, rng: &mut ChaCha8Rng) -> Self {
        ClassifierHead {
            fc: Dense::new(inputs, 1, Activation::Sigmoid, rng),
            tau,
        }
    }

    pub fn label(&self, score: f64) -> u8 {
        (score >= self.tau) as u8
    }

    /// Scores and labels from the group outputs of every scale.
    pub fn classify(&self, group_outputs: &[Array2<f64>]) -> Result<(Vec<f64>, Vec<u8>)> {
        let views: Vec<_> = group_outputs.iter().map(|a| a.view()).collect();
        let joined = concatenate(Axis(1), &views).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        if joined.ncols() != self.fc.inputs() {
            return Err(Error::shape(&[joined.nrows(), self.fc.inputs()], joined.shape()));
        }
        let scores: Vec<f64> = self.fc.predict(&joined.into_dyn())?.iter().copied().collect();
        let labels = scores.iter().map(|&s| self.label(s)).collect();
        Ok((scores, labels))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            epochs: 50,
            lr: 0.01,
            batch_size: 64,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// One residual group per scale plus the head. Takes `(batch, k, d)` error
/// tensors and returns `(batch, 1)` scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualClassifier {
    pub groups: Vec<ResidualGroup>,
    pub head: ClassifierHead,
}

impl ResidualClassifier {
    pub fn new(scales: usize, width: usize, cfg: &ResidualConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if scales == 0 || width == 0 {
            return Err(Error::InvalidArgument("classifier needs at least one scale and feature".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = (0..scales)
            .map(|_| ResidualGroup::new(width, cfg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head = ClassifierHead::new(scales * cfg.group_width, cfg.tau, &mut rng);
        Ok(ResidualClassifier { groups, head })
    }

    pub fn scales(&self) -> usize {
        self.groups.len()
    }

    pub fn width(&self) -> usize {
        self.groups[0].input_width()
    }

    fn check(&self, input: &Tensor) -> Result<()> {
        expect_rank(input, 3, "residual classifier")?;
        let expected = [input.shape()[0], self.scales(), self.width()];
        if input.shape() != expected {
            return Err(Error::shape(&expected, input.shape()));
        }
        Ok(())
    }

    /// Per-record anomaly scores in eval mode.
    pub fn scores(&self, errors: &Array3<f64>) -> Result<Vec<f64>> {
        Ok(self.predict(&errors.clone().into_dyn())?.iter().copied().collect())
    }

    pub fn classify(&self, errors: &Array3<f64>) -> Result<(Vec<f64>, Vec<u8>)> {
        let scores = self.scores(errors)?;
        let labels = scores.iter().map(|&s| self.head.label(s)).collect();
        Ok((scores, labels))
    }

    /// Minibatch BCE training on record labels. Returns the mean loss of
    /// each epoch.
    pub fn train_supervised(&mut self, errors: &Array3<f64>, labels: &[u8], cfg: &SupervisedConfig) -> Result<History> {
        self.check(&errors.view().into_dyn().to_owned())?;
        if labels.len() != errors.dim().0 {
            return Err(Error::shape(&[errors.dim().0], &[labels.len()]));
        }
        if !(cfg.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", cfg.lr)));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch size must be > 0".into()));
        }
        let n = labels.len();
        let mut history = Vec::with_capacity(cfg.epochs);
        if n == 0 || cfg.epochs == 0 {
            return Ok(history);
        }
        let mut opt = Sgd::new(cfg.lr, cfg.momentum).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let x = errors.select(Axis(0), batch).into_dyn();
                let target = Array2::from_shape_fn((batch.len(), 1), |(i, _)| labels[batch[i]] as f64).into_dyn();
                self.zero_grad();
                let out = self.forward(&x, Mode::Train)?;
                let (loss, grad) = bce_loss(&out, &target)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("classifier loss at epoch {epoch}"),
                    });
                }
                total += loss * batch.len() as f64;
                self.backward(&grad)?;
                opt.step(self.params_mut())?;
            }
            history.push(total / n as f64);
            log::debug!("classifier epoch {epoch}: loss {:.5}", total / n as f64);
        }
        Ok(history)
    }

    pub fn write_sections(&self, ckpt: &mut Checkpoint) {
        for (j, g) in self.groups.iter().enumerate() {
            for (i, b) in g.blocks.iter().enumerate() {
                ckpt.sections.push((format!("group.{}.block.{}", j + 1, i + 1), b.body.to_records()));
            }
            ckpt.sections
                .push((format!("group.{}.fc", j + 1), vec![AnyLayer::Dense(g.fc.clone()).to_record()]));
        }
        ckpt.sections.push(("head".into(), vec![AnyLayer::Dense(self.head.fc.clone()).to_record()]));
        ckpt.manifest.insert("tau".into(), format!("{:?}", self.head.tau));
        ckpt.manifest.insert("scales".into(), self.scales().to_string());
        ckpt.manifest.insert("blocks".into(), self.groups[0].blocks.len().to_string());
    }

    pub fn read_sections(ckpt: &Checkpoint) -> Result<Self> {
        let number = |key: &str| -> Result<usize> {
            ckpt.manifest
                .get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("manifest entry {key:?} missing or invalid")))
        };
        let dense = |records: &[LayerRecord]| -> Result<Dense> {
            match records {
                [r] => match AnyLayer::from_record(r)? {
                    AnyLayer::Dense(d) => Ok(d),
                    _ => Err(Error::Checkpoint("expected a dense layer".into())),
                },
                _ => Err(Error::Checkpoint("expected exactly one dense layer".into())),
            }
        };
        let (scales, blocks) = (number("scales")?, number("blocks")?);
        let tau: f64 = ckpt
            .manifest
            .get("tau")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint("manifest entry \"tau\" missing or invalid".into()))?;
        let groups = (1..=scales)
            .map(|j| {
                let blocks = (1..=blocks)
                    .map(|i| {
                        let body = Sequential::from_records(ckpt.require_section(&format!("group.{j}.block.{i}"))?)?;
                        Ok(ResidualBlock { body })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let fc = dense(ckpt.require_section(&format!("group.{j}.fc"))?)?;
                Ok(ResidualGroup { blocks, fc })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = ClassifierHead {
            fc: dense(ckpt.require_section("head")?)?,
            tau,
        };
        Ok(ResidualClassifier { groups, head })
    }
}

impl Layer for ResidualClassifier {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check(input)?;
        let outs = self
            .groups
            .iter_mut()
            .enumerate()
            .map(|(j, g)| g.forward(&input.index_axis(Axis(1), j).to_owned(), mode))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = outs.iter().map(|a| a.view()).collect();
        self.head.fc.forward(&concatenate(Axis(1), &views).unwrap(), mode)
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check(input)?;
        let outs = self
            .groups
            .iter()
            .enumerate()
            .map(|(j, g)| g.predict(&input.index_axis(Axis(1), j).to_owned()))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = outs.iter().map(|a| a.view()).collect();
        self.head.fc.predict(&concatenate(Axis(1), &views).unwrap())
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let g = self.head.fc.backward(upstream)?;
        let (b, k, d) = (g.shape()[0], self.scales(), self.width());
        let mut dx = Array3::<f64>::zeros((b, k, d));
        let mut offset = 0;
        for (j, group) in self.groups.iter_mut().enumerate() {
            let w = group.output_width();
            let part = g.slice(s![.., offset..offset + w]).to_owned().into_dyn();
            offset += w;
            let dj = group.backward(&part)?;
            dx.index_axis_mut(Axis(1), j).assign(&dj.into_dimensionality::<Ix2>().unwrap());
        }
        Ok(dx.into_dyn())
    }

    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.groups.iter().flat_map(|g| g.params()).collect();
        p.extend(self.head.fc.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = self.groups.iter_mut().flat_map(|g| g.params_mut()).collect();
        p.extend(self.head.fc.params_mut());
        p
    }
}

/// The complete model: one normal-only SAE per scale feeding the residual
/// classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Msrc {
    pub saes: Vec<StackedAutoencoder>,
    pub classifier: ResidualClassifier,
    signs: Vec<Array2<f64>>,
}

impl Msrc {
    pub fn new(saes: Vec<StackedAutoencoder>, classifier: ResidualClassifier) -> Result<Self> {
        if saes.len() != classifier.scales() {
            return Err(Error::shape(&[classifier.scales()], &[saes.len()]));
        }
        if saes.iter().any(|s| s.input_width() != classifier.width()) {
            return Err(Error::InvalidArgument("SAE input widths must match the classifier width".into()));
        }
        Ok(Msrc {
            saes,
            classifier,
            signs: Vec::new(),
        })
    }

    /// Stacks per-scale reconstruction errors into `(records, k, d)`.
    /// `scales[j]` holds the level-`j + 1` rows.
    pub fn error_features(&self, scales: &[Array2<f64>]) -> Result<Array3<f64>> {
        if scales.len() != self.saes.len() {
            return Err(Error::shape(&[self.saes.len()], &[scales.len()]));
        }
        let errs = scales
            .iter()
            .zip(&self.saes)
            .map(|(x, sae)| sae.reconstruction_errors(x))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = errs.iter().map(|a| a.view()).collect();
        ndarray::stack(Axis(1), &views).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// Trains the groups and head on fixed SAE errors; the SAEs are not
    /// touched.
    pub fn train_supervised(&mut self, scales: &[Array2<f64>], labels: &[u8], cfg: &SupervisedConfig) -> Result<History> {
        let errors = self.error_features(scales)?;
        self.classifier.train_supervised(&errors, labels, cfg)
    }

    pub fn classify(&self, scales: &[Array2<f64>]) -> Result<(Vec<f64>, Vec<u8>)> {
        self.classifier.classify(&self.error_features(scales)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        for (j, sae) in self.saes.iter().enumerate() {
            ckpt.sections.push((format!("sae.{}", j + 1), sae.to_records()));
        }
        self.classifier.write_sections(&mut ckpt);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let classifier = ResidualClassifier::read_sections(ckpt)?;
        let saes = (1..=classifier.scales())
            .map(|j| StackedAutoencoder::from_records(ckpt.require_section(&format!("sae.{j}"))?))
            .collect::<Result<Vec<_>>>()?;
        Msrc::new(saes, classifier)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Forward maps level reconstructions `(batch, k, d)` to scores, through
/// `|x - sae_j(x)|`, so gradients reach every parameter including the SAEs.
impl Layer for Msrc {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        expect_rank(input, 3, "MSRC model")?;
        let x = input.view().into_dimensionality::<Ix3>().unwrap();
        if x.dim().1 != self.saes.len() {
            return Err(Error::shape(&[x.dim().0, self.saes.len(), x.dim().2], input.shape()));
        }
        let mut errors = Array3::zeros(x.raw_dim());
        self.signs.clear();
        for (j, sae) in self.saes.iter_mut().enumerate() {
            let xj = x.index_axis(Axis(1), j).to_owned();
            let rec = sae.forward(&xj.clone().into_dyn(), mode)?;
            let diff = &xj - &rec.into_dimensionality::<Ix2>().unwrap();
            errors.index_axis_mut(Axis(1), j).assign(&diff.mapv(f64::abs));
            self.signs.push(diff.mapv(sign));
        }
        self.classifier.forward(&errors.into_dyn(), mode)
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let x = input
            .view()
            .into_dimensionality::<Ix3>()
            .map_err(|_| Error::InvalidArgument("MSRC model expects a rank-3 tensor".into()))?;
        let scales: Vec<Array2<f64>> = x.axis_iter(Axis(1)).map(|a| a.to_owned()).collect();
        self.classifier.predict(&self.error_features(&scales)?.into_dyn())
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let ge = self.classifier.backward(upstream)?.into_dimensionality::<Ix3>().unwrap();
        let mut dx = Array3::zeros(ge.raw_dim());
        for (j, sae) in self.saes.iter_mut().enumerate() {
            let s = &self.signs[j];
            let g = &ge.index_axis(Axis(1), j) * s;
            let through = sae.backward(&(-&g).into_dyn())?.into_dimensionality::<Ix2>().unwrap();
            dx.index_axis_mut(Axis(1), j).assign(&(g + through));
        }
        Ok(dx.into_dyn())
    }

    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.saes.iter().flat_map(|s| s.params()).collect();
        p.extend(self.classifier.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = self.saes.iter_mut().flat_map(|s| s.params_mut()).collect();
        p.extend(self.classifier.params_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng(seed);
        Tensor::from_shape_fn(ndarray::IxDyn(shape), |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn block_depths() {
        let g = ResidualGroup::new(6, &ResidualConfig::default(), &mut rng(0)).unwrap();
        let depths: Vec<usize> = g.blocks.iter().map(|b| b.depth()).collect();
        assert_eq!(depths, vec![1, 2, 3]);
    }

    #[test]
    fn zero_residual_is_identity() {
        for depth in 1..=3 {
            let mut block = ResidualBlock::new(depth, 8, 3, &mut rng(depth as u64)).unwrap();
            block.zero_residual();
            let e = random(&[4, 1, 9], 1).mapv(f64::abs);
            assert_eq!(block.forward(&e, Mode::Train).unwrap(), e);
            assert_eq!(block.predict(&e).unwrap(), e);
            let zero = Tensor::zeros(e.raw_dim());
            assert_eq!(block.forward(&zero, Mode::Train).unwrap(), zero);
        }
    }

    #[test]
    fn shape_is_preserved() {
        let mut r = rng(3);
        for _ in 0..20 {
            let depth = r.random_range(1..4);
            let channels = r.random_range(1..6);
            let kernel = [1, 3, 5][r.random_range(0..3)];
            let d = r.random_range(1..20);
            let b = r.random_range(1..5);
            let mut block = ResidualBlock::new(depth, channels, kernel, &mut r).unwrap();
            let x = random(&[b, 1, d], d as u64);
            assert_eq!(block.forward(&x, Mode::Train).unwrap().shape(), x.shape());
        }
    }

    #[test]
    fn block_rejects_multichannel_input() {
        let mut block = ResidualBlock::new(1, 4, 3, &mut rng(0)).unwrap();
        assert!(block.forward(&random(&[2, 2, 5], 0), Mode::Train).is_err());
    }

    #[test]
    fn zero_blocks_with_identity_fc_mirror_input() {
        let d = 5;
        let cfg = ResidualConfig { group_width: 3 * d, ..Default::default() };
        let mut g = ResidualGroup::new(d, &cfg, &mut rng(2)).unwrap();
        for b in &mut g.blocks {
            b.zero_residual();
        }
        g.fc = Dense::from_parts(Array2::eye(3 * d), Array1::zeros(3 * d), Activation::Linear);
        let e = random(&[3, d], 4);
        let out = g.forward(&e, Mode::Train).unwrap();
        let views = [e.view(), e.view(), e.view()];
        assert_eq!(out, concatenate(Axis(1), &views).unwrap());
    }

    #[test]
    fn single_block_group() {
        let d = 4;
        let cfg = ResidualConfig { blocks: 1, group_width: d, ..Default::default() };
        let g = ResidualGroup::new(d, &cfg, &mut rng(2)).unwrap();
        let e = random(&[2, d], 4);
        let seq = e.clone().into_shape_with_order(vec![2, 1, d]).unwrap();
        let direct = g.blocks[0].predict(&seq).unwrap().into_shape_with_order(vec![2, d]).unwrap();
        assert_eq!(g.predict(&e).unwrap(), g.fc.predict(&direct).unwrap());
    }

    #[test]
    fn zero_head_sits_on_the_boundary() {
        let mut head = ClassifierHead::new(4, 0.5, &mut rng(0));
        head.fc.weight.value.fill(0.0);
        let (scores, labels) = head.classify(&[Array2::ones((2, 2)), Array2::ones((2, 2))]).unwrap();
        assert_eq!(scores, vec![0.5, 0.5]);
        assert_eq!(labels, vec![1, 1]);
    }

    #[test]
    fn head_is_monotone_in_weights() {
        let mut head = ClassifierHead::new(3, 0.5, &mut rng(1));
        let x = [Array2::from_elem((1, 3), 0.7)];
        let (before, _) = head.classify(&x).unwrap();
        head.fc.weight.value[[0, 1]] += 0.3;
        let (after, _) = head.classify(&x).unwrap();
        assert!(after[0] > before[0]);
    }

    #[test]
    fn head_rejects_wrong_width() {
        let head = ClassifierHead::new(4, 0.5, &mut rng(0));
        assert!(head.classify(&[Array2::ones((1, 3))]).is_err());
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut model = ResidualClassifier::new(2, 5, &ResidualConfig::default(), 1).unwrap();
        let before = model.clone();
        let errors = Array3::from_elem((4, 2, 5), 0.1);
        let cfg = SupervisedConfig { epochs: 0, ..Default::default() };
        model.train_supervised(&errors, &[0, 1, 0, 1], &cfg).unwrap();
        assert_eq!(model.params(), before.params());
    }

    #[test]
    fn checkpoint_round_trip() {
        let saes = vec![
            StackedAutoencoder::new(&[5, 4, 3], 1).unwrap(),
            StackedAutoencoder::new(&[5, 4, 3], 2).unwrap(),
        ];
        let classifier = ResidualClassifier::new(2, 5, &ResidualConfig::default(), 3).unwrap();
        let model = Msrc::new(saes, classifier).unwrap();
        let text = model.to_checkpoint().to_text();
        let back = Msrc::from_checkpoint(&Checkpoint::parse(&text).unwrap()).unwrap();
        let scales = vec![random(&[6, 5], 1).into_dimensionality().unwrap(); 2];
        let (a, _) = model.classify(&scales).unwrap();
        let (b, _) = back.classify(&scales).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}
