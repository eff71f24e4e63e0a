//! Experiment configuration: a TOML file with nested sections, defaults for
//! every field, and `section.key = value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::residual_net::{ResidualConfig, SupervisedConfig};
use crate::sae::{ReconstructionLoss, TrainConfig};
use crate::wavelet::{make_filter, max_level};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Two Gaussian clusters, already scaled to `[0, 1]`.
    TwoClusters,
    /// Raw rows in the NSL-KDD layout, run through the normal ingest chain.
    NslKddSurrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub schema: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticKind>,
    pub synthetic_train_records: usize,
    pub synthetic_test_records: usize,
    /// Per-feature noise of the two-cluster generator.
    pub synthetic_noise: f64,
    /// Contiguous prefix kept from each split.
    pub max_train_records: usize,
    pub max_test_records: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anonymize_seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            schema: "nsl-kdd".into(),
            train: None,
            test: None,
            synthetic: None,
            synthetic_train_records: 2000,
            synthetic_test_records: 1000,
            synthetic_noise: 0.04,
            max_train_records: 8000,
            max_test_records: 4000,
            anonymize_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveletConfig {
    pub sw: usize,
    /// Defaults to `sw` (non-overlapping windows).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    pub levels: usize,
    pub filter: String,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        WaveletConfig {
            sw: 800,
            stride: None,
            levels: 6,
            filter: "db3".into(),
        }
    }
}

impl WaveletConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.sw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossName {
    Mse,
    Bce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeSection {
    /// Layer widths starting with the input width; empty means the
    /// reference widths scaled to the data.
    pub dims: Vec<usize>,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub finetune_loss: LossName,
}

impl Default for SaeSection {
    fn default() -> Self {
        SaeSection {
            dims: Vec::new(),
            pretrain_epochs: 50,
            finetune_epochs: 50,
            lr: 0.01,
            batch_size: 64,
            momentum: 0.9,
            finetune_loss: LossName::Mse,
        }
    }
}

impl SaeSection {
    pub fn pretrain(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.pretrain_epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            momentum: self.momentum,
            seed,
            loss: ReconstructionLoss::Mse,
        }
    }

    pub fn finetune(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.finetune_epochs,
            loss: match self.finetune_loss {
                LossName::Mse => ReconstructionLoss::Mse,
                LossName::Bce => ReconstructionLoss::Bce,
            },
            ..self.pretrain(seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub blocks: usize,
    pub channels: usize,
    pub kernel: usize,
    pub group_width: usize,
    pub tau: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let r = ResidualConfig::default();
        let s = SupervisedConfig::default();
        ClassifierSection {
            blocks: r.blocks,
            channels: r.channels,
            kernel: r.kernel,
            group_width: r.group_width,
            tau: r.tau,
            epochs: s.epochs,
            lr: s.lr,
            batch_size: s.batch_size,
            momentum: s.momentum,
        }
    }
}

impl ClassifierSection {
    pub fn residual(&self) -> ResidualConfig {
        ResidualConfig {
            blocks: self.blocks,
            channels: self.channels,
            kernel: self.kernel,
            group_width: self.group_width,
            tau: self.tau,
        }
    }

    pub fn training(&self, seed: u64) -> SupervisedConfig {
        SupervisedConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            momentum: self.momentum,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    pub folds: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seed: 42,
            folds: 10,
            output_dir: PathBuf::from("results"),
        }
    }
}

/// Window sizes and level counts of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub sw: Vec<usize>,
    pub levels: Vec<usize>,
    pub repeats: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            sw: vec![64, 256, 800],
            levels: vec![2, 4, 6],
            repeats: 1,
        }
    }
}

impl SweepGrid {
    /// Every `(sw, k)` cell with the reason it cannot run, if any.
    pub fn cells(&self) -> Vec<(usize, usize, Option<String>)> {
        self.sw
            .iter()
            .flat_map(|&sw| {
                self.levels.iter().map(move |&k| {
                    let max = max_level(sw);
                    let reason = (k == 0 || k > max).then(|| format!("k = {k} exceeds floor(log2({sw})) = {max}"));
                    (sw, k, reason)
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub wavelet: WaveletConfig,
    pub sae: SaeSection,
    pub classifier: ClassifierSection,
    pub experiment: ExperimentSection,
    pub sweep: SweepGrid,
}

fn positive_rate(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Config(format!("{name} must be > 0, got {v}")));
    }
    Ok(())
}

fn momentum(name: &str, v: f64) -> Result<()> {
    if !(0.0..1.0).contains(&v) {
        return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text without checking invariants.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().trim().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a config file and fills defaults. Relative dataset paths
    /// resolve against the file's directory. Invariants are not checked.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.train, &mut cfg.data.test].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// [`ExperimentConfig::read`] followed by [`ExperimentConfig::validate`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg = Self::read(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every invariant; errors quote the violated constraint.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let w = &self.wavelet;
        make_filter(&w.filter).map_err(|e| Error::Config(format!("wavelet.filter: {e}")))?;
        if w.sw < 2 {
            return Err(Error::Config(format!("wavelet.sw must be >= 2, got {}", w.sw)));
        }
        if w.stride() == 0 {
            return Err(Error::Config("wavelet.stride must be > 0".into()));
        }
        let max = max_level(w.sw);
        if w.levels == 0 || w.levels > max {
            return Err(Error::Config(format!(
                "wavelet.levels must satisfy 1 <= k <= floor(log2(sw)); k = {} but floor(log2({})) = {max}",
                w.levels, w.sw
            )));
        }
        let caps = [
            ("data.max_train_records", d.max_train_records),
            ("data.max_test_records", d.max_test_records),
        ];
        for (name, cap) in caps {
            if cap < w.sw {
                return Err(Error::Config(format!("{name} must be >= wavelet.sw; {cap} < {}", w.sw)));
            }
        }
        if d.synthetic.is_some() && d.synthetic_train_records.min(d.synthetic_test_records) < w.sw {
            return Err(Error::Config("synthetic record counts must be >= wavelet.sw".into()));
        }
        if d.synthetic.is_none() && d.train.is_none() {
            return Err(Error::Config(
                "data.train is required (path to the training CSV) unless data.synthetic is set".into(),
            ));
        }
        if d.synthetic.is_none() {
            crate::ingest::DatasetSchema::preset(&d.schema).map_err(|e| Error::Config(format!("data.schema: {e}")))?;
        }
        if !(d.synthetic_noise >= 0.0 && d.synthetic_noise.is_finite()) {
            return Err(Error::Config(format!("data.synthetic_noise must be >= 0, got {}", d.synthetic_noise)));
        }
        positive_rate("sae.lr", self.sae.lr)?;
        momentum("sae.momentum", self.sae.momentum)?;
        if self.sae.batch_size == 0 {
            return Err(Error::Config("sae.batch_size must be > 0".into()));
        }
        if self.sae.dims.len() == 1 || self.sae.dims.contains(&0) {
            return Err(Error::Config("sae.dims needs at least two positive widths (or none)".into()));
        }
        let c = &self.classifier;
        positive_rate("classifier.lr", c.lr)?;
        momentum("classifier.momentum", c.momentum)?;
        if c.batch_size == 0 {
            return Err(Error::Config("classifier.batch_size must be > 0".into()));
        }
        c.residual()
            .validate()
            .map_err(|e| Error::Config(format!("classifier: {e}")))?;
        if self.experiment.folds < 2 {
            return Err(Error::Config(format!("experiment.folds must be >= 2, got {}", self.experiment.folds)));
        }
        if self.sweep.repeats == 0 {
            return Err(Error::Config("sweep.repeats must be > 0".into()));
        }
        Ok(())
    }

    /// Sets `dotted.key` to `value`, which is read as a TOML value and falls
    /// back to a plain string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let parts: Vec<&str> = key.split('.').collect();
        if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("override key {key:?} must look like section.key")));
        }
        let mut table = &mut root;
        for part in &parts[..parts.len() - 1] {
            table = table
                .get_mut(*part)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| Error::Config(format!("unknown config section {part:?} in override {key:?}")))?;
        }
        table.insert(parts[parts.len() - 1].to_string(), parsed);
        let updated: ExperimentConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override {key}: {}", e.message().trim())))?;
        *self = updated;
        Ok(())
    }

    /// SHA-256 of the serialized config.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml("[data]\ntrain = \"train.csv\"\n").unwrap();
        cfg.validate().unwrap();
        assert_eq!((cfg.wavelet.sw, cfg.wavelet.levels), (800, 6));
        assert_eq!(cfg.wavelet.filter, "db3");
        assert_eq!(cfg.wavelet.stride(), 800);
        assert_eq!((cfg.data.max_train_records, cfg.data.max_test_records), (8000, 4000));
        assert_eq!(cfg.classifier.tau, 0.5);
    }

    #[test]
    fn empty_file_names_the_missing_path() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("data.train"), "{err}");
    }

    #[test]
    fn level_bound_is_enforced() {
        let cfg = ExperimentConfig::from_toml("[data]\ntrain = \"x\"\n[wavelet]\nlevels = 10\n").unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("floor(log2(800)) = 9"), "{err}");
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_toml("[wavelet]\nwindow = 3\n").unwrap_err().to_string();
        assert!(err.contains("window"), "{err}");
        let err = ExperimentConfig::from_toml("[nope]\n").unwrap_err().to_string();
        assert!(err.contains("nope"), "{err}");
    }

    #[test]
    fn cap_below_window_is_rejected() {
        let mut cfg = ExperimentConfig::from_toml("[data]\ntrain = \"x\"\n").unwrap();
        cfg.data.max_test_records = 100;
        assert!(cfg.validate().unwrap_err().to_string().contains("max_test_records"));
    }

    #[test]
    fn non_positive_rate_is_rejected() {
        let mut cfg = ExperimentConfig::from_toml("[data]\ntrain = \"x\"\n").unwrap();
        cfg.sae.lr = 0.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("sae.lr"));
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.data.train = Some("a.csv".into());
        cfg.wavelet.stride = Some(100);
        cfg.sae.dims = vec![10, 5];
        cfg.data.synthetic = Some(SyntheticKind::NslKddSurrogate);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn dotted_overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("wavelet.sw", "256").unwrap();
        cfg.set("wavelet.filter", "haar").unwrap();
        cfg.set("data.train", "/tmp/x.csv").unwrap();
        cfg.set("sweep.levels", "[1, 2]").unwrap();
        assert_eq!(cfg.wavelet.sw, 256);
        assert_eq!(cfg.wavelet.filter, "haar");
        assert_eq!(cfg.data.train, Some(PathBuf::from("/tmp/x.csv")));
        assert_eq!(cfg.sweep.levels, vec![1, 2]);
        assert!(cfg.set("wavelet.bogus", "1").unwrap_err().to_string().contains("bogus"));
        assert!(cfg.set("nothing.sw", "1").is_err());
        assert!(cfg.set("wavelet.sw", "\"big\"").is_err());
    }

    #[test]
    fn sweep_cells_flag_invalid_levels() {
        let grid = SweepGrid { sw: vec![4, 64], levels: vec![2, 6], repeats: 1 };
        let cells = grid.cells();
        assert_eq!(cells.len(), 4);
        let bad: Vec<_> = cells.iter().filter(|c| c.2.is_some()).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!((bad[0].0, bad[0].1), (4, 6));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.experiment.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
