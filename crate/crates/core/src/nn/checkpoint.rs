//! Plain-text model checkpoints.
//!
//! ```text
//! msrc-checkpoint 1
//! manifest seed 42
//! section sae.1
//! layer dense activation=relu
//! array weight 3 4
//! 0.1 -0.25 ...
//! end
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so loading a saved
//! checkpoint reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array3, Ix1, Ix2, Ix3, IxDyn};

use super::layer::ActivationLayer;
use super::{Activation, AnyLayer, BatchNorm1d, Conv1d, Dense, Sequential, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "msrc-checkpoint 1";

/// One serialized layer: kind, scalar attributes and named arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub kind: String,
    pub attrs: BTreeMap<String, String>,
    pub arrays: Vec<(String, Tensor)>,
}

impl LayerRecord {
    fn new(kind: &str) -> Self {
        LayerRecord {
            kind: kind.to_string(),
            attrs: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    fn attr(&self, key: &str) -> Result<&str> {
        self.attrs
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("{} layer is missing attribute {key:?}", self.kind)))
    }

    fn array(&self, name: &str) -> Result<&Tensor> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Checkpoint(format!("{} layer is missing array {name:?}", self.kind)))
    }
}

fn bad_shape(e: ndarray::ShapeError) -> Error {
    Error::Checkpoint(format!("array has the wrong rank: {e}"))
}

impl AnyLayer {
    pub fn to_record(&self) -> LayerRecord {
        match self {
            AnyLayer::Dense(d) => {
                let mut r = LayerRecord::new("dense");
                r.attrs.insert("activation".into(), d.activation.as_str().into());
                r.arrays.push(("weight".into(), d.weight.value.clone()));
                r.arrays.push(("bias".into(), d.bias.value.clone()));
                r
            }
            AnyLayer::Conv1d(c) => {
                let mut r = LayerRecord::new("conv1d");
                r.arrays.push(("kernels".into(), c.kernels.value.clone()));
                r.arrays.push(("bias".into(), c.bias.value.clone()));
                r
            }
            AnyLayer::BatchNorm(b) => {
                let mut r = LayerRecord::new("batchnorm");
                r.attrs.insert("momentum".into(), format!("{:?}", b.momentum));
                r.attrs.insert("eps".into(), format!("{:?}", b.eps));
                r.arrays.push(("gamma".into(), b.gamma.value.clone()));
                r.arrays.push(("beta".into(), b.beta.value.clone()));
                r.arrays.push(("running_mean".into(), b.running_mean.clone().into_dyn()));
                r.arrays.push(("running_var".into(), b.running_var.clone().into_dyn()));
                r
            }
            AnyLayer::Activation(a) => {
                let mut r = LayerRecord::new("activation");
                r.attrs.insert("function".into(), a.activation.as_str().into());
                r
            }
        }
    }

    pub fn from_record(r: &LayerRecord) -> Result<Self> {
        let parse_f64 = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Checkpoint(format!("bad number {s:?}")))
        };
        Ok(match r.kind.as_str() {
            "dense" => {
                let w = r.array("weight")?.clone().into_dimensionality::<Ix2>().map_err(bad_shape)?;
                let b = r.array("bias")?.clone().into_dimensionality::<Ix1>().map_err(bad_shape)?;
                if b.len() != w.nrows() {
                    return Err(Error::Checkpoint("dense bias does not match weight rows".into()));
                }
                AnyLayer::Dense(Dense::from_parts(w, b, Activation::parse(r.attr("activation")?)?))
            }
            "conv1d" => {
                let k: Array3<f64> = r.array("kernels")?.clone().into_dimensionality::<Ix3>().map_err(bad_shape)?;
                let b: Array1<f64> = r.array("bias")?.clone().into_dimensionality::<Ix1>().map_err(bad_shape)?;
                AnyLayer::Conv1d(Conv1d::from_parts(k, b)?)
            }
            "batchnorm" => {
                let gamma = r.array("gamma")?.clone().into_dimensionality::<Ix1>().map_err(bad_shape)?;
                let mut bn = BatchNorm1d::new(gamma.len());
                bn.gamma.value = gamma.into_dyn();
                bn.beta.value = r.array("beta")?.clone();
                bn.running_mean = r.array("running_mean")?.clone().into_dimensionality().map_err(bad_shape)?;
                bn.running_var = r.array("running_var")?.clone().into_dimensionality().map_err(bad_shape)?;
                bn.momentum = parse_f64(r.attr("momentum")?)?;
                bn.eps = parse_f64(r.attr("eps")?)?;
                let c = bn.channels();
                if bn.beta.value.shape() != [c] || bn.running_var.len() != c {
                    return Err(Error::Checkpoint("batchnorm arrays disagree on channel count".into()));
                }
                bn.beta.grad = Tensor::zeros(IxDyn(&[c]));
                AnyLayer::BatchNorm(bn)
            }
            "activation" => AnyLayer::Activation(ActivationLayer::new(Activation::parse(r.attr("function")?)?)),
            other => return Err(Error::Checkpoint(format!("unknown layer kind {other:?}"))),
        })
    }
}

impl Sequential {
    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.layers.iter().map(AnyLayer::to_record).collect()
    }

    pub fn from_records(records: &[LayerRecord]) -> Result<Self> {
        Ok(Sequential::new(
            records.iter().map(AnyLayer::from_record).collect::<Result<_>>()?,
        ))
    }
}

/// Manifest entries plus named sections of layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub manifest: BTreeMap<String, String>,
    pub sections: Vec<(String, Vec<LayerRecord>)>,
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Option<&[LayerRecord]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, l)| l.as_slice())
    }

    pub fn require_section(&self, name: &str) -> Result<&[LayerRecord]> {
        self.section(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing section {name:?}")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        for (k, v) in &self.manifest {
            writeln!(out, "manifest {k} {v}").unwrap();
        }
        for (name, layers) in &self.sections {
            writeln!(out, "section {name}").unwrap();
            for layer in layers {
                write!(out, "layer {}", layer.kind).unwrap();
                for (k, v) in &layer.attrs {
                    write!(out, " {k}={v}").unwrap();
                }
                out.push('\n');
                for (array_name, array) in &layer.arrays {
                    write!(out, "array {array_name}").unwrap();
                    for d in array.shape() {
                        write!(out, " {d}").unwrap();
                    }
                    out.push('\n');
                    let row_len = array.shape().last().copied().unwrap_or(1).max(1);
                    for (i, v) in array.iter().enumerate() {
                        if i > 0 {
                            out.push(if i % row_len == 0 { '\n' } else { ' ' });
                        }
                        write!(out, "{v:?}").unwrap();
                    }
                    out.push('\n');
                }
            }
        }
        writeln!(out, "end").unwrap();
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |m: String| Error::Checkpoint(m);
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MAGIC) {
            return Err(err("not an msrc checkpoint".into()));
        }
        let mut ck = Checkpoint::default();
        while let Some(line) = lines.next() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("manifest") => {
                    let key = parts.next().ok_or_else(|| err("manifest entry without key".into()))?;
                    let value = parts.collect::<Vec<_>>().join(" ");
                    ck.manifest.insert(key.to_string(), value);
                }
                Some("section") => {
                    let name = parts.next().ok_or_else(|| err("section without name".into()))?;
                    ck.sections.push((name.to_string(), Vec::new()));
                }
                Some("layer") => {
                    let kind = parts.next().ok_or_else(|| err("layer without kind".into()))?;
                    let mut record = LayerRecord::new(kind);
                    for kv in parts {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| err(format!("bad layer attribute {kv:?}")))?;
                        record.attrs.insert(k.into(), v.into());
                    }
                    let section = ck
                        .sections
                        .last_mut()
                        .ok_or_else(|| err("layer outside of a section".into()))?;
                    section.1.push(record);
                }
                Some("array") => {
                    let name = parts.next().ok_or_else(|| err("array without name".into()))?;
                    let shape = parts
                        .map(|d| d.parse::<usize>().map_err(|_| err(format!("bad dimension {d:?}"))))
                        .collect::<Result<Vec<_>>>()?;
                    let total: usize = shape.iter().product();
                    let mut values = Vec::with_capacity(total);
                    while values.len() < total {
                        let line = lines
                            .next()
                            .ok_or_else(|| err(format!("array {name} truncated")))?;
                        for v in line.split_whitespace() {
                            values.push(v.parse::<f64>().map_err(|_| err(format!("bad number {v:?}")))?);
                        }
                    }
                    if values.len() != total {
                        return Err(err(format!("array {name} has {} values, expected {total}", values.len())));
                    }
                    let array = Tensor::from_shape_vec(IxDyn(&shape), values).map_err(bad_shape)?;
                    let layer = ck
                        .sections
                        .last_mut()
                        .and_then(|s| s.1.last_mut())
                        .ok_or_else(|| err("array outside of a layer".into()))?;
                    layer.arrays.push((name.to_string(), array));
                }
                Some("end") => return Ok(ck),
                Some(other) => return Err(err(format!("unexpected line starting with {other:?}"))),
                None => {}
            }
        }
        Err(err("checkpoint is missing its end marker".into()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Mode};
    use rand::SeedableRng;

    fn model() -> Sequential {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut s = Sequential::default();
        s.push(Conv1d::new(1, 2, 3, &mut rng).unwrap());
        s.push(BatchNorm1d::new(2));
        s.push(Activation::Relu);
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let mut m = model();
        let x = Tensor::from_shape_fn(IxDyn(&[4, 1, 5]), |i| (i[0] as f64 * 0.37 - i[2] as f64 * 0.11).sin());
        m.forward(&x, Mode::Train).unwrap();
        let mut ck = Checkpoint::default();
        ck.manifest.insert("seed".into(), "11".into());
        ck.sections.push(("block".into(), m.to_records()));
        let text = ck.to_text();
        let parsed = Checkpoint::parse(&text).unwrap();
        assert_eq!(parsed, ck);
        let restored = Sequential::from_records(parsed.require_section("block").unwrap()).unwrap();
        assert_eq!(restored.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut ck = Checkpoint::default();
        ck.sections.push(("s".into(), model().to_records()));
        let text = ck.to_text();
        let cut = &text[..text.len() / 2];
        assert!(Checkpoint::parse(cut).is_err());
        assert!(Checkpoint::parse("hello").is_err());
    }
}
