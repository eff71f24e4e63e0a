//! Orthogonal wavelet filter banks, multi-level Mallat decomposition and
//! level-j reconstruction of windowed feature signals.
//!
//! Analysis correlates the symmetrically extended signal with the low/high
//! pass filters and keeps every second output; synthesis is the exact adjoint
//! of that operator, which makes the pair perfectly reconstructing for any
//! signal length.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::FeatureMatrix;

pub const SUPPORTED_FILTERS: [&str; 3] = ["haar", "db2", "db3"];
pub const DEFAULT_FILTER: &str = "db3";

/// Boundary extension applied before filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// Half-sample mirror: `x[-1] = x[0]`, `x[-2] = x[1]`, `x[n] = x[n-1]`, ...
    #[default]
    Symmetric,
}

/// Low-pass / high-pass pair of an orthogonal wavelet.
///
/// `high_pass[n] = (-1)^n * low_pass[L - 1 - n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilter {
    name: String,
    low_pass: Vec<f64>,
    high_pass: Vec<f64>,
}

impl WaveletFilter {
    fn from_low_pass(name: &str, low_pass: Vec<f64>) -> Self {
        let len = low_pass.len();
        let high_pass = (0..len)
            .map(|n| {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                sign * low_pass[len - 1 - n]
            })
            .collect();
        WaveletFilter {
            name: name.to_string(),
            low_pass,
            high_pass,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn low_pass(&self) -> &[f64] {
        &self.low_pass
    }

    pub fn high_pass(&self) -> &[f64] {
        &self.high_pass
    }

    pub fn len(&self) -> usize {
        self.low_pass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low_pass.is_empty()
    }
}

/// Builds one of the supported Daubechies filters from its closed form.
pub fn make_filter(name: &str) -> Result<WaveletFilter> {
    let s2 = std::f64::consts::SQRT_2;
    let low_pass = match name.to_ascii_lowercase().as_str() {
        "haar" | "db1" => vec![1.0 / s2, 1.0 / s2],
        "db2" => {
            let s3 = 3f64.sqrt();
            let c = 4.0 * s2;
            vec![(1.0 + s3) / c, (3.0 + s3) / c, (3.0 - s3) / c, (1.0 - s3) / c]
        }
        "db3" => {
            let a = 10f64.sqrt();
            let b = (5.0 + 2.0 * a).sqrt();
            let c = 16.0 * s2;
            vec![
                (1.0 + a + b) / c,
                (5.0 + a + 3.0 * b) / c,
                (10.0 - 2.0 * a + 2.0 * b) / c,
                (10.0 - 2.0 * a - 2.0 * b) / c,
                (5.0 + a - 3.0 * b) / c,
                (1.0 + a - b) / c,
            ]
        }
        _ => {
            return Err(Error::UnsupportedFilter {
                name: name.to_string(),
                supported: SUPPORTED_FILTERS.join(", "),
            })
        }
    };
    let canonical = match name.to_ascii_lowercase().as_str() {
        "db1" => "haar".to_string(),
        other => other.to_string(),
    };
    Ok(WaveletFilter::from_low_pass(&canonical, low_pass))
}

fn extend_index(i: isize, len: usize) -> usize {
    let period = 2 * len as isize;
    let r = i.rem_euclid(period) as usize;
    if r < len {
        r
    } else {
        2 * len - 1 - r
    }
}

/// Number of coefficients produced from a signal of length `len`.
pub fn coefficient_len(len: usize, filter_len: usize) -> usize {
    (len + filter_len - 1) / 2
}

/// Largest admissible decomposition level for a signal of length `len`.
pub fn max_level(len: usize) -> usize {
    if len == 0 {
        0
    } else {
        len.ilog2() as usize
    }
}

pub const MIN_SIGNAL_LEN: usize = 2;

/// One analysis step: returns `(approx, detail)`.
pub fn dwt_step(
    signal: &[f64],
    filter: &WaveletFilter,
    padding: Padding,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = signal.len();
    if n < MIN_SIGNAL_LEN {
        return Err(Error::SignalTooShort {
            len: n,
            min: MIN_SIGNAL_LEN,
        });
    }
    let Padding::Symmetric = padding;
    let taps = filter.len();
    let offset = taps as isize - 2;
    let out_len = coefficient_len(n, taps);
    let mut approx = vec![0.0; out_len];
    let mut detail = vec![0.0; out_len];
    for (i, (a, d)) in approx.iter_mut().zip(detail.iter_mut()).enumerate() {
        let base = 2 * i as isize - offset;
        let (mut sa, mut sd) = (0.0, 0.0);
        for k in 0..taps {
            let x = signal[extend_index(base + k as isize, n)];
            sa += filter.low_pass[k] * x;
            sd += filter.high_pass[k] * x;
        }
        *a = sa;
        *d = sd;
    }
    Ok((approx, detail))
}

/// One synthesis step, the adjoint of [`dwt_step`], trimmed to `out_len`.
pub fn idwt_step(
    approx: &[f64],
    detail: &[f64],
    filter: &WaveletFilter,
    padding: Padding,
    out_len: usize,
) -> Result<Vec<f64>> {
    let Padding::Symmetric = padding;
    let taps = filter.len();
    let expected = coefficient_len(out_len, taps);
    if approx.len() != expected || detail.len() != expected {
        return Err(Error::shape(
            &[expected, expected],
            &[approx.len(), detail.len()],
        ));
    }
    let offset = taps as isize - 2;
    let mut out = vec![0.0; out_len];
    for (i, (&a, &d)) in approx.iter().zip(detail).enumerate() {
        let base = 2 * i as isize - offset;
        for k in 0..taps {
            let m = base + k as isize;
            if m >= 0 && (m as usize) < out_len {
                out[m as usize] += a * filter.low_pass[k] + d * filter.high_pass[k];
            }
        }
    }
    Ok(out)
}

/// Coefficient list `[c_l^k, c_h^k, ..., c_h^1]` of a k-level decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoefficients {
    filter: WaveletFilter,
    padding: Padding,
    original_length: usize,
    /// Input length at each level, `lengths[0] = original_length`.
    lengths: Vec<usize>,
    approx: Vec<f64>,
    /// Ordered coarsest first: `details[0]` is level k, the last is level 1.
    details: Vec<Vec<f64>>,
}

impl WaveletCoefficients {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn approx(&self) -> &[f64] {
        &self.approx
    }

    pub fn details(&self) -> &[Vec<f64>] {
        &self.details
    }

    /// Detail coefficients of level `level` (1 = finest).
    pub fn detail(&self, level: usize) -> Option<&[f64]> {
        let k = self.levels();
        (1..=k)
            .contains(&level)
            .then(|| self.details[k - level].as_slice())
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    pub fn filter(&self) -> &WaveletFilter {
        &self.filter
    }

    /// Flattened `[approx, details...]`, handy for coefficient-wise comparisons.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.approx.clone();
        for d in &self.details {
            out.extend_from_slice(d);
        }
        out
    }

    /// Full inverse transform keeping only the detail levels for which
    /// `keep(level)` is true.
    pub fn synthesize_with(&self, keep: impl Fn(usize) -> bool) -> Result<Vec<f64>> {
        let k = self.levels();
        let mut current = self.approx.clone();
        for level in (1..=k).rev() {
            let out_len = self.lengths[level - 1];
            let detail = &self.details[k - level];
            current = if keep(level) {
                idwt_step(&current, detail, &self.filter, self.padding, out_len)?
            } else {
                let zeros = vec![0.0; detail.len()];
                idwt_step(&current, &zeros, &self.filter, self.padding, out_len)?
            };
        }
        Ok(current)
    }
}

/// Multi-level decomposition of `signal` into `k` levels.
pub fn decompose(signal: &[f64], filter: &WaveletFilter, k: usize) -> Result<WaveletCoefficients> {
    let max = max_level(signal.len());
    if k == 0 || k > max {
        return Err(Error::LevelOutOfRange {
            level: k,
            len: signal.len(),
            max,
        });
    }
    let padding = Padding::Symmetric;
    let mut lengths = Vec::with_capacity(k);
    let mut details = Vec::with_capacity(k);
    let mut current = signal.to_vec();
    for _ in 0..k {
        lengths.push(current.len());
        let (approx, detail) = dwt_step(&current, filter, padding)?;
        details.push(detail);
        current = approx;
    }
    details.reverse();
    Ok(WaveletCoefficients {
        filter: filter.clone(),
        padding,
        original_length: signal.len(),
        lengths,
        approx: current,
        details,
    })
}

/// Level-j reconstruction `R_j`: details of levels `j..=k` plus the level-k
/// approximation, with details `1..j` zeroed.
pub fn reconstruct_level(coeffs: &WaveletCoefficients, j: usize) -> Result<Vec<f64>> {
    let k = coeffs.levels();
    if j == 0 || j > k {
        return Err(Error::ReconstructionLevel { j, k });
    }
    coeffs.synthesize_with(|level| level >= j)
}

/// The reconstructions `R_1..R_k` of one sliding window, each `sw x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleWindow {
    pub window_start: usize,
    pub sw: usize,
    pub reconstructions: Vec<Array2<f64>>,
    pub labels: Vec<u8>,
}

impl MultiScaleWindow {
    pub fn levels(&self) -> usize {
        self.reconstructions.len()
    }

    /// Reconstruction of level `j` (1-based).
    pub fn level(&self, j: usize) -> &Array2<f64> {
        &self.reconstructions[j - 1]
    }

    pub fn anomaly_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().map(|&l| l as f64).sum::<f64>() / self.labels.len() as f64
    }
}

/// Start offsets of every full window.
pub fn window_offsets(records: usize, sw: usize, stride: usize) -> Vec<usize> {
    if sw == 0 || stride == 0 || sw > records {
        return Vec::new();
    }
    (0..=records - sw).step_by(stride).collect()
}

/// Records after the last full window, excluded from scoring.
pub fn trailing_records(records: usize, sw: usize, stride: usize) -> usize {
    window_offsets(records, sw, stride)
        .last()
        .map_or(records, |&start| records - (start + sw))
}

fn multiscale_matrix(window: ndarray::ArrayView2<f64>, k: usize, filter: &WaveletFilter) -> Result<Vec<Array2<f64>>> {
    let (rows, cols) = window.dim();
    let mut out = vec![Array2::zeros((rows, cols)); k];
    for (c, column) in window.axis_iter(Axis(1)).enumerate() {
        let signal = column.to_vec();
        let coeffs = decompose(&signal, filter, k)?;
        for (j, target) in out.iter_mut().enumerate() {
            let rec = reconstruct_level(&coeffs, j + 1)?;
            target.column_mut(c).assign(&ndarray::ArrayView1::from(&rec));
        }
    }
    Ok(out)
}

/// Slides a window of `sw` records over `matrix` and computes the k-level
/// reconstructions of each feature column inside every window.
pub fn window_multiscale(
    matrix: &FeatureMatrix,
    sw: usize,
    stride: usize,
    k: usize,
    filter: &WaveletFilter,
) -> Result<Vec<MultiScaleWindow>> {
    let records = matrix.len();
    if sw > records {
        return Err(Error::WindowTooLarge { sw, records });
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("window stride must be positive".into()));
    }
    let max = max_level(sw);
    if k == 0 || k > max {
        return Err(Error::LevelOutOfRange { level: k, len: sw, max });
    }
    window_offsets(records, sw, stride)
        .into_par_iter()
        .map(|start| {
            let view = matrix.rows.slice(ndarray::s![start..start + sw, ..]);
            Ok(MultiScaleWindow {
                window_start: start,
                sw,
                reconstructions: multiscale_matrix(view, k, filter)?,
                labels: matrix.labels[start..start + sw].to_vec(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const S2: f64 = std::f64::consts::SQRT_2;

    fn random_signal(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() < tol, "index {i}: {x} vs {y}");
        }
    }

    #[test]
    fn haar_coefficients() {
        let f = make_filter("haar").unwrap();
        assert_close(f.low_pass(), &[1.0 / S2, 1.0 / S2], 1e-15);
    }

    #[test]
    fn db3_matches_published_table() {
        // Standard Daubechies-3 scaling coefficients.
        let table = [
            0.3326705529509569,
            0.8068915093133388,
            0.4598775021193313,
            -0.13501102001039084,
            -0.08544127388224149,
            0.035226291882100656,
        ];
        let f = make_filter("db3").unwrap();
        assert_close(f.low_pass(), &table, 1e-11);
    }

    #[test]
    fn unknown_filter_lists_supported() {
        let err = make_filter("sym9").unwrap_err().to_string();
        assert!(err.contains("sym9") && err.contains("db3"), "{err}");
    }

    #[test]
    fn haar_constant_signal() {
        let f = make_filter("haar").unwrap();
        let (a, d) = dwt_step(&[1.0; 4], &f, Padding::Symmetric).unwrap();
        assert_close(&a, &[S2, S2], 1e-12);
        assert_close(&d, &[0.0, 0.0], 1e-12);
    }

    #[test]
    fn haar_alternating_signal() {
        let f = make_filter("haar").unwrap();
        let (a, d) = dwt_step(&[1.0, -1.0, 1.0, -1.0], &f, Padding::Symmetric).unwrap();
        assert_close(&a, &[0.0, 0.0], 1e-12);
        assert_close(&d, &[S2, S2], 1e-12);
    }

    #[test]
    fn db3_step_inverts() {
        let f = make_filter("db3").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_signal(&mut rng, 16);
        let (a, d) = dwt_step(&x, &f, Padding::Symmetric).unwrap();
        let back = idwt_step(&a, &d, &f, Padding::Symmetric, 16).unwrap();
        assert_close(&back, &x, 1e-9);
    }

    #[test]
    fn too_short_signal() {
        let f = make_filter("haar").unwrap();
        let err = dwt_step(&[1.0], &f, Padding::Symmetric).unwrap_err();
        assert!(matches!(err, Error::SignalTooShort { min: 2, .. }));
    }

    #[test]
    fn constant_signal_three_levels() {
        let f = make_filter("haar").unwrap();
        let c = decompose(&[2.5; 8], &f, 3).unwrap();
        assert_eq!(c.levels(), 3);
        for d in c.details() {
            assert!(d.iter().all(|v| v.abs() < 1e-12));
        }
        assert_close(c.approx(), &[8f64.sqrt() * 2.5], 1e-12);
    }

    #[test]
    fn six_levels_of_800() {
        let f = make_filter("db3").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = decompose(&random_signal(&mut rng, 800), &f, 6).unwrap();
        assert_eq!(c.details().len(), 6);
        assert!(c.detail(6).is_some() && c.detail(7).is_none());
    }

    #[test]
    fn level_bound() {
        let f = make_filter("haar").unwrap();
        let err = decompose(&[0.0; 8], &f, 4).unwrap_err();
        assert!(matches!(err, Error::LevelOutOfRange { max: 3, .. }));
        assert!(err.to_string().contains("floor(log2(8))"));
        assert!(decompose(&[0.0; 8], &f, 0).is_err());
    }

    #[test]
    fn reconstruction_level_bounds() {
        let f = make_filter("db2").unwrap();
        let c = decompose(&[1.0; 16], &f, 2).unwrap();
        assert!(reconstruct_level(&c, 0).is_err());
        assert!(reconstruct_level(&c, 3).is_err());
        for j in 1..=2 {
            assert_close(&reconstruct_level(&c, j).unwrap(), &[1.0; 16], 1e-10);
        }
    }

    /// Independent per-level inverse: explicit upsample-and-convolve with
    /// the reconstruction filters, written without the adjoint scatter.
    fn oracle_inverse(
        approx: &[f64],
        detail: &[f64],
        h: &[f64],
        g: &[f64],
        out_len: usize,
    ) -> Vec<f64> {
        let taps = h.len();
        // upsample by 2: coefficient n lands at position 2n
        let mut up_a = vec![0.0; 2 * approx.len()];
        let mut up_d = vec![0.0; 2 * detail.len()];
        for n in 0..approx.len() {
            up_a[2 * n] = approx[n];
            up_d[2 * n] = detail[n];
        }
        // x[m] = sum_p up[p] * filt[m - p + (taps - 2)]
        (0..out_len)
            .map(|m| {
                let mut s = 0.0;
                for p in 0..up_a.len() {
                    let idx = m as isize - p as isize + taps as isize - 2;
                    if idx >= 0 && (idx as usize) < taps {
                        s += up_a[p] * h[idx as usize] + up_d[p] * g[idx as usize];
                    }
                }
                s
            })
            .collect()
    }

    #[test]
    fn partial_reconstruction_matches_oracle() {
        let f = make_filter("db3").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let x = random_signal(&mut rng, 64);
        let c = decompose(&x, &f, 4).unwrap();

        // zero c_h^1 and c_h^2, then invert level by level
        let mut lengths = vec![x.len()];
        for _ in 0..3 {
            lengths.push(coefficient_len(*lengths.last().unwrap(), f.len()));
        }
        let mut current = c.approx().to_vec();
        for level in (1..=4).rev() {
            let detail: Vec<f64> = if level <= 2 {
                vec![0.0; c.detail(level).unwrap().len()]
            } else {
                c.detail(level).unwrap().to_vec()
            };
            current = oracle_inverse(&current, &detail, f.low_pass(), f.high_pass(), lengths[level - 1]);
        }
        assert_close(&reconstruct_level(&c, 3).unwrap(), &current, 1e-12);
    }

    #[test]
    fn trailing_window_accounting() {
        assert_eq!(window_offsets(1600, 800, 800), vec![0, 800]);
        assert_eq!(trailing_records(1700, 800, 800), 100);
        assert_eq!(trailing_records(10, 4, 2), 0);
        assert_eq!(trailing_records(3, 4, 2), 3);
    }
}
