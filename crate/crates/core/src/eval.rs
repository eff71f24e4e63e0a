//! Binary classification metrics, ROC/AUC and window-level k-fold
//! cross-validation. Positive means anomalous.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::shape(&[labels.len()], &[predictions.len()]));
    }
    let mut cm = ConfusionMatrix::default();
    for (i, (&l, &p)) in labels.iter().zip(predictions).enumerate() {
        match (l, p) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fn_ += 1,
            (0, 1) => cm.fp += 1,
            (0, 0) => cm.tn += 1,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "labels and predictions must be 0 or 1; entry {i} is ({l}, {p})"
                )))
            }
        }
    }
    Ok(cm)
}

/// Which ratios had a zero denominator and were reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UndefinedFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
    pub fpr: bool,
}

impl UndefinedFlags {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1 || self.fpr
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub undefined: UndefinedFlags,
}

fn ratio(num: f64, den: f64, flag: &mut bool) -> f64 {
    if den == 0.0 {
        *flag = true;
        0.0
    } else {
        num / den
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    if cm.total() == 0 {
        return Err(Error::InvalidArgument("metrics of an empty confusion matrix".into()));
    }
    let (tp, fn_, fp, tn) = (cm.tp as f64, cm.fn_ as f64, cm.fp as f64, cm.tn as f64);
    let mut undefined = UndefinedFlags::default();
    let precision = ratio(tp, tp + fp, &mut undefined.precision);
    let recall = ratio(tp, tp + fn_, &mut undefined.recall);
    let f1 = ratio(2.0 * precision * recall, precision + recall, &mut undefined.f1);
    let fpr = ratio(fp, fp + tn, &mut undefined.fpr);
    Ok(Metrics {
        accuracy: (tp + tn) / (tp + tn + fp + fn_),
        precision,
        recall,
        f1,
        fpr,
        undefined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` count as positive; the first point uses +inf.
    pub threshold: f64,
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(&[labels.len()], &[scores.len()]));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite {
            what: format!("score {i}"),
        });
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(Error::InvalidArgument(format!("label {i} is not binary")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "ROC needs at least one positive and one negative label".into(),
        ));
    }
    Ok((pos, neg))
}

/// ROC points over the thresholds `{+inf} ∪ distinct scores`, and the
/// trapezoidal area under them. Tied scores produce a diagonal segment, so
/// the area equals `P(s+ > s-) + P(s+ = s-) / 2`.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<(Vec<RocPoint>, f64)> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let p = RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold,
        };
        let last = points.last().unwrap();
        auc += (p.fpr - last.fpr) * (p.tpr + last.tpr) / 2.0;
        points.push(p);
    }
    Ok((points, auc))
}

/// Confusion-matrix metrics at threshold `tau` plus the ROC curve.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub records: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// `None` when the labels hold a single class.
    pub auc: Option<f64>,
    pub roc: Vec<RocPoint>,
}

pub fn evaluate(scores: &[f64], labels: &[u8], tau: f64) -> Result<MetricsReport> {
    let predictions: Vec<u8> = scores.iter().map(|&s| (s >= tau) as u8).collect();
    let cm = confusion(labels, &predictions)?;
    let m = metrics(&cm)?;
    let (roc, auc) = match roc_auc(scores, labels) {
        Ok((roc, auc)) => (roc, Some(auc)),
        Err(Error::InvalidArgument(_)) => (Vec::new(), None),
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        records: labels.len(),
        confusion: cm,
        metrics: m,
        auc,
        roc,
    })
}

/// Splits windows into `k` folds whose sizes differ by at most one.
///
/// Windows are shuffled with `seed`, stably sorted by anomaly fraction and
/// dealt round-robin, so every fold gets a similar spread of fractions.
/// Each fold lists window indices in ascending order.
pub fn kfold_split(anomaly_fractions: &[f64], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = anomaly_fractions.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k-fold with k = {k} needs at least {k} windows, have {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| anomaly_fractions[a].total_cmp(&anomaly_fractions[b]));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (i, w) in order.into_iter().enumerate() {
        folds[i % k].push(w);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Outcome of one fold: the held-out part of the training file and,
/// optionally, the separate test file.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub held_out: MetricsReport,
    pub test: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSummary {
    pub folds: Vec<FoldResult>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl CvSummary {
    /// Per-fold `[held-out accuracy, held-out AUC, test accuracy, test AUC]`;
    /// missing values are NaN.
    pub fn rows(&self) -> Vec<[f64; 4]> {
        let acc = |r: &MetricsReport| r.metrics.accuracy;
        let auc = |r: &MetricsReport| r.auc.unwrap_or(f64::NAN);
        self.folds
            .iter()
            .map(|f| {
                [
                    acc(&f.held_out),
                    auc(&f.held_out),
                    f.test.as_ref().map_or(f64::NAN, acc),
                    f.test.as_ref().map_or(f64::NAN, auc),
                ]
            })
            .collect()
    }

    /// Column means of [`CvSummary::rows`], skipping NaN entries.
    pub fn averages(&self) -> [f64; 4] {
        let rows = self.rows();
        std::array::from_fn(|c| mean(rows.iter().map(|r| r[c]).filter(|v| !v.is_nan())))
    }

    /// One row per fold and a final `average` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,train_accuracy,train_auc,test_accuracy,test_auc\n");
        let cell = |v: f64| if v.is_nan() { String::new() } else { format!("{v}") };
        for (f, row) in self.folds.iter().zip(self.rows()) {
            let cells: Vec<String> = row.iter().map(|&v| cell(v)).collect();
            writeln!(out, "{},{}", f.fold, cells.join(",")).unwrap();
        }
        let cells: Vec<String> = self.averages().iter().map(|&v| cell(v)).collect();
        writeln!(out, "average,{}", cells.join(",")).unwrap();
        out
    }
}

/// Runs `train_eval(fold, train_windows, held_out_windows)` for each of the
/// `k` folds. Folds are independent; this runner executes them in order.
pub fn run_cv(
    anomaly_fractions: &[f64],
    k: usize,
    seed: u64,
    mut train_eval: impl FnMut(usize, &[usize], &[usize]) -> Result<FoldResult>,
) -> Result<CvSummary> {
    let folds = kfold_split(anomaly_fractions, k, seed)?;
    let mut results = Vec::with_capacity(k);
    for (i, held_out) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        log::info!("fold {}/{k}: {} training windows, {} held out", i + 1, train.len(), held_out.len());
        results.push(train_eval(i + 1, &train, held_out)?);
    }
    Ok(CvSummary { folds: results })
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in points {
        writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold).unwrap();
    }
    out
}

pub fn metrics_csv(reports: &[(String, &MetricsReport)]) -> String {
    let mut out = String::from("name,records,tp,fn,fp,tn,accuracy,precision,recall,f1,fpr,auc,undefined\n");
    for (name, r) in reports {
        let m = &r.metrics;
        let c = &r.confusion;
        let flags = [
            ("precision", m.undefined.precision),
            ("recall", m.undefined.recall),
            ("f1", m.undefined.f1),
            ("fpr", m.undefined.fpr),
        ]
        .iter()
        .filter(|(_, f)| *f)
        .map(|(n, _)| *n)
        .collect::<Vec<_>>()
        .join(";");
        writeln!(
            out,
            "{name},{},{},{},{},{},{},{},{},{},{},{},{flags}",
            r.records,
            c.tp,
            c.fn_,
            c.fp,
            c.tn,
            m.accuracy,
            m.precision,
            m.recall,
            m.f1,
            m.fpr,
            r.auc.map(|a| a.to_string()).unwrap_or_default()
        )
        .unwrap();
    }
    out
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either input has no variance or fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_enumeration() {
        let cm = confusion(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, fn_: 1, fp: 1, tn: 1 });
        let perfect = confusion(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((perfect.fn_, perfect.fp), (0, 0));
        assert_eq!(confusion(&[], &[]).unwrap(), ConfusionMatrix::default());
        assert!(confusion(&[1], &[1, 0]).is_err());
        assert!(confusion(&[2], &[1]).is_err());
    }

    #[test]
    fn metric_formulas() {
        let m = metrics(&ConfusionMatrix { tp: 5, fn_: 0, fp: 5, tn: 90 }).unwrap();
        assert_eq!(m.accuracy, 0.95);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.fpr, 5.0 / 95.0);
        assert!(!m.undefined.any());
    }

    #[test]
    fn degenerate_metrics_are_flagged() {
        let m = metrics(&ConfusionMatrix { tp: 0, fn_: 3, fp: 0, tn: 7 }).unwrap();
        assert_eq!(m.precision, 0.0);
        assert!(m.undefined.precision);
        assert_eq!(m.recall, 0.0);
        assert!(!m.undefined.recall);
        let m = metrics(&ConfusionMatrix { tp: 0, fn_: 0, fp: 0, tn: 7 }).unwrap();
        assert!(m.undefined.recall && m.undefined.precision);
        assert!(metrics(&ConfusionMatrix::default()).is_err());
        let all = metrics(&ConfusionMatrix { tp: 4, fn_: 0, fp: 0, tn: 6 }).unwrap();
        assert_eq!((all.accuracy, all.f1), (1.0, 1.0));
    }

    #[test]
    fn auc_examples() {
        let (_, auc) = roc_auc(&[0.9, 0.8, 0.3, 0.2], &[1, 0, 1, 0]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
        let (_, auc) = roc_auc(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]).unwrap();
        assert_eq!(auc, 1.0);
        let (roc, auc) = roc_auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(roc.len(), 2);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.2], &[1, 0]).is_err());
    }

    #[test]
    fn roc_endpoints() {
        let (roc, _) = roc_auc(&[0.3, 0.1, 0.7, 0.7, 0.2], &[0, 1, 1, 0, 1]).unwrap();
        assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        let last = roc.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!(roc.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
    }

    #[test]
    fn folds_partition_windows() {
        let fractions: Vec<f64> = (0..100).map(|i| (i % 7) as f64 / 7.0).collect();
        let folds = kfold_split(&fractions, 10, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 10));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(folds, kfold_split(&fractions, 10, 3).unwrap());
    }

    #[test]
    fn uneven_fold_sizes() {
        let folds = kfold_split(&[0.0; 23], 5, 1).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(kfold_split(&[0.0; 3], 4, 1).is_err());
        assert!(kfold_split(&[0.0; 3], 1, 1).is_err());
    }

    #[test]
    fn stratification_balances_fractions() {
        let fractions: Vec<f64> = (0..40).map(|i| if i < 10 { 1.0 } else { 0.0 }).collect();
        for f in kfold_split(&fractions, 5, 8).unwrap() {
            assert_eq!(f.iter().filter(|&&w| fractions[w] == 1.0).count(), 2);
        }
    }

    fn report(acc_labels: (&[u8], &[u8])) -> MetricsReport {
        let scores: Vec<f64> = acc_labels.1.iter().map(|&p| p as f64).collect();
        evaluate(&scores, acc_labels.0, 0.5).unwrap()
    }

    #[test]
    fn cv_runs_each_fold_once() {
        let mut seen = Vec::new();
        let summary = run_cv(&[0.0, 0.5, 1.0, 0.2], 2, 0, |fold, train, held| {
            seen.extend_from_slice(held);
            assert_eq!(train.len() + held.len(), 4);
            let r = report((&[1, 0], &[1, fold as u8 % 2]));
            Ok(FoldResult { fold, held_out: r, test: None })
        })
        .unwrap();
        assert_eq!(summary.folds.len(), 2);
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        let rows = summary.rows();
        let avg = summary.averages();
        assert!((avg[0] - (rows[0][0] + rows[1][0]) / 2.0).abs() < 1e-12);
        assert!(avg[2].is_nan());
        let csv = summary.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().last().unwrap().starts_with("average,"));
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!(r > 0.9 && r < 1.0);
    }

    #[test]
    fn csv_layouts() {
        let (roc, _) = roc_auc(&[0.9, 0.1], &[1, 0]).unwrap();
        let csv = roc_csv(&roc);
        assert_eq!(csv.lines().nth(1).unwrap(), "0,0,inf");
        assert!(csv.lines().last().unwrap().starts_with("1,1,"));
        let r = report((&[1, 0], &[1, 0]));
        let m = metrics_csv(&[("x".into(), &r)]);
        assert_eq!(m.lines().count(), 2);
    }
}
