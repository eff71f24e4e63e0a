use msrc::eval::{confusion, kfold_split, metrics, roc_auc, ConfusionMatrix};
use proptest::prelude::*;

fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn scored_sample() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..=200).prop_flat_map(|n| {
        let coarse = prop::collection::vec((0u8..6).prop_map(|v| v as f64 / 5.0), n);
        let fine = prop::collection::vec(0.0f64..1.0, n);
        let scores = prop_oneof![coarse, fine];
        let labels = prop::collection::vec(0u8..2, n).prop_map(|mut l| {
            // guarantee both classes
            l[0] = 1;
            let last = l.len() - 1;
            l[last] = 0;
            l
        });
        (scores, labels)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn metrics_match_hand_formulas(tp in 0u64..500, fn_ in 0u64..500, fp in 0u64..500, tn in 0u64..500) {
        let cm = ConfusionMatrix { tp, fn_, fp, tn };
        prop_assume!(cm.total() > 0);
        let m = metrics(&cm).unwrap();
        let (tp, fn_, fp, tn) = (tp as f64, fn_ as f64, fp as f64, tn as f64);
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        prop_assert_eq!(m.accuracy, (tp + tn) / (tp + tn + fp + fn_));
        prop_assert_eq!(m.precision, p);
        prop_assert_eq!(m.recall, r);
        prop_assert_eq!(m.fpr, if fp + tn > 0.0 { fp / (fp + tn) } else { 0.0 });
        if p + r > 0.0 {
            prop_assert_eq!(m.f1, 2.0 * p * r / (p + r));
            prop_assert!((m.f1 - 2.0 * tp / (2.0 * tp + fp + fn_)).abs() < 1e-12);
        } else {
            prop_assert_eq!(m.f1, 0.0);
            prop_assert!(m.undefined.f1);
        }
        for v in [m.accuracy, m.precision, m.recall, m.f1, m.fpr] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn accuracy_from_raw_predictions(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..300)) {
        let (labels, preds): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let cm = confusion(&labels, &preds).unwrap();
        let correct = labels.iter().zip(&preds).filter(|(a, b)| a == b).count();
        prop_assert_eq!(cm.total() as usize, labels.len());
        prop_assert_eq!(metrics(&cm).unwrap().accuracy, correct as f64 / labels.len() as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn auc_equals_pairwise_statistic((scores, labels) in scored_sample()) {
        let (roc, auc) = roc_auc(&scores, &labels).unwrap();
        prop_assert!((auc - pairwise_auc(&scores, &labels)).abs() < 1e-9);
        prop_assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        let last = roc.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        prop_assert!(roc.windows(2).all(|w| w[0].fpr <= w[1].fpr));
    }

    #[test]
    fn every_window_is_held_out_once(fractions in prop::collection::vec(0.0f64..1.0, 2..120), k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= fractions.len());
        let folds = kfold_split(&fractions, k, seed).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..fractions.len()).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
