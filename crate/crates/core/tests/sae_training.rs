use msrc::nn::gradcheck::{compare_with_finite_differences, grad_check};
use msrc::nn::{Layer, Mode};
use msrc::sae::{StackedAutoencoder, TrainConfig};
use msrc::synthetic::{two_clusters, TwoClusterSpec};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normal_rows(m: &msrc::ingest::FeatureMatrix) -> Array2<f64> {
    let idx: Vec<usize> = (0..m.len()).filter(|&i| m.labels[i] == 0).collect();
    m.rows.select(Axis(0), &idx)
}

#[test]
fn repeated_point_is_fitted() {
    let point = Array1::from(vec![0.2, 0.7, 0.4, 0.9]);
    let rows = Array2::from_shape_fn((100, 4), |(_, j)| point[j]);
    let mut sae = StackedAutoencoder::new(&[4, 3, 2], 11).unwrap();
    let cfg = TrainConfig { epochs: 500, lr: 0.01, ..Default::default() };
    let history = sae.pretrain_layerwise(&rows, &[0; 100], &cfg).unwrap();
    assert_eq!(history.len(), 2);
    assert!(history.iter().all(|h| h.len() == 500));
    let ft = sae.fine_tune(&rows, &[0; 100], &cfg).unwrap();
    let mse = sae.reconstruction_loss(&rows).unwrap();
    assert!(mse < 1e-2, "final MSE {mse}, last epoch {}", ft.last().unwrap());
}

#[test]
fn full_batch_pretraining_loss_does_not_increase() {
    let data = two_clusters(&TwoClusterSpec { records: 200, ..Default::default() }, 4).unwrap();
    let rows = normal_rows(&data);
    let labels = vec![0; rows.nrows()];
    let mut sae = StackedAutoencoder::new(&[10, 7, 5], 2).unwrap();
    let cfg = TrainConfig {
        epochs: 100,
        lr: 0.05,
        batch_size: rows.nrows(),
        momentum: 0.0,
        ..Default::default()
    };
    let histories = sae.pretrain_layerwise(&rows, &labels, &cfg).unwrap();
    for (ae, h) in histories.iter().enumerate() {
        for (epoch, w) in h.windows(2).enumerate() {
            assert!(w[1] <= w[0] + 1e-6, "AE {ae} epoch {epoch}: {} -> {}", w[0], w[1]);
        }
    }
    let before = sae.reconstruction_loss(&rows).unwrap();
    sae.fine_tune(&rows, &labels, &cfg).unwrap();
    let after = sae.reconstruction_loss(&rows).unwrap();
    assert!(after <= before + 1e-9, "{before} -> {after}");
}

#[test]
fn anomalies_reconstruct_worse_than_normals() {
    let data = two_clusters(&TwoClusterSpec::default(), 7).unwrap();
    let rows = normal_rows(&data);
    let mut sae = StackedAutoencoder::new(&msrc::sae::scaled_dims(10), 5).unwrap();
    let cfg = TrainConfig { epochs: 30, ..Default::default() };
    sae.pretrain_layerwise(&rows, &vec![0; rows.nrows()], &cfg).unwrap();
    sae.fine_tune(&rows, &vec![0; rows.nrows()], &cfg).unwrap();
    let errors = sae.reconstruction_errors(&data.rows).unwrap();
    let (mut sums, mut counts) = ([0.0; 2], [0usize; 2]);
    for (row, &l) in errors.rows().into_iter().zip(&data.labels) {
        sums[l as usize] += row.sum();
        counts[l as usize] += 1;
    }
    let normal = sums[0] / counts[0] as f64;
    let anomaly = sums[1] / counts[1] as f64;
    assert!(anomaly >= 1.5 * normal, "normal {normal}, anomaly {anomaly}");
}

#[test]
fn reconstruction_input_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sae = StackedAutoencoder::new(&[6, 4, 3], seed).unwrap();
        let x = Array2::from_shape_fn((3, 6), |_| rng.random_range(0.0..1.0));
        // loss = ||x - reconstruct(x)||^2
        let loss = |sae: &StackedAutoencoder, x: &Array2<f64>| {
            let r = sae.reconstruct(x).unwrap();
            (x - &r).mapv(|v| v * v).sum()
        };
        let rec = sae.forward(&x.clone().into_dyn(), Mode::Eval).unwrap();
        let upstream = (&rec - &x.clone().into_dyn()) * 2.0;
        let through = sae.backward(&upstream).unwrap();
        // direct dependence of the loss on x
        let analytic: Vec<f64> = (&through - &upstream).iter().copied().collect();
        let report = compare_with_finite_differences(
            &analytic,
            |i, delta| {
                let mut xp = x.clone();
                *xp.iter_mut().nth(i).unwrap() += delta;
                Ok(loss(&sae, &xp))
            },
            |i| format!("input {i}"),
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "seed {seed}: {report}");
    }
}

#[test]
fn training_is_deterministic() {
    let data = two_clusters(&TwoClusterSpec { records: 300, ..Default::default() }, 1).unwrap();
    let rows = normal_rows(&data);
    let labels = vec![0; rows.nrows()];
    let cfg = TrainConfig { epochs: 3, seed: 9, ..Default::default() };
    let run = || {
        let mut sae = StackedAutoencoder::new(&[10, 6, 4], 3).unwrap();
        sae.pretrain_layerwise(&rows, &labels, &cfg).unwrap();
        sae.fine_tune(&rows, &labels, &cfg).unwrap();
        sae.reconstruct(&data.rows).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn parameter_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let mut sae = StackedAutoencoder::new(&[6, 4, 3], seed).unwrap();
        // nonzero biases keep pre-activations off the ReLU kink when a whole
        // hidden row is inactive
        for p in sae.params_mut() {
            p.value.mapv_inplace(|v| v + rng.random_range(-0.2..0.2));
        }
        let x = Array2::from_shape_fn((3, 6), |_| rng.random_range(0.0..1.0)).into_dyn();
        let report = grad_check(&mut sae, &x, Mode::Train, 1e-4, seed).unwrap();
        assert!(report.passed(), "seed {seed}: {report}");
    }
}
