mod support;

use ndarray::{Array1, Array2};
use phonoguard_core::head::{
    entropy_bits, expected_calibration_error, mc_predict, mc_predict_batch, mc_predict_keyed,
    read_predictions, train, uncertainty_summary, write_predictions, DropoutMlp, Masks,
    McPredictive, PredictionRecord, TrainConfig, UncertaintySummary,
};
use phonoguard_core::rng::stream;
use phonoguard_core::Label;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(rng: &mut ChaCha8Rng, dropout: f64) -> DropoutMlp {
    let mut widths = vec![rng.random_range(1..5)];
    for _ in 0..rng.random_range(1..3) {
        widths.push(rng.random_range(2..7));
    }
    widths.push(2);
    let mut net = DropoutMlp::new(&widths, dropout, rng).unwrap();
    // Non-zero biases move most pre-activations away from the ReLU kink.
    let flat: Vec<f64> = net
        .to_flat()
        .iter()
        .map(|w| w + rng.random_range(-0.3..0.3))
        .collect();
    net.set_flat(&flat).unwrap();
    net
}

fn flat_grad(grads: &[phonoguard_core::head::Dense]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| {
            g.weights
                .iter()
                .chain(g.bias.iter())
                .copied()
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..20 {
        let net = random_net(&mut rng, 0.3);
        let widths = net.widths();
        let rows = 5;
        let x = Array2::from_shape_fn((rows, widths[0]), |_| rng.random_range(-2.0..2.0));
        let y: Vec<usize> = (0..rows).map(|i| i % 2).collect();
        let cw = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
        let masks: Vec<Masks> = (0..rows).map(|_| net.sample_masks(&mut rng)).collect();

        let (loss, grads) = net.loss_and_grad(x.view(), &y, cw, Some(&masks));
        let analytic = flat_grad(&grads);

        let xs: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        let ms: Vec<Vec<Vec<f64>>> = masks
            .iter()
            .map(|m| m.iter().map(|a| a.to_vec()).collect())
            .collect();
        let f = |p: &[f64]| support::mlp_loss(&widths, p, &ms, &xs, &y, cw);
        let flat = net.to_flat();
        assert!((f(&flat) - loss).abs() < 1e-12);
        let numeric = support::finite_difference(f, &flat, 1e-6);

        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-8);
        assert!(
            diff / scale < 1e-4,
            "case {case}: relative error {}",
            diff / scale
        );
    }
}

#[test]
fn two_opposite_certain_passes() {
    let p = McPredictive::from_samples(vec![[1.0, 0.0], [0.0, 1.0]]);
    assert_eq!(p.total_u, 1.0);
    assert_eq!(p.aleatoric_u, 0.0);
    assert_eq!(p.epistemic_u, 1.0);
    assert_eq!(p.mean_p, [0.5, 0.5]);
}

#[test]
fn entropy_values() {
    assert_eq!(entropy_bits([0.5, 0.5]), 1.0);
    assert_eq!(entropy_bits([1.0, 0.0]), 0.0);
    let p: f64 = 0.1;
    let h = -(p * p.log2() + 0.9 * 0.9f64.log2());
    assert!((entropy_bits([0.1, 0.9]) - h).abs() < 1e-15);
}

#[test]
fn decomposition_identities_over_many_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut count = 0;
    while count < 10_000 {
        let rate = rng.random_range(0.05..0.6);
        let net = random_net(&mut rng, rate);
        let x = Array2::from_shape_fn((100, net.input_dim()), |_| rng.random_range(-3.0..3.0));
        for p in mc_predict_batch(&net, x.view(), 8, rng.random()) {
            assert!(p.total_u >= p.aleatoric_u);
            assert!(p.epistemic_u >= 0.0);
            assert!((p.total_u - p.aleatoric_u - p.epistemic_u).abs() < 1e-12);
            assert!(p.total_u <= 1.0 + 1e-12);
            count += 1;
        }
    }
}

#[test]
fn matches_entropy_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..500 {
        let n = rng.random_range(2..20);
        let samples: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let g: f64 = rng.random_range(0.0..1.0);
                [g, 1.0 - g]
            })
            .collect();
        let mean = samples.iter().map(|s| s[0]).sum::<f64>() / n as f64;
        let total = support::entropy_bits(mean);
        let aleatoric = samples
            .iter()
            .map(|s| support::entropy_bits(s[0]))
            .sum::<f64>()
            / n as f64;
        let p = McPredictive::from_samples(samples);
        assert!((p.total_u - total).abs() < 1e-12);
        assert!((p.aleatoric_u - aleatoric).abs() < 1e-12);
    }
}

#[test]
fn zero_dropout_has_no_epistemic_uncertainty() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let net = random_net(&mut rng, 0.0);
        let x = Array2::from_shape_fn((30, net.input_dim()), |_| rng.random_range(-3.0..3.0));
        for p in mc_predict_batch(&net, x.view(), 25, 1) {
            assert_eq!(p.epistemic_u, 0.0);
            assert_eq!(p.total_u, p.aleatoric_u);
        }
    }
}

#[test]
fn single_pass_has_no_epistemic_uncertainty() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = random_net(&mut rng, 0.5);
    let p = mc_predict(&net, Array1::from(vec![0.3; net.input_dim()]).view(), 1, 0);
    assert_eq!(p.epistemic_u, 0.0);
}

#[test]
fn keyed_predictions_ignore_batch_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let net = random_net(&mut rng, 0.3);
    let x = Array2::from_shape_fn((6, net.input_dim()), |_| rng.random_range(-1.0..1.0));
    let keys: Vec<u64> = (100..106).collect();
    let all = mc_predict_keyed(&net, x.view(), &keys, 10, 3).unwrap();
    let rows = [4usize, 1];
    let sub = x.select(ndarray::Axis(0), &rows);
    let part = mc_predict_keyed(&net, sub.view(), &[keys[4], keys[1]], 10, 3).unwrap();
    assert_eq!(part[0], all[4]);
    assert_eq!(part[1], all[1]);
    assert!(mc_predict_keyed(&net, x.view(), &keys[..2], 10, 3).is_err());
}

#[test]
fn separable_toy_problem_is_learned() {
    // Genuine rows on one side of the line x0 + x1 = 0, deepfakes on the other.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 200;
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let label = usize::from(a + b < 0.0);
        let shift = if label == 0 { 0.2 } else { -0.2 };
        x[[i, 0]] = a + shift;
        x[[i, 1]] = b + shift;
        y.push(label);
    }
    let cfg = TrainConfig {
        epochs: 80,
        hidden: vec![8],
        dropout_rate: 0.1,
        ..TrainConfig::default()
    };
    let (net, report) = train(x.view(), &y, &cfg).unwrap();
    assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
    let correct = x
        .rows()
        .into_iter()
        .zip(&y)
        .filter(|(r, &t)| {
            let p = net.predict_proba(*r);
            usize::from(p[1] > p[0]) == t
        })
        .count();
    assert!(correct as f64 / n as f64 > 0.95, "accuracy {correct}/{n}");
}

#[test]
fn training_is_deterministic() {
    let x = Array2::from_shape_fn((20, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
    let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
    let cfg = TrainConfig {
        epochs: 5,
        hidden: vec![4],
        ..TrainConfig::default()
    };
    assert_eq!(
        train(x.view(), &y, &cfg).unwrap().0,
        train(x.view(), &y, &cfg).unwrap().0
    );
    assert!(train(x.view(), &[0; 20], &cfg).is_err());
}

#[test]
fn ece_matches_hand_binning() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let n = rng.random_range(1..80);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let genuine: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let preds: Vec<McPredictive> = p
            .iter()
            .map(|&g| McPredictive::from_samples(vec![[g, 1.0 - g]]))
            .collect();
        let labels: Vec<Label> = genuine
            .iter()
            .map(|&g| if g { Label::Genuine } else { Label::Deepfake })
            .collect();
        let ece = expected_calibration_error(&preds, &labels).unwrap();
        assert!((ece - support::ece(&p, &genuine)).abs() < 1e-12);
    }
}

#[test]
fn model_and_prediction_files_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let net = random_net(&mut rng, 0.25);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mlp");
    net.save(&path).unwrap();
    assert_eq!(DropoutMlp::load(&path).unwrap(), net.quantized());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.push(0);
    std::fs::write(&path, &bytes).unwrap();
    assert!(DropoutMlp::load(&path).is_err());

    let recs = vec![
        PredictionRecord::new(
            "a",
            Label::Genuine,
            &McPredictive::from_samples(vec![[0.7, 0.3], [0.6, 0.4]]),
        ),
        PredictionRecord::new(
            "b",
            Label::Unknown,
            &McPredictive::from_samples(vec![[0.1, 0.9]]),
        ),
    ];
    let mut buf = Vec::new();
    write_predictions(&mut buf, &recs).unwrap();
    assert_eq!(read_predictions(buf.as_slice()).unwrap(), recs);
}

proptest! {
    #[test]
    fn masks_are_inverted_dropout(seed in any::<u64>(), p in 0.05f64..0.9) {
        let mut rng = stream(seed, "t");
        let net = DropoutMlp::new(&[3, 50, 40, 2], p, &mut rng).unwrap();
        let masks = net.sample_masks(&mut rng);
        prop_assert_eq!(masks.len(), 2);
        let keep = 1.0 / (1.0 - p);
        for m in &masks {
            prop_assert!(m.iter().all(|v| *v == 0.0 || *v == keep));
        }
    }

    #[test]
    fn probabilities_sum_to_one(seed in any::<u64>(), x in prop::collection::vec(-5.0f64..5.0, 4)) {
        let net = DropoutMlp::new(&[4, 6, 2], 0.2, &mut stream(seed, "t")).unwrap();
        let p = mc_predict(&net, Array1::from(x).view(), 7, seed);
        prop_assert!((p.mean_p[0] + p.mean_p[1] - 1.0).abs() < 1e-12);
        prop_assert!(p.samples.iter().all(|s| (s[0] + s[1] - 1.0).abs() < 1e-12));
    }
}

#[test]
fn class_weighting_recovers_the_minority() {
    // 10% genuine around (+1, +1), 90% deepfake around (−1, −1), heavy overlap.
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let n = 500;
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = usize::from(i % 10 != 0);
        let c = if label == 0 { 0.6 } else { -0.6 };
        x[[i, 0]] = c + rng.random_range(-1.0..1.0);
        x[[i, 1]] = c + rng.random_range(-1.0..1.0);
        y.push(label);
    }
    let cfg = TrainConfig {
        epochs: 60,
        hidden: vec![16],
        ..TrainConfig::default()
    };
    let (net, _) = train(x.view(), &y, &cfg).unwrap();
    let minority: Vec<_> = x
        .rows()
        .into_iter()
        .zip(&y)
        .filter(|(_, &t)| t == 0)
        .collect();
    let hit = minority
        .iter()
        .filter(|(r, _)| net.predict_proba(*r)[0] > 0.5)
        .count();
    assert!(
        hit as f64 / minority.len() as f64 >= 0.8,
        "recall {hit}/{}",
        minority.len()
    );
}

#[test]
fn mc_mean_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let net = random_net(&mut rng, 0.3);
    for _ in 0..5 {
        let x = Array1::from_shape_fn(net.input_dim(), |_| rng.random_range(-1.0..1.0));
        let a = mc_predict(&net, x.view(), 1_000, 1);
        let b = mc_predict(&net, x.view(), 10_000, 2);
        assert!((a.mean_p[0] - b.mean_p[0]).abs() <= 0.02);
    }
}

#[test]
fn more_dropout_means_more_epistemic_uncertainty() {
    let mut rng = stream(32, "net");
    let base = DropoutMlp::new(&[4, 32, 16, 2], 0.05, &mut rng).unwrap();
    let x = Array2::from_shape_fn((120, 4), |_| rng.random_range(-2.0..2.0));
    let mean_epistemic = |p: f64| {
        let net = base.with_dropout_rate(p).unwrap();
        let preds = mc_predict_batch(&net, x.view(), 100, 5);
        preds.iter().map(|q| q.epistemic_u).sum::<f64>() / preds.len() as f64
    };
    let low = mean_epistemic(0.05);
    let high = mean_epistemic(0.5);
    assert!(high > low, "{high} vs {low}");
}

#[test]
fn ece_extremes() {
    let labels = [
        Label::Genuine,
        Label::Deepfake,
        Label::Genuine,
        Label::Deepfake,
    ];
    let certain: Vec<_> = labels
        .iter()
        .map(|l| {
            McPredictive::from_samples(vec![if *l == Label::Genuine {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            }])
        })
        .collect();
    assert_eq!(expected_calibration_error(&certain, &labels).unwrap(), 0.0);

    // Confidence 1.0 everywhere, half of it wrong.
    let half: Vec<_> = (0..4)
        .map(|_| McPredictive::from_samples(vec![[1.0, 0.0]]))
        .collect();
    assert!((expected_calibration_error(&half, &labels).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn uncertainty_gap() {
    let s = UncertaintySummary::from_means(0.430, 0.490, 10, 10);
    assert!((s.relative_gap - 0.1395).abs() < 5e-5);
    let p = |g: f64| McPredictive::from_samples(vec![[g, 1.0 - g]]);
    let preds = [p(0.2), p(0.2), p(0.2)];
    let labels = [Label::Genuine, Label::Deepfake, Label::Deepfake];
    assert_eq!(
        uncertainty_summary(&preds, &labels).unwrap().relative_gap,
        0.0
    );
}
