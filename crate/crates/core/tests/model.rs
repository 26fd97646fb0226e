mod common;

use approx::assert_relative_eq;
use fedprio::data::{ClientDataset, Sample};
use fedprio::model::{
    accuracy, init_model, local_update, loss_and_gradient, mean_loss, model_l2_distance, Activation, ModelSpec,
    ParameterVector, TrainingConfig,
};
use fedprio::Error;
use rand::Rng;

use common::rng;

fn blobs(n: usize, dim: usize, classes: usize, seed: u64) -> Vec<Sample> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let label = i % classes;
            let features = (0..dim)
                .map(|j| if j % classes == label { 1.0 } else { 0.0 } + r.random_range(-0.3..0.3))
                .collect();
            Sample { features, label }
        })
        .collect()
}

fn finite_difference(spec: &ModelSpec, w: &ParameterVector, batch: &[Sample], h: f64) -> Vec<f64> {
    (0..w.len())
        .map(|i| {
            let mut up = w.clone();
            up.as_mut_slice()[i] += h;
            let mut down = w.clone();
            down.as_mut_slice()[i] -= h;
            (mean_loss(spec, &up, batch).unwrap() - mean_loss(spec, &down, batch).unwrap()) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb)
}

#[test]
fn backprop_matches_finite_differences_on_deeper_tanh_net() {
    let spec = ModelSpec::mlp(4, vec![5, 3], 3, Activation::Tanh);
    let mut r = rng(11);
    let w = ParameterVector::new((0..spec.parameter_count()).map(|_| r.random_range(-0.7..0.7)).collect());
    let batch = blobs(12, 4, 3, 4);
    let (_, grad) = loss_and_gradient(&spec, &w, &batch).unwrap();
    let fd = finite_difference(&spec, &w, &batch, 1e-5);
    assert!(relative_error(&grad, &fd) < 1e-6);
}

#[test]
fn sgd_step_equals_minus_eta_gradient() {
    let spec = ModelSpec::mlp(3, vec![3], 2, Activation::Tanh);
    assert_eq!(spec.parameter_count(), 20);
    let w = init_model(&spec, 3).unwrap();
    let batch = blobs(10, 3, 2, 8);
    let data = ClientDataset {
        client_id: "a".into(),
        train: batch.clone(),
        test: Vec::new(),
    };
    let cfg = TrainingConfig {
        learning_rate: 0.1,
        local_epochs: 1,
        batch_size: 10,
        rng_seed: 0,
    };
    let next = local_update(&spec, &w, &data, &cfg).unwrap();
    let (_, grad) = loss_and_gradient(&spec, &w, &batch).unwrap();
    for ((a, b), g) in w.as_slice().iter().zip(next.as_slice()).zip(&grad) {
        assert_relative_eq!(a - 0.1 * g, *b, epsilon = 1e-14);
    }
}

#[test]
fn softmax_regression_loss_decreases_with_small_steps() {
    let spec = ModelSpec::mlp(5, vec![], 3, Activation::Relu);
    let batch = blobs(30, 5, 3, 2);
    let max_sq = batch
        .iter()
        .map(|s| s.features.iter().map(|x| x * x).sum::<f64>() + 1.0)
        .fold(0.0, f64::max);
    let data = ClientDataset {
        client_id: "a".into(),
        train: batch.clone(),
        test: Vec::new(),
    };
    let cfg = TrainingConfig {
        learning_rate: 1.0 / max_sq,
        local_epochs: 1,
        batch_size: 30,
        rng_seed: 0,
    };
    let mut w = init_model(&spec, 1).unwrap();
    let mut loss = mean_loss(&spec, &w, &batch).unwrap();
    for _ in 0..50 {
        w = local_update(&spec, &w, &data, &cfg).unwrap();
        let next = mean_loss(&spec, &w, &batch).unwrap();
        assert!(next <= loss + 1e-15, "loss rose from {loss} to {next}");
        loss = next;
    }
    assert!(loss < 3f64.ln());
}

#[test]
fn random_models_score_about_half_on_two_classes() {
    let spec = ModelSpec::mlp(4, vec![6], 2, Activation::Relu);
    let mut r = rng(17);
    let samples: Vec<Sample> = (0..400)
        .map(|_| Sample {
            features: (0..4).map(|_| r.random_range(-1.0..1.0)).collect(),
            label: r.random_range(0..2),
        })
        .collect();
    let trials = 200;
    let mean: f64 = (0..trials)
        .map(|t| accuracy(&spec, &init_model(&spec, t).unwrap(), &samples).unwrap())
        .sum::<f64>()
        / trials as f64;
    assert!((mean - 0.5).abs() < 0.05, "mean accuracy {mean}");
}

#[test]
fn training_learns_separable_blobs() {
    let spec = ModelSpec::mlp(6, vec![8], 3, Activation::Relu);
    let train = blobs(90, 6, 3, 5);
    let test = blobs(30, 6, 3, 6);
    let data = ClientDataset {
        client_id: "a".into(),
        train,
        test: test.clone(),
    };
    let cfg = TrainingConfig {
        learning_rate: 0.1,
        local_epochs: 30,
        batch_size: 10,
        rng_seed: 4,
    };
    let w = local_update(&spec, &init_model(&spec, 0).unwrap(), &data, &cfg).unwrap();
    assert!(accuracy(&spec, &w, &test).unwrap() > 0.9);
}

#[test]
fn cnn_counts_parameters_but_does_not_train() {
    let spec = ModelSpec::femnist_cnn();
    assert_eq!(spec.parameter_count(), 6_603_710);
    let w = ParameterVector::zeros(spec.parameter_count());
    let data = ClientDataset {
        client_id: "a".into(),
        train: vec![Sample {
            features: vec![0.0; 784],
            label: 0,
        }],
        test: Vec::new(),
    };
    let err = local_update(&spec, &w, &data, &TrainingConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)), "{err}");
}

#[test]
fn distance_rejects_mismatched_lengths() {
    let a = ParameterVector::zeros(3);
    let b = ParameterVector::zeros(4);
    assert!(matches!(model_l2_distance(&a, &b), Err(Error::Dimension { .. })));
    assert_eq!(model_l2_distance(&a, &a).unwrap(), 0.0);
}

#[test]
fn local_update_is_deterministic_per_seed() {
    let spec = ModelSpec::mlp(6, vec![4], 3, Activation::Relu);
    let data = ClientDataset {
        client_id: "a".into(),
        train: blobs(23, 6, 3, 1),
        test: Vec::new(),
    };
    let w = init_model(&spec, 2).unwrap();
    let cfg = TrainingConfig {
        learning_rate: 0.05,
        local_epochs: 3,
        batch_size: 5,
        rng_seed: 9,
    };
    let a = local_update(&spec, &w, &data, &cfg).unwrap();
    assert_eq!(a, local_update(&spec, &w, &data, &cfg).unwrap());
    assert_ne!(a, local_update(&spec, &w, &data, &cfg.with_seed(10)).unwrap());
}
