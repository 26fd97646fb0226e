#![allow(dead_code)]

use fedprio::data::{synth_noniid, ClientDataset, FederatedDataset, Sample, SynthConfig};
use fedprio::model::{Activation, ModelSpec, TrainingConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sample(features: Vec<f64>, label: usize) -> Sample {
    Sample { features, label }
}

/// A client whose train set has `train` samples with labels cycling
/// through `labels`, and a test set of `test` samples.
pub fn client(id: &str, train: usize, test: usize, labels: &[usize], dim: usize, r: &mut ChaCha8Rng) -> ClientDataset {
    let mk = |n: usize, r: &mut ChaCha8Rng| {
        (0..n)
            .map(|i| sample((0..dim).map(|_| r.random::<f64>()).collect(), labels[i % labels.len()]))
            .collect()
    };
    ClientDataset {
        client_id: id.to_owned(),
        train: mk(train, r),
        test: mk(test, r),
    }
}

pub fn small_synth(seed: u64, clients: usize) -> FederatedDataset {
    synth_noniid(&SynthConfig {
        class_count: 4,
        feature_dim: 6,
        client_count: clients,
        samples_per_client: [12, 30],
        labels_per_client: [1, 3],
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

pub fn small_spec(ds: &FederatedDataset) -> ModelSpec {
    ModelSpec::mlp(ds.feature_dim(), vec![8], ds.class_count(), Activation::Relu)
}

pub fn quick_training() -> TrainingConfig {
    TrainingConfig {
        learning_rate: 0.05,
        local_epochs: 1,
        batch_size: 5,
        rng_seed: 0,
    }
}

/// Random simplex-free vector in [0, 1] with occasional exact zeros.
pub fn unit_values(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| if r.random_bool(0.1) { 0.0 } else { r.random::<f64>() })
        .collect()
}
