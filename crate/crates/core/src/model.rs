//! Flat-parameter classifiers trained with mini-batch SGD.
//!
//! Every model is a single `ParameterVector`; the `ModelSpec` says how to
//! read it. Dense layers are stored layer by layer as a row-major
//! `out x in` weight block followed by `out` biases. The output layer is a
//! softmax over `class_count` logits trained with mean cross-entropy.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, Sample};
use crate::error::{Error, Result};
use crate::seed;

/// Half-width of the uniform weight initializer.
pub const INIT_SCALE: f64 = 0.05;

/// Flat model parameters, shared by the server and every client.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParameterVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParameterVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(values: Vec<f64>) -> Self {
        ParameterVector(values)
    }
}

impl AsRef<[f64]> for ParameterVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// One convolution stage of a [`Architecture::Cnn`]: a square `kernel`
/// with "same" padding, followed by `pool x pool` max pooling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub kernel: usize,
    pub channels: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    /// Fully connected network; `hidden` may be empty (softmax regression).
    Mlp { hidden: Vec<usize>, activation: Activation },
    /// Convolutional network over square single- or multi-channel images.
    /// Only parameter layout is supported; it cannot be trained here.
    Cnn {
        image_side: usize,
        in_channels: usize,
        stages: Vec<ConvStage>,
        dense: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub class_count: usize,
    pub architecture: Architecture,
}

/// A contiguous run of parameters: `weights` entries then `biases` entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    weights: usize,
    biases: usize,
}

impl ModelSpec {
    pub fn mlp(input_dim: usize, hidden: Vec<usize>, class_count: usize, activation: Activation) -> Self {
        ModelSpec {
            input_dim,
            class_count,
            architecture: Architecture::Mlp { hidden, activation },
        }
    }

    /// The FEMNIST CNN: two 5x5 convolutions (32 and 64 channels) each
    /// followed by 2x2 max pooling, a 2048-unit dense layer and a 62-way
    /// softmax over 28x28 grayscale images.
    pub fn femnist_cnn() -> Self {
        ModelSpec {
            input_dim: 28 * 28,
            class_count: 62,
            architecture: Architecture::Cnn {
                image_side: 28,
                in_channels: 1,
                stages: vec![
                    ConvStage {
                        kernel: 5,
                        channels: 32,
                        pool: 2,
                    },
                    ConvStage {
                        kernel: 5,
                        channels: 64,
                        pool: 2,
                    },
                ],
                dense: vec![2048],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::config(format!(
                "class count must be at least 2, got {}",
                self.class_count
            )));
        }
        if self.input_dim == 0 {
            return Err(Error::config("input dimension must be positive"));
        }
        match &self.architecture {
            Architecture::Mlp { hidden, .. } => {
                if hidden.contains(&0) {
                    return Err(Error::config("hidden layer widths must be positive"));
                }
            }
            Architecture::Cnn {
                image_side,
                in_channels,
                stages,
                dense,
            } => {
                if *image_side == 0 || *in_channels == 0 {
                    return Err(Error::config("image side and channel count must be positive"));
                }
                if image_side * image_side * in_channels != self.input_dim {
                    return Err(Error::config(format!(
                        "input dimension {} does not match a {}x{}x{} image",
                        self.input_dim, image_side, image_side, in_channels
                    )));
                }
                let mut side = *image_side;
                for stage in stages {
                    if stage.kernel == 0 || stage.channels == 0 || stage.pool == 0 {
                        return Err(Error::config(
                            "convolution stages need positive kernel, channels and pool",
                        ));
                    }
                    side /= stage.pool;
                    if side == 0 {
                        return Err(Error::config("pooling reduces the feature map to nothing"));
                    }
                }
                if dense.contains(&0) {
                    return Err(Error::config("dense layer widths must be positive"));
                }
            }
        }
        Ok(())
    }

    fn blocks(&self) -> Vec<Block> {
        match &self.architecture {
            Architecture::Mlp { hidden, .. } => {
                let dims = self.mlp_dims(hidden);
                dims.windows(2)
                    .map(|w| Block {
                        weights: w[0] * w[1],
                        biases: w[1],
                    })
                    .collect()
            }
            Architecture::Cnn {
                image_side,
                in_channels,
                stages,
                dense,
            } => {
                let mut blocks = Vec::new();
                let mut side = *image_side;
                let mut channels = *in_channels;
                for stage in stages {
                    blocks.push(Block {
                        weights: stage.kernel * stage.kernel * channels * stage.channels,
                        biases: stage.channels,
                    });
                    channels = stage.channels;
                    side /= stage.pool;
                }
                let mut width = side * side * channels;
                for &units in dense.iter().chain(std::iter::once(&self.class_count)) {
                    blocks.push(Block {
                        weights: width * units,
                        biases: units,
                    });
                    width = units;
                }
                blocks
            }
        }
    }

    fn mlp_dims(&self, hidden: &[usize]) -> Vec<usize> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(hidden);
        dims.push(self.class_count);
        dims
    }

    /// Analytic parameter count `d`.
    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|b| b.weights + b.biases).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.01,
            local_epochs: 5,
            batch_size: 10,
            rng_seed: 0,
        }
    }
}

impl TrainingConfig {
    /// A zero learning rate is accepted (it makes training the identity),
    /// negative or non-finite rates are not.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("local epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        Ok(())
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        TrainingConfig {
            rng_seed,
            ..self.clone()
        }
    }
}

/// Seeded initialization: weights uniform in `[-INIT_SCALE, INIT_SCALE]`,
/// biases zero.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<ParameterVector> {
    spec.validate()?;
    let mut rng = seed::rng(seed);
    let mut values = Vec::with_capacity(spec.parameter_count());
    for block in spec.blocks() {
        values.extend((0..block.weights).map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE)));
        values.extend(std::iter::repeat_n(0.0, block.biases));
    }
    Ok(ParameterVector(values))
}

/// Euclidean norm of `a - b`.
pub fn model_l2_distance(a: &ParameterVector, b: &ParameterVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Dense network view over a parameter slice, with scratch buffers for
/// forward and backward passes.
struct Network<'a> {
    dims: Vec<usize>,
    activation: Activation,
    params: &'a [f64],
    offsets: Vec<usize>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl<'a> Network<'a> {
    fn new(spec: &ModelSpec, params: &'a [f64]) -> Result<Self> {
        let (hidden, activation) = match &spec.architecture {
            Architecture::Mlp { hidden, activation } => (hidden, *activation),
            Architecture::Cnn { .. } => {
                return Err(Error::Unsupported(
                    "convolutional models support parameter layout only".into(),
                ))
            }
        };
        let expected = spec.parameter_count();
        if params.len() != expected {
            return Err(Error::Dimension {
                expected,
                found: params.len(),
            });
        }
        let dims = spec.mlp_dims(hidden);
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for w in dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let pre = dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        let post = dims.iter().map(|&n| vec![0.0; n]).collect();
        let delta = dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Network {
            dims,
            activation,
            params,
            offsets,
            pre,
            post,
            delta,
        })
    }

    fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Runs the forward pass and leaves the logits in `pre[last]`.
    fn forward(&mut self, x: &[f64]) -> Result<&[f64]> {
        if x.len() != self.dims[0] {
            return Err(Error::Dimension {
                expected: self.dims[0],
                found: x.len(),
            });
        }
        self.post[0].copy_from_slice(x);
        let last = self.layers() - 1;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[self.offsets[l]..self.offsets[l] + n_in * n_out];
            let b = &self.params[self.offsets[l] + n_in * n_out..self.offsets[l] + n_in * n_out + n_out];
            let (inputs, outputs) = self.post.split_at_mut(l + 1);
            let input = &inputs[l];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b[o] + row.iter().zip(input.iter()).map(|(wi, xi)| wi * xi).sum::<f64>();
                self.pre[l][o] = z;
                outputs[0][o] = if l == last { z } else { self.activation.apply(z) };
            }
        }
        Ok(&self.pre[last])
    }

    /// Forward plus backward for one sample; adds d(loss)/d(params) into
    /// `grad` and returns the sample's cross-entropy loss.
    fn accumulate(&mut self, sample: &Sample, grad: &mut [f64]) -> Result<f64> {
        let class_count = *self.dims.last().expect("at least one layer");
        if sample.label >= class_count {
            return Err(Error::Validation(format!(
                "label {} out of range for {} classes",
                sample.label, class_count
            )));
        }
        self.forward(&sample.features)?;
        let last = self.layers() - 1;
        let logits = &self.pre[last];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let loss = lse - logits[sample.label];
        for (k, d) in self.delta[last].iter_mut().enumerate() {
            *d = (logits[k] - lse).exp() - if k == sample.label { 1.0 } else { 0.0 };
        }
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.offsets[l];
            let input = &self.post[l];
            let delta = &self.delta[l];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let g = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for (gi, xi) in g.iter_mut().zip(input.iter()) {
                        *gi += d * xi;
                    }
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let (lower, upper) = self.delta.split_at_mut(l);
                let prev = &mut lower[l - 1];
                let delta = &upper[0];
                for (i, p) in prev.iter_mut().enumerate() {
                    let back: f64 = (0..n_out).map(|o| w[o * n_in + i] * delta[o]).sum();
                    *p = back * self.activation.derivative(self.pre[l - 1][i], self.post[l][i]);
                }
            }
        }
        Ok(loss)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy over `batch` and its gradient.
pub fn loss_and_gradient(spec: &ModelSpec, params: &ParameterVector, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
    let mut net = Network::new(spec, params.as_slice())?;
    let mut grad = vec![0.0; params.len()];
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for sample in batch {
        loss += net.accumulate(sample, &mut grad)?;
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// Mean cross-entropy over `samples`.
pub fn mean_loss(spec: &ModelSpec, params: &ParameterVector, samples: &[Sample]) -> Result<f64> {
    let mut net = Network::new(spec, params.as_slice())?;
    let mut total = 0.0;
    for sample in samples {
        let logits = net.forward(&sample.features)?;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - logits[sample.label];
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Predicted class (argmax of the logits, lowest index on ties).
pub fn predict(spec: &ModelSpec, params: &ParameterVector, features: &[f64]) -> Result<usize> {
    let mut net = Network::new(spec, params.as_slice())?;
    Ok(argmax(net.forward(features)?))
}

/// `E` epochs of mini-batch SGD over the client's training set starting
/// from `model`. Batches are drawn from a fresh shuffle each epoch seeded by
/// `cfg.rng_seed`; the last batch of an epoch may be short.
pub fn local_update(
    spec: &ModelSpec,
    model: &ParameterVector,
    data: &ClientDataset,
    cfg: &TrainingConfig,
) -> Result<ParameterVector> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyTrainingSet {
            client: data.client_id.clone(),
        });
    }
    let mut params = model.clone();
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut rng = seed::rng(cfg.rng_seed);
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            {
                let mut net = Network::new(spec, params.as_slice())?;
                for &i in batch {
                    net.accumulate(&data.train[i], &mut grad)?;
                }
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (p, g) in params.as_mut_slice().iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::Validation(format!(
            "client {} produced non-finite parameters; learning rate {} is unstable",
            data.client_id, cfg.learning_rate
        )));
    }
    Ok(params)
}

/// Fraction of `samples` whose predicted class equals the label.
pub fn accuracy(spec: &ModelSpec, model: &ParameterVector, samples: &[Sample]) -> Result<f64> {
    let mut net = Network::new(spec, model.as_slice())?;
    let mut correct = 0usize;
    for sample in samples {
        if argmax(net.forward(&sample.features)?) == sample.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Accuracy of `model` on the client's local test set.
pub fn local_test_accuracy(spec: &ModelSpec, model: &ParameterVector, data: &ClientDataset) -> Result<f64> {
    if data.test.is_empty() {
        return Err(Error::EmptyTestSet {
            client: data.client_id.clone(),
        });
    }
    accuracy(spec, model, &data.test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(features: Vec<f64>, label: usize) -> Sample {
        Sample { features, label }
    }

    fn client(train: Vec<Sample>, test: Vec<Sample>) -> ClientDataset {
        ClientDataset {
            client_id: "c".into(),
            train,
            test,
        }
    }

    #[test]
    fn init_is_deterministic_and_sized() {
        // softmax regression, 4 inputs and 2 classes: 4*2 + 2
        let spec = ModelSpec::mlp(4, vec![], 2, Activation::Relu);
        assert_eq!(spec.parameter_count(), 10);
        let a = init_model(&spec, 7).unwrap();
        let b = init_model(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.is_finite());
        assert!(a.as_slice()[..8].iter().all(|w| w.abs() <= INIT_SCALE));
        assert!(a.as_slice()[8..].iter().all(|&b| b == 0.0));
        assert_ne!(a, init_model(&spec, 8).unwrap());
    }

    #[test]
    fn invalid_specs_are_configuration_errors() {
        let zero = ModelSpec::mlp(4, vec![8], 0, Activation::Relu);
        assert!(matches!(init_model(&zero, 1), Err(Error::Config(_))));
        let one = ModelSpec::mlp(4, vec![8], 1, Activation::Relu);
        assert!(matches!(init_model(&one, 1), Err(Error::Config(_))));
        let empty_layer = ModelSpec::mlp(4, vec![0], 3, Activation::Relu);
        assert!(matches!(init_model(&empty_layer, 1), Err(Error::Config(_))));
    }

    #[test]
    fn femnist_cnn_parameter_count() {
        assert_eq!(ModelSpec::femnist_cnn().parameter_count(), 6_603_710);
    }

    #[test]
    fn parameter_count_matches_init_length() {
        let specs = [
            ModelSpec::mlp(1, vec![], 2, Activation::Relu),
            ModelSpec::mlp(20, vec![32], 10, Activation::Relu),
            ModelSpec::mlp(5, vec![7, 3], 4, Activation::Tanh),
            ModelSpec {
                input_dim: 36,
                class_count: 3,
                architecture: Architecture::Cnn {
                    image_side: 6,
                    in_channels: 1,
                    stages: vec![ConvStage {
                        kernel: 3,
                        channels: 2,
                        pool: 2,
                    }],
                    dense: vec![4],
                },
            },
        ];
        for spec in &specs {
            assert_eq!(init_model(spec, 3).unwrap().len(), spec.parameter_count(), "{spec:?}");
        }
        // hand count for the 20-32-10 MLP
        assert_eq!(specs[1].parameter_count(), 20 * 32 + 32 + 32 * 10 + 10);
    }

    #[test]
    fn l2_distance_basics() {
        let v = ParameterVector::new(vec![1.0, -2.0, 3.5]);
        assert_eq!(model_l2_distance(&v, &v).unwrap(), 0.0);
        let a = ParameterVector::new(vec![0.0, 0.0]);
        let b = ParameterVector::new(vec![3.0, 4.0]);
        assert_eq!(model_l2_distance(&a, &b).unwrap(), 5.0);
        assert!(matches!(
            model_l2_distance(&a, &v),
            Err(Error::Dimension { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let spec = ModelSpec::mlp(3, vec![4], 3, Activation::Relu);
        let model = init_model(&spec, 1).unwrap();
        let data = client(
            (0..7).map(|i| sample(vec![i as f64 * 0.1, 0.5, 1.0], i % 3)).collect(),
            vec![],
        );
        let cfg = TrainingConfig {
            learning_rate: 0.0,
            ..TrainingConfig::default()
        };
        assert_eq!(local_update(&spec, &model, &data, &cfg).unwrap(), model);
    }

    #[test]
    fn empty_training_set_is_a_client_skip() {
        let spec = ModelSpec::mlp(2, vec![], 2, Activation::Relu);
        let model = init_model(&spec, 1).unwrap();
        let err = local_update(&spec, &model, &client(vec![], vec![]), &TrainingConfig::default());
        assert!(matches!(err, Err(Error::EmptyTrainingSet { .. })));
        assert!(matches!(
            local_test_accuracy(&spec, &model, &client(vec![], vec![])),
            Err(Error::EmptyTestSet { .. })
        ));
    }

    #[test]
    fn constant_class_model_accuracy() {
        // zero weights, bias favouring class 1
        let spec = ModelSpec::mlp(2, vec![], 4, Activation::Relu);
        let mut params = ParameterVector::zeros(spec.parameter_count());
        params.as_mut_slice()[8 + 1] = 1.0;
        let labels = [1, 0, 2, 1, 3, 0, 1, 2, 3, 0];
        let test: Vec<_> = labels.iter().map(|&y| sample(vec![0.3, 0.7], y)).collect();
        let acc = local_test_accuracy(&spec, &params, &client(vec![], test)).unwrap();
        assert!((acc - 0.3).abs() < 1e-15);
    }

    #[test]
    fn one_hot_memorization_is_perfect() {
        let spec = ModelSpec::mlp(5, vec![], 5, Activation::Relu);
        let mut params = ParameterVector::zeros(spec.parameter_count());
        for k in 0..5 {
            params.as_mut_slice()[k * 5 + k] = 1.0;
        }
        let test: Vec<_> = (0..5)
            .map(|k| {
                let mut x = vec![0.0; 5];
                x[k] = 1.0;
                sample(x, k)
            })
            .collect();
        assert_eq!(local_test_accuracy(&spec, &params, &client(vec![], test)).unwrap(), 1.0);
    }

    #[test]
    fn one_parameter_least_squares_analogue() {
        // Softmax regression with one input and two classes; a single full
        // batch step must equal w - lr * grad with the closed-form gradient
        // dL/dW_k = (p_k - [k == y]) * x, dL/db_k = p_k - [k == y].
        let spec = ModelSpec::mlp(1, vec![], 2, Activation::Relu);
        let model = ParameterVector::new(vec![0.2, -0.1, 0.0, 0.0]);
        let train = vec![sample(vec![1.0], 0), sample(vec![0.5], 1)];
        let cfg = TrainingConfig {
            learning_rate: 0.5,
            local_epochs: 1,
            batch_size: 2,
            rng_seed: 9,
        };
        let out = local_update(&spec, &model, &client(train.clone(), vec![]), &cfg).unwrap();

        let mut expected = model.as_slice().to_vec();
        let mut grad = [0.0; 4];
        for s in &train {
            let x = s.features[0];
            let z = [0.2 * x, -0.1 * x];
            let m = z[0].max(z[1]);
            let e = [(z[0] - m).exp(), (z[1] - m).exp()];
            let p = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];
            for k in 0..2 {
                let r = p[k] - if k == s.label { 1.0 } else { 0.0 };
                grad[k] += r * x / 2.0;
                grad[2 + k] += r / 2.0;
            }
        }
        for (w, g) in expected.iter_mut().zip(grad) {
            *w -= 0.5 * g;
        }
        for (a, b) in out.as_slice().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let spec = ModelSpec::mlp(3, vec![5], 3, Activation::Relu);
        let model = init_model(&spec, 11).unwrap();
        let train: Vec<_> = (0..23)
            .map(|i| sample(vec![(i % 5) as f64 / 5.0, (i % 3) as f64 / 3.0, 0.5], i % 3))
            .collect();
        let data = client(train, vec![]);
        let cfg = TrainingConfig {
            learning_rate: 0.1,
            local_epochs: 3,
            batch_size: 4,
            rng_seed: 5,
        };
        let a = local_update(&spec, &model, &data, &cfg).unwrap();
        let b = local_update(&spec, &model, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, model);
        let c = local_update(&spec, &model, &data, &cfg.with_seed(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cnn_cannot_be_trained() {
        let spec = ModelSpec {
            input_dim: 16,
            class_count: 2,
            architecture: Architecture::Cnn {
                image_side: 4,
                in_channels: 1,
                stages: vec![ConvStage {
                    kernel: 3,
                    channels: 1,
                    pool: 2,
                }],
                dense: vec![],
            },
        };
        let model = init_model(&spec, 1).unwrap();
        let data = client(vec![sample(vec![0.0; 16], 0)], vec![]);
        assert!(matches!(
            local_update(&spec, &model, &data, &TrainingConfig::default()),
            Err(Error::Unsupported(_))
        ));
    }
}
