//! Federated datasets: LEAF JSON ingestion and a seeded non-IID generator.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// One client's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: String,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl ClientDataset {
    /// Number of distinct labels in the training set.
    pub fn label_diversity(&self) -> usize {
        distinct_labels(&self.train)
    }
}

pub fn distinct_labels(samples: &[Sample]) -> usize {
    samples.iter().map(|s| s.label).collect::<BTreeSet<_>>().len()
}

/// Clients sorted by id, all sharing one feature dimension and label space.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    clients: Vec<ClientDataset>,
    class_count: usize,
    feature_dim: usize,
}

impl FederatedDataset {
    pub fn new(mut clients: Vec<ClientDataset>, class_count: usize) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::config("a federated dataset needs at least one client"));
        }
        if class_count < 2 {
            return Err(Error::config(format!(
                "class count must be at least 2, got {class_count}"
            )));
        }
        clients.sort_by(|a, b| a.client_id.cmp(&b.client_id));
        if let Some(w) = clients.windows(2).find(|w| w[0].client_id == w[1].client_id) {
            return Err(Error::ingestion(Some(&w[0].client_id), "duplicate client id"));
        }
        let feature_dim = clients
            .iter()
            .flat_map(|c| c.train.iter().chain(&c.test))
            .map(|s| s.features.len())
            .next()
            .ok_or_else(|| Error::config("a federated dataset needs at least one sample"))?;
        for c in &clients {
            for s in c.train.iter().chain(&c.test) {
                if s.features.len() != feature_dim {
                    return Err(Error::ingestion(
                        Some(&c.client_id),
                        format!("feature dimension {} differs from {}", s.features.len(), feature_dim),
                    ));
                }
                if s.label >= class_count {
                    return Err(Error::ingestion(
                        Some(&c.client_id),
                        format!("label {} outside [0, {})", s.label, class_count),
                    ));
                }
            }
        }
        Ok(FederatedDataset {
            clients,
            class_count,
            feature_dim,
        })
    }

    pub fn clients(&self) -> &[ClientDataset] {
        &self.clients
    }

    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn client(&self, id: &str) -> Option<&ClientDataset> {
        self.clients
            .binary_search_by(|c| c.client_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.clients[i])
    }
}

/// Per-client train/test split by a seeded shuffle. At least one sample
/// stays in the training part whenever `n > 0`.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let n_test = ((n as f64 * test_fraction).floor() as usize).min(n.saturating_sub(1));
    let mut test = idx.split_off(n - n_test);
    idx.sort_unstable();
    test.sort_unstable();
    (idx, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeafOptions {
    /// Number of classes; inferred as `max label + 1` when absent.
    #[serde(default)]
    pub class_count: Option<usize>,
    /// Used only when no separate test file is given.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_test_fraction() -> f64 {
    0.1
}

impl Default for LeafOptions {
    fn default() -> Self {
        LeafOptions {
            class_count: None,
            test_fraction: default_test_fraction(),
            split_seed: 0,
        }
    }
}

#[derive(Deserialize)]
struct LeafFile {
    users: Vec<String>,
    num_samples: Vec<usize>,
    user_data: BTreeMap<String, serde_json::Value>,
}

#[derive(Deserialize)]
struct LeafUser {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

/// Samples of one LEAF file in user order.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafShard {
    pub users: Vec<(String, Vec<Sample>)>,
    pub declared_total: usize,
}

/// Parses one LEAF JSON document (`users`, `num_samples`, `user_data`
/// with per-user `x` feature lists and `y` labels).
pub fn parse_leaf(json: &str) -> Result<LeafShard> {
    let file: LeafFile =
        serde_json::from_str(json).map_err(|e| Error::ingestion(None, format!("malformed LEAF JSON: {e}")))?;
    if file.users.len() != file.num_samples.len() {
        return Err(Error::ingestion(
            None,
            format!(
                "{} users but {} num_samples entries",
                file.users.len(),
                file.num_samples.len()
            ),
        ));
    }
    let mut seen = HashSet::new();
    let mut users = Vec::with_capacity(file.users.len());
    for (user, &declared) in file.users.iter().zip(&file.num_samples) {
        if !seen.insert(user.as_str()) {
            return Err(Error::ingestion(Some(user), "user listed twice"));
        }
        let raw = file
            .user_data
            .get(user)
            .ok_or_else(|| Error::ingestion(Some(user), "missing from user_data"))?;
        let data = LeafUser::deserialize(raw).map_err(|e| Error::ingestion(Some(user), format!("bad record: {e}")))?;
        if data.x.len() != data.y.len() {
            return Err(Error::ingestion(
                Some(user),
                format!("{} feature rows but {} labels", data.x.len(), data.y.len()),
            ));
        }
        if data.x.len() != declared {
            return Err(Error::ingestion(
                Some(user),
                format!("num_samples declares {declared} but user_data holds {}", data.x.len()),
            ));
        }
        let mut samples = Vec::with_capacity(declared);
        for (x, y) in data.x.into_iter().zip(data.y) {
            if !(y >= 0.0 && y.fract() == 0.0 && y.is_finite()) {
                return Err(Error::ingestion(Some(user), format!("unknown label {y}")));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::ingestion(Some(user), "non-finite feature value"));
            }
            samples.push(Sample {
                features: x,
                label: y as usize,
            });
        }
        users.push((user.clone(), samples));
    }
    if let Some(extra) = file.user_data.keys().find(|k| !seen.contains(k.as_str())) {
        return Err(Error::ingestion(Some(extra), "present in user_data but not in users"));
    }
    Ok(LeafShard {
        declared_total: file.num_samples.iter().sum(),
        users,
    })
}

fn read_shard(path: &Path) -> Result<LeafShard> {
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_owned(),
        source,
    })?;
    parse_leaf(&text)
}

/// Loads a LEAF dataset. With a `test` file the pre-made split is kept;
/// otherwise each user's samples are split with `opts.test_fraction`.
pub fn load_leaf_json(train: &Path, test: Option<&Path>, opts: &LeafOptions) -> Result<FederatedDataset> {
    let train = read_shard(train)?;
    let test = test.map(read_shard).transpose()?;
    leaf_to_dataset(train, test, opts)
}

pub fn leaf_to_dataset(train: LeafShard, test: Option<LeafShard>, opts: &LeafOptions) -> Result<FederatedDataset> {
    let mut clients: BTreeMap<String, ClientDataset> = BTreeMap::new();
    match test {
        Some(test) => {
            for (user, samples) in train.users {
                clients.insert(
                    user.clone(),
                    ClientDataset {
                        client_id: user,
                        train: samples,
                        test: Vec::new(),
                    },
                );
            }
            for (user, samples) in test.users {
                clients
                    .entry(user.clone())
                    .or_insert_with(|| ClientDataset {
                        client_id: user,
                        train: Vec::new(),
                        test: Vec::new(),
                    })
                    .test = samples;
            }
        }
        None => {
            if !(opts.test_fraction > 0.0 && opts.test_fraction < 1.0) {
                return Err(Error::config(format!(
                    "test fraction must lie in (0, 1), got {}",
                    opts.test_fraction
                )));
            }
            for (user, samples) in train.users {
                let (tr, te) = split_indices(
                    samples.len(),
                    opts.test_fraction,
                    seed::stream_seed(opts.split_seed, &user, 0),
                );
                let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
                let take = |ix: &[usize], slots: &mut [Option<Sample>]| -> Vec<Sample> {
                    ix.iter()
                        .map(|&i| slots[i].take().expect("indices are disjoint"))
                        .collect()
                };
                let train_part = take(&tr, &mut slots);
                let test_part = take(&te, &mut slots);
                clients.insert(
                    user.clone(),
                    ClientDataset {
                        client_id: user,
                        train: train_part,
                        test: test_part,
                    },
                );
            }
        }
    }
    let mut clients: Vec<ClientDataset> = clients.into_values().collect();
    let max_label = clients
        .iter()
        .flat_map(|c| c.train.iter().chain(&c.test))
        .map(|s| s.label)
        .max()
        .ok_or_else(|| Error::ingestion(None, "dataset holds no samples"))?;
    let class_count = match opts.class_count {
        Some(k) => {
            if let Some(c) = clients
                .iter()
                .find(|c| c.train.iter().chain(&c.test).any(|s| s.label >= k))
            {
                return Err(Error::ingestion(
                    Some(&c.client_id),
                    format!("label outside the declared {k} classes"),
                ));
            }
            k
        }
        None => (max_label + 1).max(2),
    };
    normalize_features(&mut clients);
    FederatedDataset::new(clients, class_count)
}

/// Rescales all features to [0, 1] with one global min-max map. Data
/// already inside [0, 1] is left untouched.
pub fn normalize_features(clients: &mut [ClientDataset]) {
    let (lo, hi) = clients
        .iter()
        .flat_map(|c| c.train.iter().chain(&c.test))
        .flat_map(|s| s.features.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo < 0.0 || hi > 1.0) {
        return;
    }
    let span = hi - lo;
    for c in clients.iter_mut() {
        for s in c.train.iter_mut().chain(c.test.iter_mut()) {
            for v in s.features.iter_mut() {
                *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
            }
        }
    }
}

/// Parameters of the synthetic label-skewed classification task. Each
/// class has a Gaussian centroid; each client owns a random subset of the
/// classes and draws samples around those centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub class_count: usize,
    pub feature_dim: usize,
    pub client_count: usize,
    /// Inclusive range of per-client sample counts (train + test).
    pub samples_per_client: [usize; 2],
    /// Inclusive range of distinct labels per client.
    pub labels_per_client: [usize; 2],
    pub test_fraction: f64,
    /// Standard deviation of the class centroids around the origin.
    #[serde(default = "default_separation")]
    pub class_separation: f64,
    /// Standard deviation of samples around their centroid.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_separation() -> f64 {
    0.7
}

fn default_noise() -> f64 {
    1.0
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            class_count: 10,
            feature_dim: 20,
            client_count: 40,
            samples_per_client: [40, 120],
            labels_per_client: [1, 3],
            test_fraction: 0.25,
            class_separation: default_separation(),
            noise: default_noise(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [s_lo, s_hi] = self.samples_per_client;
        let [l_lo, l_hi] = self.labels_per_client;
        if self.class_count < 2 {
            return Err(Error::config("synthetic class count must be at least 2"));
        }
        if self.feature_dim == 0 || self.client_count == 0 {
            return Err(Error::config(
                "synthetic feature dimension and client count must be positive",
            ));
        }
        if l_lo == 0 || l_lo > l_hi || l_hi > self.class_count {
            return Err(Error::config(format!(
                "labels per client [{l_lo}, {l_hi}] must lie within [1, {}]",
                self.class_count
            )));
        }
        if s_lo > s_hi || s_lo < l_hi {
            return Err(Error::config(format!(
                "samples per client [{s_lo}, {s_hi}] must be ordered and at least the label count {l_hi}"
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if !(self.class_separation > 0.0
            && self.noise > 0.0
            && self.class_separation.is_finite()
            && self.noise.is_finite())
        {
            return Err(Error::config("class separation and noise must be positive"));
        }
        Ok(())
    }
}

/// What the generator assigned to each client, in client order.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub assigned_labels: Vec<Vec<usize>>,
    pub train_histograms: Vec<Vec<usize>>,
    pub test_histograms: Vec<Vec<usize>>,
}

pub fn synth_noniid(cfg: &SynthConfig) -> Result<FederatedDataset> {
    synth_noniid_with_truth(cfg).map(|(fd, _)| fd)
}

pub fn synth_noniid_with_truth(cfg: &SynthConfig) -> Result<(FederatedDataset, SynthTruth)> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::stream_seed(cfg.seed, "synth", 0));
    let centroid = Normal::new(0.0, cfg.class_separation).map_err(|e| Error::config(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::config(e.to_string()))?;
    let centroids: Vec<Vec<f64>> = (0..cfg.class_count)
        .map(|_| (0..cfg.feature_dim).map(|_| centroid.sample(&mut rng)).collect())
        .collect();

    let width = cfg.client_count.to_string().len().max(3);
    let mut clients = Vec::with_capacity(cfg.client_count);
    let mut truth = SynthTruth {
        assigned_labels: Vec::new(),
        train_histograms: Vec::new(),
        test_histograms: Vec::new(),
    };
    for k in 0..cfg.client_count {
        let n = rng.random_range(cfg.samples_per_client[0]..=cfg.samples_per_client[1]);
        let label_count = rng.random_range(cfg.labels_per_client[0]..=cfg.labels_per_client[1]);
        let mut assigned = index::sample(&mut rng, cfg.class_count, label_count).into_vec();
        assigned.sort_unstable();

        // every assigned label appears once up front so it lands in train
        let mut labels = assigned.clone();
        labels.extend((label_count..n).map(|_| assigned[rng.random_range(0..label_count)]));
        let samples: Vec<Sample> = labels
            .iter()
            .map(|&y| Sample {
                features: centroids[y].iter().map(|c| c + noise.sample(&mut rng)).collect(),
                label: y,
            })
            .collect();

        let mut rest: Vec<usize> = (label_count..n).collect();
        rest.shuffle(&mut rng);
        let n_test = ((n as f64 * cfg.test_fraction).floor() as usize).min(rest.len());
        let mut test_idx = rest.split_off(rest.len() - n_test);
        let mut train_idx: Vec<usize> = (0..label_count).chain(rest).collect();
        train_idx.sort_unstable();
        test_idx.sort_unstable();

        let histogram = |ix: &[usize]| {
            let mut h = vec![0usize; cfg.class_count];
            ix.iter().for_each(|&i| h[labels[i]] += 1);
            h
        };
        truth.train_histograms.push(histogram(&train_idx));
        truth.test_histograms.push(histogram(&test_idx));
        truth.assigned_labels.push(assigned);
        clients.push(ClientDataset {
            client_id: format!("c{k:0width$}"),
            train: train_idx.iter().map(|&i| samples[i].clone()).collect(),
            test: test_idx.iter().map(|&i| samples[i].clone()).collect(),
        });
    }
    Ok((FederatedDataset::new(clients, cfg.class_count)?, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientStats {
    pub client_id: String,
    pub train_size: usize,
    pub test_size: usize,
    /// Training-label histogram over all classes.
    pub label_histogram: Vec<usize>,
    pub distinct_labels: usize,
    pub empty_test: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub clients: Vec<ClientStats>,
    pub total_train: usize,
    pub total_test: usize,
    pub empty_test_clients: usize,
}

pub fn dataset_stats(fd: &FederatedDataset) -> DatasetStats {
    let clients: Vec<ClientStats> = fd
        .clients()
        .iter()
        .map(|c| {
            let mut label_histogram = vec![0; fd.class_count()];
            c.train.iter().for_each(|s| label_histogram[s.label] += 1);
            ClientStats {
                client_id: c.client_id.clone(),
                train_size: c.train.len(),
                test_size: c.test.len(),
                distinct_labels: label_histogram.iter().filter(|&&n| n > 0).count(),
                label_histogram,
                empty_test: c.test.is_empty(),
            }
        })
        .collect();
    DatasetStats {
        total_train: clients.iter().map(|c| c.train_size).sum(),
        total_test: clients.iter().map(|c| c.test_size).sum(),
        empty_test_clients: clients.iter().filter(|c| c.empty_test).count(),
        clients,
    }
}
