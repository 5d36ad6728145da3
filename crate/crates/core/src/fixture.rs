//! Seeded training recipes for the FC2 and LeNet-style MNIST classifiers,
//! with an on-disk cache so experiments share one trained copy.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{load_mnist_idx, mnist_paths, DataError};
use crate::net::{self, fixtures, load_weights, save_weights, train_sgd, LabeledDataset, LayerSpec, NetError, Network, TrainConfig};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("unknown fixture {0:?} (expected fc2 or lenet)")]
    Unknown(String),
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub name: &'static str,
    pub specs: Vec<LayerSpec>,
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl Recipe {
    pub fn fc2() -> Self {
        Recipe {
            name: "fc2",
            specs: fixtures::fc2(),
            init_seed: 1,
            train: TrainConfig {
                epochs: 10,
                learning_rate: 0.05,
                batch_size: 64,
                momentum: 0.9,
                seed: 11,
            },
        }
    }

    pub fn lenet() -> Self {
        Recipe {
            name: "lenet",
            specs: fixtures::lenet(),
            init_seed: 2,
            train: TrainConfig {
                epochs: 6,
                learning_rate: 0.02,
                batch_size: 64,
                momentum: 0.9,
                seed: 12,
            },
        }
    }

    pub fn by_name(name: &str) -> Result<Self, FixtureError> {
        match name {
            "fc2" => Ok(Self::fc2()),
            "lenet" => Ok(Self::lenet()),
            other => Err(FixtureError::Unknown(other.to_string())),
        }
    }

    pub fn initial_network(&self) -> Result<Network, NetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.init_seed);
        Network::initialize(fixtures::MNIST_SHAPE.to_vec(), &self.specs, &mut rng)
    }

    pub fn train(&self, train: &LabeledDataset, test: Option<&LabeledDataset>) -> Result<(Network, net::TrainReport), NetError> {
        train_sgd(self.initial_network()?, train, test, &self.train)
    }

    /// Cache file name; encodes every recipe parameter so edits invalidate it.
    pub fn cache_name(&self) -> String {
        let t = &self.train;
        format!(
            "{}-i{}-e{}-lr{}-b{}-m{}-s{}.sfw",
            self.name, self.init_seed, t.epochs, t.learning_rate, t.batch_size, t.momentum, t.seed
        )
    }
}

/// Loads the cached weights for `recipe` from `cache_dir`, training and
/// storing them first when absent (or when `retrain` is set).
pub fn load_or_train(recipe: &Recipe, mnist_dir: &Path, cache_dir: &Path, retrain: bool) -> Result<Network, FixtureError> {
    let path = cache_dir.join(recipe.cache_name());
    if !retrain && path.exists() {
        return Ok(load_weights(&path)?);
    }
    let (images, labels) = mnist_paths(mnist_dir, true);
    let train = load_mnist_idx(images, labels)?;
    log::info!("training {} fixture on {} samples", recipe.name, train.len());
    let (net, report) = recipe.train(&train, None)?;
    log::info!("{} fixture train accuracy {:.4}", recipe.name, report.train_accuracy);
    std::fs::create_dir_all(cache_dir).map_err(|source| FixtureError::Cache {
        path: cache_dir.to_path_buf(),
        source,
    })?;
    // write-then-rename keeps concurrent readers from seeing a partial file
    let tmp = cache_dir.join(format!("{}.tmp{}", recipe.cache_name(), std::process::id()));
    save_weights(&net, &tmp)?;
    std::fs::rename(&tmp, &path).map_err(|source| FixtureError::Cache { path: path.clone(), source })?;
    Ok(net)
}
