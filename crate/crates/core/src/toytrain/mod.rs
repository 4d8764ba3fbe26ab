//! A small residual MLP trained with supervised cross-entropy or InfoNCE on
//! Gaussian class blobs, with a residual (odd) and post-residual (even) tap
//! per block.
//!
//! Gradients are written out by hand and checked against finite differences.
//! Training is single-threaded plain SGD with a constant learning rate and a
//! seeded batch order, so `(config, seed)` fixes every bit of the result.

mod data;
mod loss;
mod net;

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use data::{
    augment, augment_rows, make_blobs, AugmentationFamily, AugmentationSpec, LabeledSamples, ToyDataset,
    ToyDatasetSpec,
};
pub use loss::{cosine_similarity, info_nce, info_nce_gradient, info_nce_loss, partner, softmax_cross_entropy};
pub use net::{Activations, Head, HeadKind, Linear, ResidualBlock, ToyResNet};

use crate::error::{Error, Result};
use crate::ingest::{write_run, Dtype, RunManifest};
use crate::repcore::{BlockGroupSpec, LayerTag, Method, RepMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Number of positive pairs per batch (`2N` rows).
    pub batch_size: usize,
    pub projection_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            temperature: 0.5,
            batch_size: 128,
            projection_dim: 16,
            epochs: 200,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            batch_size: 128,
            epochs: 200,
            learning_rate: 0.2,
            seed: 0,
        }
    }
}

/// Everything needed to train and dump one toy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub dataset: ToyDatasetSpec,
    pub width: usize,
    /// Block counts per block group; they must sum to the block count.
    pub block_groups: Vec<usize>,
    pub supervised: SupervisedConfig,
    pub contrastive: ContrastiveConfig,
    /// Training augmentation for the supervised objective.
    pub weak_augmentation: AugmentationSpec,
    /// Training augmentation for the contrastive objective, and the family
    /// used to measure augmentation invariance.
    pub strong_augmentation: AugmentationSpec,
    /// Seeds of the two augmented copies of the evaluation set.
    pub view_seeds: [u64; 2],
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            dataset: ToyDatasetSpec::default(),
            width: 64,
            block_groups: vec![2, 2],
            supervised: SupervisedConfig::default(),
            contrastive: ContrastiveConfig::default(),
            weak_augmentation: AugmentationSpec::weak(0.1),
            strong_augmentation: AugmentationSpec::strong(0.1, 0.7, [0.5, 1.5]),
            view_seeds: [101, 202],
        }
    }
}

impl ToyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ToyConfig = serde_json::from_str(text).map_err(|e| Error::Precondition(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn blocks(&self) -> usize {
        self.block_groups.iter().sum()
    }

    pub fn block_group_spec(&self) -> Result<BlockGroupSpec> {
        BlockGroupSpec::from_counts(&self.block_groups)
    }

    /// Uses `seed` for both objectives' initialization, batch order and augmentation.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.supervised.seed = seed;
        self.contrastive.seed = seed;
        self
    }

    pub fn seed(&self, objective: Method) -> u64 {
        match objective {
            Method::Supervised => self.supervised.seed,
            Method::Contrastive => self.contrastive.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.block_group_spec()?;
        if self.width == 0 {
            return Err(Error::precondition("width must be positive"));
        }
        self.weak_augmentation.validate()?;
        self.strong_augmentation.validate()?;
        if self.weak_augmentation.family != AugmentationFamily::Weak {
            return Err(Error::precondition("weak_augmentation must use the weak family"));
        }
        if self.strong_augmentation.family != AugmentationFamily::Strong {
            return Err(Error::precondition("strong_augmentation must use the strong family"));
        }
        let s = &self.supervised;
        if s.batch_size == 0 || !(s.learning_rate > 0.0) {
            return Err(Error::precondition("supervised batch_size and learning_rate must be positive"));
        }
        let c = &self.contrastive;
        if c.batch_size < 2 {
            return Err(Error::precondition("contrastive batch_size must be at least 2"));
        }
        if !(c.temperature > 0.0) || !(c.learning_rate > 0.0) || c.projection_dim == 0 {
            return Err(Error::precondition(
                "temperature, learning_rate and projection_dim must be positive",
            ));
        }
        Ok(())
    }

    /// Untrained network for `objective`, seeded from the objective's seed.
    pub fn network(&self, objective: Method) -> Result<ToyResNet> {
        let head = match objective {
            Method::Supervised => HeadKind::Classifier {
                classes: self.dataset.class_count,
            },
            Method::Contrastive => HeadKind::Projection {
                dim: self.contrastive.projection_dim,
            },
        };
        ToyResNet::new(self.dataset.input_dim, self.width, self.blocks(), head, self.seed(objective))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub objective: Method,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Trains `net` in place on `data`.
///
/// Supervised: cross-entropy on weakly augmented batches. Contrastive:
/// InfoNCE on two strongly augmented views per sample, interleaved so rows
/// `2k` and `2k + 1` form a positive pair. A trailing contrastive batch with
/// fewer than two samples is dropped.
pub fn train(objective: Method, net: &mut ToyResNet, data: &LabeledSamples, cfg: &ToyConfig) -> Result<TrainingLog> {
    cfg.validate()?;
    let (batch_size, epochs, lr) = match objective {
        Method::Supervised => (cfg.supervised.batch_size, cfg.supervised.epochs, cfg.supervised.learning_rate),
        Method::Contrastive => (
            cfg.contrastive.batch_size,
            cfg.contrastive.epochs,
            cfg.contrastive.learning_rate,
        ),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed(objective));
    // stream 0 is the weight initialization
    rng.set_stream(1);
    let x = data.x.view();
    let classes = data.labels.classes();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut log = TrainingLog {
        objective,
        epoch_losses: Vec::with_capacity(epochs),
    };
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for rows in order.chunks(batch_size) {
            let (loss, grad) = match objective {
                Method::Supervised => {
                    let xb = data::augment_batch(x, rows, &cfg.weak_augmentation, &mut rng);
                    let yb: Vec<usize> = rows.iter().map(|&r| classes[r]).collect();
                    net.supervised_loss_grad(xb.view(), &yb)?
                }
                Method::Contrastive => {
                    if rows.len() < 2 {
                        continue;
                    }
                    let views = two_views(x, rows, &cfg.strong_augmentation, &mut rng);
                    net.contrastive_loss_grad(views.view(), cfg.contrastive.temperature)?
                }
            };
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            net.add_scaled(-lr, &grad);
            total += loss;
            batches += 1;
        }
        let mean = total / batches.max(1) as f64;
        if !mean.is_finite() || net.params().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        log.epoch_losses.push(mean);
    }
    Ok(log)
}

/// Two augmented views of each selected row, interleaved.
fn two_views(x: ArrayView2<'_, f64>, rows: &[usize], aug: &AugmentationSpec, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let a = data::augment_batch(x, rows, aug, rng);
    let b = data::augment_batch(x, rows, aug, rng);
    let mut out = Array2::zeros((2 * rows.len(), x.ncols()));
    for k in 0..rows.len() {
        out.row_mut(2 * k).assign(&a.row(k));
        out.row_mut(2 * k + 1).assign(&b.row(k));
    }
    out
}

/// Identifies the model a dump came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub model_id: String,
    pub method: Method,
    pub seed: u64,
    pub block_groups: BlockGroupSpec,
}

impl ModelInfo {
    /// `supervised-s0`, `contrastive-s1`, ...
    pub fn new(method: Method, seed: u64, block_groups: BlockGroupSpec) -> Self {
        ModelInfo {
            model_id: format!("{method}-s{seed}"),
            method,
            seed,
            block_groups,
        }
    }
}

/// One forward pass over `samples` (each row augmented with its own stream
/// of `rng_seed`), returning every odd, even and head tap as a tagged matrix.
pub fn extract_representations(
    net: &ToyResNet,
    samples: ArrayView2<'_, f64>,
    aug: &AugmentationSpec,
    rng_seed: u64,
    info: &ModelInfo,
) -> Result<Vec<RepMatrix>> {
    if info.block_groups.total_blocks() != net.block_count() {
        return Err(Error::precondition(format!(
            "block groups cover {} blocks but the network has {}",
            info.block_groups.total_blocks(),
            net.block_count()
        )));
    }
    let views = augment_rows(samples, aug, rng_seed)?;
    let acts = net.forward(views.view())?;
    acts.taps()
        .into_iter()
        .map(|(layer, parity, block, m)| {
            let tag = LayerTag::new(info.model_id.clone(), info.method, info.seed, layer, parity)
                .with_block_group(block.and_then(|b| info.block_groups.group_of_block(b)));
            RepMatrix::new(m.clone(), tag)
        })
        .collect()
}

/// [`extract_representations`], then writes the dumps and `manifest.json` into `dir`.
pub fn extract_to_dir(
    net: &ToyResNet,
    samples: ArrayView2<'_, f64>,
    aug: &AugmentationSpec,
    rng_seed: u64,
    info: &ModelInfo,
    dir: &Path,
    dataset_id: &str,
) -> Result<(Vec<RepMatrix>, RunManifest)> {
    let reps = extract_representations(net, samples, aug, rng_seed, info)?;
    let manifest = write_run(dir, MANIFEST_NAME, dataset_id, &reps, Dtype::F8)?;
    Ok((reps, manifest))
}

pub const MANIFEST_NAME: &str = "manifest.json";
