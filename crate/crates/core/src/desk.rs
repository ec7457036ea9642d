//! Desk-scale preset: a seeded synthetic shape task and a small CNN that
//! train in seconds on a laptop CPU.

use crate::adapt::AdaptConfig;
use crate::data::{generate_synthetic, AugmentConfig, Dataset, Split};
use crate::error::Result;
use crate::layers::{make_tiny_cnn_spec, Network};
use crate::prune::PruneConfig;
use crate::tensor::Rng;
use crate::train::{stratified_split, TrainConfig};

pub const CLASSES: usize = 3;
pub const PER_CLASS: usize = 100;
pub const TEST_PER_CLASS: usize = 20;
pub const IMAGE_HW: usize = 32;
pub const WIDTHS: [usize; 2] = [8, 16];
pub const VAL_FRACTION: f64 = 0.2;

/// Synthetic dataset with train/val/test tags; channel means come from the
/// training part only.
pub fn dataset(classes: usize, per_class: usize, test_per_class: usize, hw: usize, seed: u64) -> Result<Dataset> {
    let root = Rng::new(seed);
    let pool = generate_synthetic(classes, per_class, hw, &mut root.derive(&[0]))?;
    let (train, val) = stratified_split(&pool, VAL_FRACTION, &mut root.derive(&[1]))?;
    let mut parts = vec![train.tagged(Split::Train), val.tagged(Split::Val)];
    if test_per_class > 0 {
        parts.push(generate_synthetic(classes, test_per_class, hw, &mut root.derive(&[2]))?.tagged(Split::Test));
    }
    parts[0].recompute_channel_means();
    Dataset::concat(&parts.iter().collect::<Vec<_>>())
}

pub fn default_dataset(seed: u64) -> Result<Dataset> {
    dataset(CLASSES, PER_CLASS, TEST_PER_CLASS, IMAGE_HW, seed)
}

pub fn network(classes: usize, hw: usize, seed: u64) -> Result<Network> {
    Network::new(make_tiny_cnn_spec(classes, hw, &WIDTHS)?, &[3, hw, hw], &mut Rng::new(seed).derive(&[3]))
}

/// Five iterations at a 10% prune budget with a learning rate suited to
/// training from scratch.
pub fn adapt_config(seed: u64) -> AdaptConfig {
    AdaptConfig {
        iterations: 5,
        seed,
        deterministic: true,
        train: TrainConfig {
            batch_size: 16,
            lr_initial: 0.05,
            max_epochs: 30,
            ..TrainConfig::default()
        },
        prune: PruneConfig {
            keep_threshold: 0.9,
            ..PruneConfig::default()
        },
        augment: AugmentConfig::disabled(),
        ..AdaptConfig::default()
    }
}
