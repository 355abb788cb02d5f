//! Shared mini-batch training plumbing.

use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Rows per mini-batch; the whole set is used when it is smaller.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 1024,
            epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(a.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Random streams drawn from the training seed. Parameter initialization
/// and batch shuffling use separate children so changing one never shifts
/// the other.
pub(crate) struct TrainStreams {
    pub init: Rng,
    pub shuffle: Rng,
}

impl TrainStreams {
    pub fn new(seed: u64) -> Self {
        let root = Rng::new(seed);
        Self {
            init: root.split(0),
            shuffle: root.split(1),
        }
    }
}

/// Shuffled row indices cut into batches of `batch_size`. A trailing batch
/// shorter than `min_rows` is dropped (statistics need at least two rows).
pub(crate) fn epoch_batches(
    n: usize,
    batch_size: usize,
    min_rows: usize,
    rng: &mut Rng,
) -> Vec<Vec<usize>> {
    let order = rng.permutation(n);
    order
        .chunks(batch_size.max(1))
        .filter(|c| c.len() >= min_rows)
        .map(<[usize]>::to_vec)
        .collect()
}
