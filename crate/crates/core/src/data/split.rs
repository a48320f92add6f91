use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Cascade, DataError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Cascade>,
    pub valid: Vec<Cascade>,
    pub test: Vec<Cascade>,
    pub seed: u64,
}

/// Seeded random partition. Validation and test sizes are
/// `max(1, floor(ratio * n))`; training takes the remainder.
pub fn split_dataset(cascades: Vec<Cascade>, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit, DataError> {
    let n = cascades.len();
    if n < 3 {
        return Err(DataError::TooFewCascades(n));
    }
    let total = ratios.train + ratios.valid + ratios.test;
    if [ratios.train, ratios.valid, ratios.test].iter().any(|r| *r <= 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidArgument(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    let portion = |r: f64| ((r * n as f64 + 1e-9).floor() as usize).max(1);
    let n_valid = portion(ratios.valid);
    let n_test = portion(ratios.test);
    if n_valid + n_test >= n {
        return Err(DataError::TooFewCascades(n));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<Cascade>> = cascades.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<Cascade> { idx.iter().map(|&i| slots[i].take().expect("each index once")).collect() };
    let n_train = n - n_valid - n_test;
    let train = take(&order[..n_train]);
    let valid = take(&order[n_train..n_train + n_valid]);
    let test = take(&order[n_train + n_valid..]);
    Ok(DatasetSplit {
        train,
        valid,
        test,
        seed,
    })
}
