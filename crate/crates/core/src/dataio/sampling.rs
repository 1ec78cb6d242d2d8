use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

use super::dataset::DomainDataset;
use super::split::DomainSplit;

/// One training positive with its sampled negatives.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub user: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// For each training positive, draw `k` negatives uniformly from the user's
/// non-interacted items: without replacement within one positive's draw when
/// the pool allows, with replacement otherwise.
pub fn sample_train_negatives(
    split: &DomainSplit,
    dataset: &DomainDataset,
    k: usize,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    if k == 0 {
        return Err(Error::InvalidArg("negative count k must be >= 1".into()));
    }
    let n = dataset.num_items();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (user, items) in split.train.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let interacted = dataset.interacted(user);
        let pool: Vec<usize> = (0..n).filter(|i| !interacted.contains(i)).collect();
        if pool.is_empty() {
            return Err(Error::Data(format!(
                "user {user} has interacted with every item; cannot sample negatives"
            )));
        }
        for &positive in items {
            let negatives = if pool.len() >= k {
                let mut idx: Vec<usize> = pool.clone();
                for i in 0..k {
                    let j = rng.gen_range(i..idx.len());
                    idx.swap(i, j);
                }
                idx.truncate(k);
                idx
            } else {
                (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
            };
            out.push(TrainSample {
                user,
                positive,
                negatives,
            });
        }
    }
    Ok(out)
}
