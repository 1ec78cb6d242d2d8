use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

use super::dataset::{Domain, DomainDataset, DualDomainDataset};

/// Held-out evaluation instance for one user in one domain.
#[derive(Debug, Clone)]
pub struct TestInstance {
    pub item: usize,
    /// Distinct non-interacted negatives, excluding the test item.
    pub negatives: Vec<usize>,
    /// How many negatives short of the requested count this user's pool was.
    pub shortfall: usize,
}

/// Per-domain leave-one-out split.
#[derive(Debug, Clone)]
pub struct DomainSplit {
    /// Per user, training item indices in timestamp order.
    pub train: Vec<Vec<usize>>,
    /// Per user, the held-out instance; `None` when the user is excluded.
    pub test: Vec<Option<TestInstance>>,
    /// Users excluded because they have a single interaction in this domain.
    pub skipped_single: Vec<usize>,
    /// Users excluded because their held-out item never occurs in training.
    pub skipped_cold: Vec<usize>,
}

impl DomainSplit {
    pub fn num_test_users(&self) -> usize {
        self.test.iter().filter(|t| t.is_some()).count()
    }

    /// Sorted training items of one user (for membership checks).
    pub fn train_set(&self, user: usize) -> Vec<usize> {
        let mut v = self.train[user].clone();
        v.sort_unstable();
        v
    }
}

#[derive(Debug, Clone)]
pub struct LeaveOneOutSplit {
    pub domain_a: DomainSplit,
    pub domain_b: DomainSplit,
    pub eval_negatives: usize,
    pub seed: u64,
}

impl LeaveOneOutSplit {
    pub fn domain(&self, d: Domain) -> &DomainSplit {
        match d {
            Domain::A => &self.domain_a,
            Domain::B => &self.domain_b,
        }
    }
}

/// Hold out each user's final interaction per domain and sample
/// `eval_negatives` distinct non-interacted negatives.
pub fn leave_one_out_split(
    ds: &DualDomainDataset,
    eval_negatives: usize,
    seed: u64,
) -> Result<LeaveOneOutSplit> {
    if eval_negatives == 0 {
        return Err(Error::InvalidArg("eval_negatives must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = split_domain(&ds.domain_a, eval_negatives, &mut rng)?;
    let b = split_domain(&ds.domain_b, eval_negatives, &mut rng)?;
    Ok(LeaveOneOutSplit {
        domain_a: a,
        domain_b: b,
        eval_negatives,
        seed,
    })
}

fn split_domain(
    d: &DomainDataset,
    eval_negatives: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DomainSplit> {
    let m = d.num_users();
    let n = d.num_items();
    let mut train: Vec<Vec<usize>> = Vec::with_capacity(m);
    let mut held: Vec<Option<usize>> = Vec::with_capacity(m);
    let mut skipped_single = Vec::new();
    for u in 0..m {
        let inters = &d.by_user[u];
        if inters.len() < 2 {
            train.push(inters.iter().map(|i| i.item).collect());
            held.push(None);
            skipped_single.push(u);
        } else {
            train.push(inters[..inters.len() - 1].iter().map(|i| i.item).collect());
            held.push(Some(inters[inters.len() - 1].item));
        }
    }

    // training occurrence counts, to flag cold test items
    let mut item_train_count = vec![0usize; n];
    for items in &train {
        for &i in items {
            item_train_count[i] += 1;
        }
    }

    let mut test: Vec<Option<TestInstance>> = Vec::with_capacity(m);
    let mut skipped_cold = Vec::new();
    for u in 0..m {
        let Some(test_item) = held[u] else {
            test.push(None);
            continue;
        };
        if item_train_count[test_item] == 0 {
            skipped_cold.push(u);
            test.push(None);
            continue;
        }
        let interacted = d.interacted(u);
        let pool: Vec<usize> = (0..n).filter(|i| !interacted.contains(i)).collect();
        let (negatives, shortfall) = if pool.len() <= eval_negatives {
            (pool.clone(), eval_negatives - pool.len())
        } else {
            (sample_distinct(&pool, eval_negatives, rng), 0)
        };
        test.push(Some(TestInstance {
            item: test_item,
            negatives,
            shortfall,
        }));
    }
    Ok(DomainSplit {
        train,
        test,
        skipped_single,
        skipped_cold,
    })
}

/// Uniform sample of `k` distinct elements via partial Fisher-Yates.
fn sample_distinct(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = pool.to_vec();
    for i in 0..k {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}
