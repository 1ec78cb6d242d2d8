//! Leave-one-out ranking evaluation: HR@K and NDCG@K over sampled candidate
//! lists, with deterministic tie-breaking and a serializable report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Domain, DomainSplit};
use crate::{Error, Result};

/// Anything that can score a (user, item) pair within one domain.
pub trait Scorer: Sync {
    fn score(&self, user: usize, item: usize, domain: Domain) -> f64;
}

impl<F: Fn(usize, usize, Domain) -> f64 + Sync> Scorer for F {
    fn score(&self, user: usize, item: usize, domain: Domain) -> f64 {
        self(user, item, domain)
    }
}

/// 1-based rank of the test item among `candidates` = (test item, negatives).
///
/// A candidate outranks the test item when its score is strictly higher, or
/// equal with a lower item index; ties are therefore deterministic and do not
/// depend on candidate order.
pub fn rank_test_item(test_item: usize, test_score: f64, negatives: &[(usize, f64)]) -> usize {
    1 + negatives
        .iter()
        .filter(|&&(item, score)| {
            score > test_score || (score == test_score && item < test_item)
        })
        .count()
}

/// Hit ratio contribution of one ranked instance.
pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

/// NDCG contribution of one ranked instance: with a single relevant item the
/// ideal DCG is 1, so the contribution is 1/log2(rank + 1) inside the cutoff.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Metrics for one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub hr: f64,
    pub ndcg: f64,
    /// Users that contributed a test instance.
    pub test_users: usize,
    /// Users whose candidate list was shorter than requested.
    pub shortfall_users: usize,
}

/// Rank every test instance of one domain's split and average HR@K / NDCG@K.
pub fn evaluate_domain<S: Scorer>(
    scorer: &S,
    split: &DomainSplit,
    domain: Domain,
    k: usize,
) -> Result<DomainMetrics> {
    if k == 0 {
        return Err(Error::InvalidArg("metric cutoff k must be >= 1".into()));
    }
    // indexed parallel map keeps the reduction order-independent
    let per_user: Vec<Option<Result<(f64, f64, bool)>>> = split
        .test
        .par_iter()
        .enumerate()
        .map(|(user, inst)| {
            let inst = inst.as_ref()?;
            let test_score = scorer.score(user, inst.item, domain);
            let negatives: Vec<(usize, f64)> = inst
                .negatives
                .iter()
                .map(|&i| (i, scorer.score(user, i, domain)))
                .collect();
            if !test_score.is_finite() || negatives.iter().any(|(_, s)| !s.is_finite()) {
                return Some(Err(Error::NonFinite(format!(
                    "score for user {user} in domain {}",
                    domain.tag()
                ))));
            }
            let rank = rank_test_item(inst.item, test_score, &negatives);
            Some(Ok((hr_at_k(rank, k), ndcg_at_k(rank, k), inst.shortfall > 0)))
        })
        .collect();
    let mut hr_sum = 0.0;
    let mut ndcg_sum = 0.0;
    let mut users = 0usize;
    let mut shortfall_users = 0usize;
    for v in per_user.into_iter().flatten() {
        let (hr, ndcg, short) = v?;
        hr_sum += hr;
        ndcg_sum += ndcg;
        users += 1;
        if short {
            shortfall_users += 1;
        }
    }
    if users == 0 {
        return Err(Error::Data("no test instances to evaluate".into()));
    }
    Ok(DomainMetrics {
        hr: hr_sum / users as f64,
        ndcg: ndcg_sum / users as f64,
        test_users: users,
        shortfall_users,
    })
}

/// Full evaluation report for both target domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub variant: String,
    pub seed: u64,
    pub domain_a: DomainMetrics,
    pub domain_b: DomainMetrics,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<10} {:>10} {:>10} {:>12}\n",
            "domain",
            format!("HR@{}", self.k),
            format!("NDCG@{}", self.k),
            "test_users"
        ));
        for (tag, m) in [("A", &self.domain_a), ("B", &self.domain_b)] {
            s.push_str(&format!(
                "{:<10} {:>10.4} {:>10.4} {:>12}\n",
                tag, m.hr, m.ndcg, m.test_users
            ));
        }
        s
    }

    /// One row per domain: variant,seed,domain,k,hr,ndcg,test_users.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,domain,k,hr,ndcg,test_users\n");
        for (tag, m) in [("A", &self.domain_a), ("B", &self.domain_b)] {
            s.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{}\n",
                self.variant, self.seed, tag, self.k, m.hr, m.ndcg, m.test_users
            ));
        }
        s
    }
}
