use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Mat, Result};

/// Which of the two domains an interaction or score refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::A => "A",
            Domain::B => "B",
        }
    }
}

/// One interaction: item index plus integer timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub item: usize,
    pub timestamp: i64,
}

/// A single domain's implicit-feedback data over densely indexed users/items.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// Per user, interactions sorted by (timestamp, original file order).
    pub by_user: Vec<Vec<Interaction>>,
    /// Optional raw item features, row order matching item indices.
    pub item_features: Option<Mat>,
    /// Optional raw user features, row order matching user indices.
    pub user_features: Option<Mat>,
}

impl DomainDataset {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.by_user.iter().map(|v| v.len()).sum()
    }

    /// Sorted set of items the user has interacted with.
    pub fn interacted(&self, user: usize) -> BTreeSet<usize> {
        self.by_user[user].iter().map(|i| i.item).collect()
    }

    pub fn density(&self) -> f64 {
        let cells = self.num_users() * self.num_items();
        if cells == 0 {
            0.0
        } else {
            self.num_interactions() as f64 / cells as f64
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.by_user.len() != self.user_ids.len() {
            return Err(Error::Data("by_user length != user count".into()));
        }
        for (u, inters) in self.by_user.iter().enumerate() {
            if inters.is_empty() {
                return Err(Error::Data(format!("user {u} has no interactions")));
            }
            let mut seen = BTreeSet::new();
            for i in inters {
                if i.item >= self.item_ids.len() {
                    return Err(Error::Data(format!(
                        "user {u}: item index {} out of range",
                        i.item
                    )));
                }
                if !seen.insert(i.item) {
                    return Err(Error::Data(format!(
                        "user {u}: duplicate interaction with item {}",
                        i.item
                    )));
                }
            }
        }
        if let Some(f) = &self.item_features {
            if f.rows() != self.item_ids.len() {
                return Err(Error::Data("item feature rows != item count".into()));
            }
        }
        Ok(())
    }
}

/// Two domains over an identical ordered common-user list.
#[derive(Debug, Clone)]
pub struct DualDomainDataset {
    pub domain_a: DomainDataset,
    pub domain_b: DomainDataset,
}

impl DualDomainDataset {
    /// Pair two domains, restricting both to their common users (kept in
    /// domain A's order) and re-validating.
    pub fn pair(a: DomainDataset, b: DomainDataset) -> Result<Self> {
        let b_index: std::collections::HashMap<&str, usize> = b
            .user_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut keep_a = Vec::new();
        let mut keep_b = Vec::new();
        for (ua, id) in a.user_ids.iter().enumerate() {
            if let Some(&ub) = b_index.get(id.as_str()) {
                keep_a.push(ua);
                keep_b.push(ub);
            }
        }
        if keep_a.is_empty() {
            return Err(Error::Data("domains share no users".into()));
        }
        let restrict = |d: &DomainDataset, keep: &[usize]| DomainDataset {
            user_ids: keep.iter().map(|&u| d.user_ids[u].clone()).collect(),
            item_ids: d.item_ids.clone(),
            by_user: keep.iter().map(|&u| d.by_user[u].clone()).collect(),
            item_features: d.item_features.clone(),
            user_features: d.user_features.as_ref().map(|f| f.select_rows(keep)),
        };
        let dual = DualDomainDataset {
            domain_a: restrict(&a, &keep_a),
            domain_b: restrict(&b, &keep_b),
        };
        dual.validate()?;
        Ok(dual)
    }

    pub fn num_users(&self) -> usize {
        self.domain_a.num_users()
    }

    pub fn users(&self) -> &[String] {
        &self.domain_a.user_ids
    }

    pub fn domain(&self, d: Domain) -> &DomainDataset {
        match d {
            Domain::A => &self.domain_a,
            Domain::B => &self.domain_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.domain_a.validate()?;
        self.domain_b.validate()?;
        if self.domain_a.user_ids != self.domain_b.user_ids {
            return Err(Error::Data("domains do not share an identical user list".into()));
        }
        Ok(())
    }
}
