use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::{Error, Mat, Result};

use super::dataset::{DomainDataset, Interaction};

/// Load a `user<TAB>item<TAB>timestamp` interaction file, applying iterative
/// minimum-interaction filtering until all surviving users and items meet the
/// threshold. `#`-prefixed lines are comments.
pub fn load_domain_tsv(path: impl AsRef<Path>, min_interactions: usize) -> Result<DomainDataset> {
    let text = fs::read_to_string(path.as_ref())?;
    // (user, item, ts, file order), deduplicated keeping earliest timestamp
    let mut raw: Vec<(String, String, i64, usize)> = Vec::new();
    let mut first_seen: HashMap<(String, String), usize> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (user, item, ts) = match (parts.next(), parts.next(), parts.next()) {
            (Some(u), Some(i), Some(t)) if !u.is_empty() && !i.is_empty() => {
                let ts: i64 = t.trim().parse().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: format!("timestamp '{t}' is not an integer"),
                })?;
                (u.to_string(), i.to_string(), ts)
            }
            _ => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: "expected user<TAB>item<TAB>timestamp".into(),
                })
            }
        };
        let key = (user.clone(), item.clone());
        match first_seen.get(&key) {
            Some(&idx) => {
                if ts < raw[idx].2 {
                    raw[idx].2 = ts;
                }
            }
            None => {
                first_seen.insert(key, raw.len());
                raw.push((user, item, ts, lineno));
            }
        }
    }
    if raw.is_empty() {
        return Err(Error::Data("interaction file contains no interactions".into()));
    }

    // fixpoint filter on the deduplicated pairs
    let mut alive = vec![true; raw.len()];
    loop {
        let mut user_count: HashMap<&str, usize> = HashMap::new();
        let mut item_count: HashMap<&str, usize> = HashMap::new();
        for (k, rec) in raw.iter().enumerate() {
            if alive[k] {
                *user_count.entry(rec.0.as_str()).or_default() += 1;
                *item_count.entry(rec.1.as_str()).or_default() += 1;
            }
        }
        let mut changed = false;
        for (k, rec) in raw.iter().enumerate() {
            if alive[k]
                && (user_count[rec.0.as_str()] < min_interactions
                    || item_count[rec.1.as_str()] < min_interactions)
            {
                alive[k] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if !alive.iter().any(|&a| a) {
        return Err(Error::Data(format!(
            "no interactions survive min_interactions = {min_interactions}"
        )));
    }

    // dense indices in order of first appearance among survivors
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    for (k, rec) in raw.iter().enumerate() {
        if !alive[k] {
            continue;
        }
        user_index.entry(rec.0.as_str()).or_insert_with(|| {
            user_ids.push(rec.0.clone());
            user_ids.len() - 1
        });
        item_index.entry(rec.1.as_str()).or_insert_with(|| {
            item_ids.push(rec.1.clone());
            item_ids.len() - 1
        });
    }

    let mut by_user: Vec<Vec<(Interaction, usize)>> = vec![Vec::new(); user_ids.len()];
    for (k, rec) in raw.iter().enumerate() {
        if !alive[k] {
            continue;
        }
        by_user[user_index[rec.0.as_str()]].push((
            Interaction {
                item: item_index[rec.1.as_str()],
                timestamp: rec.2,
            },
            rec.3,
        ));
    }
    // per user: timestamp order, ties broken by file order
    let by_user = by_user
        .into_iter()
        .map(|mut v| {
            v.sort_by_key(|(i, order)| (i.timestamp, *order));
            v.into_iter().map(|(i, _)| i).collect()
        })
        .collect();

    let ds = DomainDataset {
        user_ids,
        item_ids,
        by_user,
        item_features: None,
        user_features: None,
    };
    ds.validate()?;
    Ok(ds)
}

/// Load a whitespace-separated feature file with header `n d_raw`.
pub fn load_feature_file(path: impl AsRef<Path>) -> Result<Mat> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (lineno, header) = lines
        .next()
        .ok_or_else(|| Error::Data("feature file is empty".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: "header must be 'n d_raw'".into(),
        })?;
    if dims.len() != 2 {
        return Err(Error::Parse {
            line: lineno + 1,
            msg: "header must be 'n d_raw'".into(),
        });
    }
    let (n, d) = (dims[0], dims[1]);
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (lineno, line) in lines {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: "non-numeric feature value".into(),
            })?;
        if vals.len() != d {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected {d} values, got {}", vals.len()),
            });
        }
        data.extend(vals);
        rows += 1;
    }
    if rows != n {
        return Err(Error::Data(format!("feature file declared {n} rows, found {rows}")));
    }
    Mat::from_vec(n, d, data)
}
