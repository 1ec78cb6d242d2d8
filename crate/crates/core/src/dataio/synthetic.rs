use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Mat, Result};

use super::dataset::{DomainDataset, DualDomainDataset, Interaction};

/// Configuration for the confounded synthetic generator.
///
/// The generative model realizes both causal paths of a planted confounder:
/// its vector shifts the preferences of exposed users (C -> Z), and its
/// scalar weight boosts the interaction logit on exposed (user, item) pairs
/// (C -> Y). A pair is exposed when the user is in the confounder's user
/// subset and the item is in its item subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items_a: usize,
    pub items_b: usize,
    pub latent_dim: usize,
    /// Planted single-domain confounders per domain.
    pub sdc_a: usize,
    pub sdc_b: usize,
    /// Planted cross-domain confounders (shared vector, both domains).
    pub cdc: usize,
    pub beta_sd: f64,
    pub beta_cd: f64,
    /// Target interaction density per domain.
    pub density: f64,
    /// Fraction of items each confounder attaches to.
    pub item_exposure: f64,
    /// Fraction of users exposed to each confounder.
    pub user_exposure: f64,
    /// Strength of the linear link between the two domains' specific
    /// preference components: spe_B = spe_A (I + link G).
    pub specific_link: f64,
    /// Weight of the specific component inside comprehensive preferences
    /// (the rest is a per-domain independent component).
    pub specific_weight: f64,
    /// Weight of a user component shared verbatim across both domains.
    pub shared_weight: f64,
    /// Scale applied to the preference dot product in the logit.
    pub pref_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 500,
            items_a: 800,
            items_b: 800,
            latent_dim: 16,
            sdc_a: 2,
            sdc_b: 2,
            cdc: 1,
            beta_sd: 1.0,
            beta_cd: 1.0,
            density: 0.02,
            item_exposure: 0.3,
            user_exposure: 0.5,
            specific_link: 0.05,
            specific_weight: 0.3,
            shared_weight: 0.0,
            pref_scale: 4.0,
        }
    }
}

/// A planted single-domain confounder.
#[derive(Debug, Clone)]
pub struct PlantedSdc {
    pub vector: Vec<f64>,
    pub weight: f64,
    pub user_mask: Vec<bool>,
    pub item_mask: Vec<bool>,
}

/// A planted cross-domain confounder: one vector, exposure in both domains.
#[derive(Debug, Clone)]
pub struct PlantedCdc {
    pub vector: Vec<f64>,
    pub weight: f64,
    pub user_mask: Vec<bool>,
    pub item_mask_a: Vec<bool>,
    pub item_mask_b: Vec<bool>,
}

/// Everything the generator knows that a learner is not shown.
#[derive(Debug, Clone)]
pub struct SyntheticGroundTruth {
    pub config: SyntheticConfig,
    pub sdc_a: Vec<PlantedSdc>,
    pub sdc_b: Vec<PlantedSdc>,
    pub cdc: Vec<PlantedCdc>,
    /// Clean domain-specific user components.
    pub spe_a: Mat,
    pub spe_b: Mat,
    /// Specific components after planted-SDC shifts.
    pub confounded_spe_a: Mat,
    pub confounded_spe_b: Mat,
    /// Comprehensive user preferences after all confounder shifts; these are
    /// what an ideal (but confounded) learner would recover.
    pub pref_a: Mat,
    pub pref_b: Mat,
    pub item_factors_a: Mat,
    pub item_factors_b: Mat,
    pub bias_a: f64,
    pub bias_b: f64,
}

/// Generate a dual-domain dataset with planted confounders.
pub fn generate_synthetic(
    cfg: &SyntheticConfig,
    seed: u64,
) -> Result<(DualDomainDataset, SyntheticGroundTruth)> {
    validate_config(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, d) = (cfg.users, cfg.latent_dim);

    let spe_a = factor_matrix(m, d, &mut rng);
    // spe_B = spe_A (I + link * G / sqrt(d))
    let mut link = Mat::identity(d);
    {
        let normal = Normal::new(0.0, cfg.specific_link / (d as f64).sqrt()).unwrap();
        for r in 0..d {
            for c in 0..d {
                let v = link.get(r, c) + normal.sample(&mut rng);
                link.set(r, c, v);
            }
        }
    }
    let spe_b = spe_a.matmul(&link)?;
    let shared = factor_matrix(m, d, &mut rng);
    let ind_a = factor_matrix(m, d, &mut rng);
    let ind_b = factor_matrix(m, d, &mut rng);
    let item_factors_a = factor_matrix(cfg.items_a, d, &mut rng);
    let item_factors_b = factor_matrix(cfg.items_b, d, &mut rng);

    // orthonormal planted directions across all confounders
    let total_conf = cfg.sdc_a + cfg.sdc_b + cfg.cdc;
    let dirs = orthonormal_directions(d, total_conf, &mut rng)?;
    let mut dir_iter = dirs.into_iter();
    let mask = |rng: &mut ChaCha8Rng, len: usize, rate: f64| -> Vec<bool> {
        (0..len).map(|_| rng.gen::<f64>() < rate).collect()
    };
    let sdc_a: Vec<PlantedSdc> = (0..cfg.sdc_a)
        .map(|_| PlantedSdc {
            vector: dir_iter.next().unwrap(),
            weight: cfg.beta_sd,
            user_mask: mask(&mut rng, m, cfg.user_exposure),
            item_mask: mask(&mut rng, cfg.items_a, cfg.item_exposure),
        })
        .collect();
    let sdc_b: Vec<PlantedSdc> = (0..cfg.sdc_b)
        .map(|_| PlantedSdc {
            vector: dir_iter.next().unwrap(),
            weight: cfg.beta_sd,
            user_mask: mask(&mut rng, m, cfg.user_exposure),
            item_mask: mask(&mut rng, cfg.items_b, cfg.item_exposure),
        })
        .collect();
    let cdc: Vec<PlantedCdc> = (0..cfg.cdc)
        .map(|_| PlantedCdc {
            vector: dir_iter.next().unwrap(),
            weight: cfg.beta_cd,
            user_mask: mask(&mut rng, m, cfg.user_exposure),
            item_mask_a: mask(&mut rng, cfg.items_a, cfg.item_exposure),
            item_mask_b: mask(&mut rng, cfg.items_b, cfg.item_exposure),
        })
        .collect();

    // C -> Z: shift exposed users' preference components
    let mut confounded_spe_a = spe_a.clone();
    for c in &sdc_a {
        add_shift(&mut confounded_spe_a, &c.user_mask, c.weight, &c.vector);
    }
    let mut confounded_spe_b = spe_b.clone();
    for c in &sdc_b {
        add_shift(&mut confounded_spe_b, &c.user_mask, c.weight, &c.vector);
    }
    let mut pref_a = combine(
        &confounded_spe_a,
        cfg.specific_weight,
        &ind_a,
        &shared,
        cfg.shared_weight,
    )?;
    let mut pref_b = combine(
        &confounded_spe_b,
        cfg.specific_weight,
        &ind_b,
        &shared,
        cfg.shared_weight,
    )?;
    for c in &cdc {
        add_shift(&mut pref_a, &c.user_mask, c.weight, &c.vector);
        add_shift(&mut pref_b, &c.user_mask, c.weight, &c.vector);
    }

    // C -> Y: logits with direct exposure effects, bias calibrated to density
    let logits_a = domain_logits(cfg, &pref_a, &item_factors_a, &sdc_a, &cdc, true)?;
    let logits_b = domain_logits(cfg, &pref_b, &item_factors_b, &sdc_b, &cdc, false)?;
    let bias_a = calibrate_bias(&logits_a, cfg.density)?;
    let bias_b = calibrate_bias(&logits_b, cfg.density)?;

    let domain_a = sample_domain(cfg, &logits_a, bias_a, cfg.items_a, "a", &mut rng)?;
    let domain_b = sample_domain(cfg, &logits_b, bias_b, cfg.items_b, "b", &mut rng)?;

    let dataset = DualDomainDataset::pair(domain_a, domain_b)?;
    let truth = SyntheticGroundTruth {
        config: cfg.clone(),
        sdc_a,
        sdc_b,
        cdc,
        spe_a,
        spe_b,
        confounded_spe_a,
        confounded_spe_b,
        pref_a,
        pref_b,
        item_factors_a,
        item_factors_b,
        bias_a,
        bias_b,
    };
    Ok((dataset, truth))
}

fn validate_config(cfg: &SyntheticConfig) -> Result<()> {
    if cfg.users == 0 || cfg.items_a == 0 || cfg.items_b == 0 || cfg.latent_dim == 0 {
        return Err(Error::InvalidArg("synthetic sizes must be positive".into()));
    }
    if !(cfg.density > 0.0 && cfg.density < 1.0) {
        return Err(Error::InvalidArg(format!(
            "target density must be in (0, 1), got {}",
            cfg.density
        )));
    }
    if cfg.sdc_a + cfg.sdc_b + cfg.cdc > cfg.latent_dim {
        return Err(Error::InvalidArg(format!(
            "cannot plant {} orthogonal confounders in dimension {}",
            cfg.sdc_a + cfg.sdc_b + cfg.cdc,
            cfg.latent_dim
        )));
    }
    if !cfg.beta_sd.is_finite() || !cfg.beta_cd.is_finite() {
        return Err(Error::NonFinite("confounder effect weights must be finite".into()));
    }
    Ok(())
}

/// Rows ~ N(0, 1/d) entries, rescaled into the unit-scale band [0.5, 2].
fn factor_matrix(rows: usize, d: usize, rng: &mut ChaCha8Rng) -> Mat {
    let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).unwrap();
    let mut m = Mat::from_vec(
        rows,
        d,
        (0..rows * d).map(|_| normal.sample(rng)).collect(),
    )
    .expect("sized by construction");
    for r in 0..rows {
        let row = m.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 0.5 || norm > 2.0 {
            let target = norm.clamp(0.5, 2.0);
            let s = if norm > 0.0 { target / norm } else { 0.0 };
            for v in row {
                *v *= s;
            }
        }
    }
    m
}

fn orthonormal_directions(d: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while dirs.len() < k {
        attempts += 1;
        if attempts > 100 * k.max(1) {
            return Err(Error::InvalidArg(
                "failed to draw orthonormal confounder directions".into(),
            ));
        }
        let mut v: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
        for prev in &dirs {
            let p: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(prev) {
                *x -= p * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in &mut v {
                *x /= norm;
            }
            dirs.push(v);
        }
    }
    Ok(dirs)
}

fn add_shift(m: &mut Mat, user_mask: &[bool], weight: f64, vector: &[f64]) {
    for u in 0..m.rows() {
        if user_mask[u] {
            for (x, v) in m.row_mut(u).iter_mut().zip(vector) {
                *x += weight * v;
            }
        }
    }
}

fn combine(spe: &Mat, spe_w: f64, ind: &Mat, shared: &Mat, shared_w: f64) -> Result<Mat> {
    let mut out = spe.scale(spe_w);
    out.add_assign(ind)?;
    if shared_w != 0.0 {
        out.add_assign(&shared.scale(shared_w))?;
    }
    Ok(out)
}

/// Pre-bias logits for one domain.
fn domain_logits(
    cfg: &SyntheticConfig,
    prefs: &Mat,
    items: &Mat,
    sdcs: &[PlantedSdc],
    cdcs: &[PlantedCdc],
    is_a: bool,
) -> Result<Mat> {
    let mut logits = prefs.matmul_nt(items)?.scale(cfg.pref_scale);
    let n = items.rows();
    for c in sdcs {
        for u in 0..prefs.rows() {
            if !c.user_mask[u] {
                continue;
            }
            let row = logits.row_mut(u);
            for i in 0..n {
                if c.item_mask[i] {
                    row[i] += c.weight;
                }
            }
        }
    }
    for c in cdcs {
        let item_mask = if is_a { &c.item_mask_a } else { &c.item_mask_b };
        for u in 0..prefs.rows() {
            if !c.user_mask[u] {
                continue;
            }
            let row = logits.row_mut(u);
            for i in 0..n {
                if item_mask[i] {
                    row[i] += c.weight;
                }
            }
        }
    }
    Ok(logits)
}

/// Bisection on the additive bias so the mean Bernoulli probability matches
/// the target density.
fn calibrate_bias(logits: &Mat, density: f64) -> Result<f64> {
    let mean_prob = |b: f64| {
        logits
            .data()
            .iter()
            .map(|&l| 1.0 / (1.0 + (-(l + b)).exp()))
            .sum::<f64>()
            / logits.data().len() as f64
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    if mean_prob(lo) > density || mean_prob(hi) < density {
        return Err(Error::InvalidArg(format!(
            "target density {density} is unreachable for the generated logits"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < density {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let bias = 0.5 * (lo + hi);
    if !bias.is_finite() {
        return Err(Error::NonFinite("calibrated bias is non-finite".into()));
    }
    Ok(bias)
}

fn sample_domain(
    cfg: &SyntheticConfig,
    logits: &Mat,
    bias: f64,
    n_items: usize,
    item_prefix: &str,
    rng: &mut ChaCha8Rng,
) -> Result<DomainDataset> {
    let m = cfg.users;
    let mut by_user: Vec<Vec<Interaction>> = Vec::with_capacity(m);
    for u in 0..m {
        let row = logits.row(u);
        let mut items: Vec<usize> = Vec::new();
        for (i, &l) in row.iter().enumerate() {
            let p = 1.0 / (1.0 + (-(l + bias)).exp());
            if rng.gen::<f64>() < p {
                items.push(i);
            }
        }
        // leave-one-out needs at least two interactions per user
        if items.len() < 2 {
            let mut ranked: Vec<usize> = (0..n_items).collect();
            ranked.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
            for i in ranked {
                if items.len() >= 2 {
                    break;
                }
                if !items.contains(&i) {
                    items.push(i);
                }
            }
        }
        // random temporal order
        let mut order: Vec<usize> = (0..items.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut inters: Vec<Interaction> = items
            .iter()
            .zip(&order)
            .map(|(&item, &t)| Interaction {
                item,
                timestamp: t as i64,
            })
            .collect();
        inters.sort_by_key(|i| i.timestamp);
        by_user.push(inters);
    }
    let ds = DomainDataset {
        user_ids: (0..m).map(|u| format!("u{u}")).collect(),
        item_ids: (0..n_items).map(|i| format!("{item_prefix}{i}")).collect(),
        by_user,
        item_features: None,
        user_features: None,
    };
    ds.validate()?;
    Ok(ds)
}
