use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{
    sample_train_negatives, Domain, DualDomainDataset, LeaveOneOutSplit, TrainSample,
};
use crate::numeric::{adam_step, AdamState, MlpGrads, MlpParams};
use crate::{Error, Mat, Result};

use super::encoder::Encoder;
use super::graph::BipartiteGraph;
use super::model::{bce_logit, BackboneConfig, BackboneParams, BundleGrads, PreferenceBundle};

/// Sampled-negative cross-entropy on dot-product scores for one domain's
/// batch. Adds upstream gradients into `d_user` / `d_item` scaled by
/// `1 / pair_count` (the joint mean over all scored pairs in the step).
fn interaction_loss(
    user: &Mat,
    item: &Mat,
    samples: &[TrainSample],
    pair_count: usize,
    d_user: &mut Mat,
    d_item: &mut Mat,
) -> f64 {
    let scale = 1.0 / pair_count as f64;
    let d = user.cols();
    let mut loss = 0.0;
    for s in samples {
        let urow: Vec<f64> = user.row(s.user).to_vec();
        let mut du = vec![0.0; d];
        let mut score_one = |i: usize, y: f64, du: &mut [f64], loss: &mut f64| {
            let logit: f64 = urow.iter().zip(item.row(i)).map(|(a, b)| a * b).sum();
            let (l, dl) = bce_logit(logit, y);
            *loss += scale * l;
            let g = scale * dl;
            let irow = item.row(i);
            for k in 0..d {
                du[k] += g * irow[k];
            }
            let drow = d_item.row_mut(i);
            for k in 0..d {
                drow[k] += g * urow[k];
            }
        };
        score_one(s.positive, 1.0, &mut du, &mut loss);
        for &n in &s.negatives {
            score_one(n, 0.0, &mut du, &mut loss);
        }
        let drow = d_user.row_mut(s.user);
        for k in 0..d {
            drow[k] += du[k];
        }
    }
    loss
}

/// Domain-classification loss on the specific components (labels: A = 1,
/// B = 0) plus the uniform-target confusion loss on the shared component.
///
/// Returns (loss, classifier grads, dZ_spe^A, dZ_spe^B, dZ_sha).
pub(crate) fn classifier_losses(
    classifier: &MlpParams,
    z_spe_a: &Mat,
    z_spe_b: &Mat,
    z_sha: &Mat,
    class_weight: f64,
    confusion_weight: f64,
) -> Result<(f64, MlpGrads, Mat, Mat, Mat)> {
    let m = z_spe_a.rows();
    let mut grads = MlpGrads::zeros_like(classifier);
    let mut loss = 0.0;

    let mut run = |z: &Mat, target: f64, weight: f64, norm: f64| -> Result<Mat> {
        let (logits, cache) = classifier.forward_cached(z)?;
        let mut upstream = Mat::zeros(logits.rows(), 1);
        for r in 0..logits.rows() {
            let (l, dl) = bce_logit(logits.get(r, 0), target);
            loss += weight * l / norm;
            upstream.set(r, 0, weight * dl / norm);
        }
        let (g, dz) = classifier.backward(&cache, &upstream)?;
        grads.add_assign(&g)?;
        Ok(dz)
    };

    let dz_spe_a = run(z_spe_a, 1.0, class_weight, 2.0 * m as f64)?;
    let dz_spe_b = run(z_spe_b, 0.0, class_weight, 2.0 * m as f64)?;
    let dz_sha = run(z_sha, 0.5, confusion_weight, m as f64)?;
    Ok((loss, grads, dz_spe_a, dz_spe_b, dz_sha))
}

/// Orthogonality penalty weight * ||Z_spe^T Z_sha||_F^2 / m for one domain;
/// adds gradients into the component grads.
fn orthogonality_loss(
    z_spe: &Mat,
    z_sha: &Mat,
    weight: f64,
    d_spe: &mut Mat,
    d_sha: &mut Mat,
) -> Result<f64> {
    let m = z_spe.rows() as f64;
    let cross = z_spe.matmul_tn(z_sha)?; // d x d
    let loss = weight * cross.data().iter().map(|v| v * v).sum::<f64>() / m;
    let s = 2.0 * weight / m;
    d_spe.add_assign(&z_sha.matmul_nt(&cross)?.scale(s))?;
    d_sha.add_assign(&z_spe.matmul(&cross)?.scale(s))?;
    Ok(loss)
}

/// Full Phase-1 loss and flat parameter gradient for one joint batch.
pub fn phase1_loss(
    params: &BackboneParams,
    graph_a: &BipartiteGraph,
    graph_b: &BipartiteGraph,
    batch_a: &[TrainSample],
    batch_b: &[TrainSample],
    cfg: &BackboneConfig,
) -> Result<(f64, Vec<f64>)> {
    let (bundle, cache) = params.forward(graph_a, graph_b)?;
    let mut grads = BundleGrads::zeros(params, &bundle);
    let mut loss = 0.0;

    let pair = |b: &[TrainSample]| -> usize { b.iter().map(|s| 1 + s.negatives.len()).sum() };
    let pairs = pair(batch_a) + pair(batch_b);
    if pairs > 0 {
        loss += interaction_loss(
            &bundle.user_a,
            &bundle.item_a,
            batch_a,
            pairs,
            &mut grads.user_a,
            &mut grads.item_a,
        );
        loss += interaction_loss(
            &bundle.user_b,
            &bundle.item_b,
            batch_b,
            pairs,
            &mut grads.user_b,
            &mut grads.item_b,
        );
    }

    let (cls_loss, cls_grads, dz_spe_a, dz_spe_b, dz_sha) = classifier_losses(
        &params.classifier,
        &bundle.z_spe_a,
        &bundle.z_spe_b,
        &bundle.z_sha,
        cfg.class_weight,
        cfg.confusion_weight,
    )?;
    loss += cls_loss;
    grads.classifier = cls_grads;
    grads.z_spe_a.add_assign(&dz_spe_a)?;
    grads.z_spe_b.add_assign(&dz_spe_b)?;
    grads.z_sha.add_assign(&dz_sha)?;

    loss += orthogonality_loss(
        &bundle.z_spe_a,
        &bundle.z_sha,
        cfg.orth_weight,
        &mut grads.z_spe_a,
        &mut grads.z_sha,
    )?;
    loss += orthogonality_loss(
        &bundle.z_spe_b,
        &bundle.z_sha,
        cfg.orth_weight,
        &mut grads.z_spe_b,
        &mut grads.z_sha,
    )?;

    let flat = params.backward(graph_a, graph_b, &bundle, &cache, &grads)?;
    Ok((loss, flat))
}

/// Initialize backbone parameters for a dataset: learnable ID tables for
/// users, feature maps for items when raw features are present, and the
/// augmented view aimed at the sparser domain.
pub fn init_backbone(
    ds: &DualDomainDataset,
    cfg: &BackboneConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BackboneParams> {
    let m = ds.num_users();
    let user_a = Encoder::table(m, cfg.dim, cfg.init_scale, rng);
    let user_b = Encoder::table(m, cfg.dim, cfg.init_scale, rng);
    let mk_item = |d: &crate::dataio::DomainDataset, rng: &mut ChaCha8Rng| -> Result<Encoder> {
        match &d.item_features {
            Some(raw) => Encoder::features(raw.clone(), cfg.dim, cfg.init_scale, rng),
            None => Ok(Encoder::table(d.num_items(), cfg.dim, cfg.init_scale, rng)),
        }
    };
    let item_a = mk_item(&ds.domain_a, rng)?;
    let item_b = mk_item(&ds.domain_b, rng)?;
    let augment_domain = if ds.domain_a.num_interactions() <= ds.domain_b.num_interactions() {
        Domain::A
    } else {
        Domain::B
    };
    BackboneParams::init(user_a, user_b, item_a, item_b, cfg, augment_domain, rng)
}

/// Phase 1: joint pretraining over both domains.
pub fn pretrain(
    ds: &DualDomainDataset,
    split: &LeaveOneOutSplit,
    cfg: &BackboneConfig,
    seed: u64,
) -> Result<(BackboneParams, PreferenceBundle)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_backbone(ds, cfg, &mut rng)?;
    let graph_a = BipartiteGraph::from_train(&split.domain_a.train, ds.domain_a.num_items())?;
    let graph_b = BipartiteGraph::from_train(&split.domain_b.train, ds.domain_b.num_items())?;

    let mut flat = Vec::with_capacity(params.param_len());
    params.append_params(&mut flat);
    let mut adam = AdamState::new(flat.len());

    for epoch in 0..cfg.epochs {
        let sample_seed: u64 = rng.gen();
        let samples_a =
            sample_train_negatives(&split.domain_a, &ds.domain_a, cfg.train_negatives, sample_seed)?;
        let samples_b = sample_train_negatives(
            &split.domain_b,
            &ds.domain_b,
            cfg.train_negatives,
            sample_seed.wrapping_add(1),
        )?;
        let mut tagged: Vec<(Domain, TrainSample)> = samples_a
            .into_iter()
            .map(|s| (Domain::A, s))
            .chain(samples_b.into_iter().map(|s| (Domain::B, s)))
            .collect();
        // joint shuffle so each batch mixes both domains
        for i in (1..tagged.len()).rev() {
            let j = rng.gen_range(0..=i);
            tagged.swap(i, j);
        }
        for (batch_idx, chunk) in tagged.chunks(cfg.batch_size.max(1)).enumerate() {
            let batch_a: Vec<TrainSample> = chunk
                .iter()
                .filter(|(d, _)| *d == Domain::A)
                .map(|(_, s)| s.clone())
                .collect();
            let batch_b: Vec<TrainSample> = chunk
                .iter()
                .filter(|(d, _)| *d == Domain::B)
                .map(|(_, s)| s.clone())
                .collect();
            let (loss, grads) = phase1_loss(&params, &graph_a, &graph_b, &batch_a, &batch_b, cfg)?;
            if !loss.is_finite() {
                let pnorm: f64 = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
                return Err(Error::NonFinite(format!(
                    "phase-1 loss at epoch {epoch}, batch {batch_idx} (parameter norm {pnorm:.4})"
                )));
            }
            adam_step(&mut flat, &grads, &mut adam, cfg.lr)?;
            params.read_params(&flat);
        }
    }

    let (bundle, _) = params.forward(&graph_a, &graph_b)?;
    bundle.validate()?;
    Ok((params, bundle))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::dataio::{generate_synthetic, leave_one_out_split, SyntheticConfig};
    use crate::numeric::{grad_check, Activation};

    fn tiny_config() -> BackboneConfig {
        BackboneConfig {
            dim: 3,
            layers: 1,
            classifier_hidden: 4,
            epochs: 2,
            batch_size: 8,
            train_negatives: 2,
            lr: 0.01,
            ..Default::default()
        }
    }

    fn tiny_dataset(seed: u64) -> DualDomainDataset {
        let cfg = SyntheticConfig {
            users: 8,
            items_a: 12,
            items_b: 12,
            latent_dim: 5,
            sdc_a: 1,
            sdc_b: 1,
            cdc: 1,
            density: 0.25,
            ..Default::default()
        };
        generate_synthetic(&cfg, seed).unwrap().0
    }

    #[test]
    fn zero_classifier_confusion_is_ln2() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut classifier =
            MlpParams::init(&[3, 4, 1], &[Activation::Tanh, Activation::Identity], 0.1, &mut rng)
                .unwrap();
        for l in &mut classifier.layers {
            l.weight.data_mut().fill(0.0);
            l.bias.fill(0.0);
        }
        let z = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0]]).unwrap();
        // class_weight 0 isolates the confusion term; zero classifier outputs
        // logit 0 -> prediction 0.5 -> loss ln 2 per row
        let (loss, grads, _, _, dz_sha) =
            classifier_losses(&classifier, &z, &z, &z, 0.0, 1.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        // at the uniform optimum the confusion gradient vanishes
        assert!(dz_sha.data().iter().all(|&v| v.abs() < 1e-12));
        let mut g = Vec::new();
        grads.append_to(&mut g);
        // weight gradients into the logit layer vanish too (sigma(0) = 0.5)
        assert!(g.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn symmetric_bce_pair_is_ln2() {
        // zero embeddings: every logit 0, prediction 0.5 on one positive and
        // one negative -> mean pair loss ln 2 (sum 2 ln 2 over the 2 pairs)
        let user = Mat::zeros(1, 3);
        let item = Mat::zeros(4, 3);
        let mut du = Mat::zeros(1, 3);
        let mut di = Mat::zeros(4, 3);
        let samples = vec![TrainSample {
            user: 0,
            positive: 0,
            negatives: vec![1],
        }];
        let loss = interaction_loss(&user, &item, &samples, 2, &mut du, &mut di);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn phase1_gradients_match_finite_differences() {
        let ds = tiny_dataset(4);
        let split = leave_one_out_split(&ds, 3, 0).unwrap();
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = init_backbone(&ds, &cfg, &mut rng).unwrap();
        // move off the identity-head init so all paths are active
        let mut flat = Vec::new();
        params.append_params(&mut flat);
        let mut prng = ChaCha8Rng::seed_from_u64(99);
        use rand::Rng;
        for v in flat.iter_mut() {
            *v += 0.1 * (prng.gen::<f64>() - 0.5);
        }
        params.read_params(&flat);

        let graph_a = BipartiteGraph::from_train(&split.domain_a.train, ds.domain_a.num_items()).unwrap();
        let graph_b = BipartiteGraph::from_train(&split.domain_b.train, ds.domain_b.num_items()).unwrap();
        let batch_a = sample_train_negatives(&split.domain_a, &ds.domain_a, 2, 5).unwrap();
        let batch_b = sample_train_negatives(&split.domain_b, &ds.domain_b, 2, 6).unwrap();

        let template = params.clone();
        let f = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut m = template.clone();
            m.read_params(p);
            phase1_loss(&m, &graph_a, &graph_b, &batch_a, &batch_b, &cfg)
        };
        let err = grad_check(f, &flat, 1e-6).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn pretrain_deterministic() {
        let ds = tiny_dataset(7);
        let split = leave_one_out_split(&ds, 3, 1).unwrap();
        let cfg = tiny_config();
        let (p1, b1) = pretrain(&ds, &split, &cfg, 21).unwrap();
        let (p2, b2) = pretrain(&ds, &split, &cfg, 21).unwrap();
        let (mut f1, mut f2) = (Vec::new(), Vec::new());
        p1.append_params(&mut f1);
        p2.append_params(&mut f2);
        assert_eq!(f1, f2);
        assert_eq!(b1.user_a, b2.user_a);
        assert_eq!(b1.item_b, b2.item_b);
    }

    #[test]
    fn pretrain_reduces_loss() {
        let ds = tiny_dataset(2);
        let split = leave_one_out_split(&ds, 3, 2).unwrap();
        let mut cfg = tiny_config();
        cfg.epochs = 15;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init = init_backbone(&ds, &cfg, &mut rng).unwrap();
        let graph_a = BipartiteGraph::from_train(&split.domain_a.train, ds.domain_a.num_items()).unwrap();
        let graph_b = BipartiteGraph::from_train(&split.domain_b.train, ds.domain_b.num_items()).unwrap();
        let batch_a = sample_train_negatives(&split.domain_a, &ds.domain_a, 2, 1).unwrap();
        let batch_b = sample_train_negatives(&split.domain_b, &ds.domain_b, 2, 2).unwrap();
        let (loss_init, _) =
            phase1_loss(&init, &graph_a, &graph_b, &batch_a, &batch_b, &cfg).unwrap();
        let (trained, _) = pretrain(&ds, &split, &cfg, 3).unwrap();
        let (loss_trained, _) =
            phase1_loss(&trained, &graph_a, &graph_b, &batch_a, &batch_b, &cfg).unwrap();
        assert!(
            loss_trained < loss_init,
            "training did not reduce the loss: {loss_init} -> {loss_trained}"
        );
    }
}
