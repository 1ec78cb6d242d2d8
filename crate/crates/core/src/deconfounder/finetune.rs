use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{bce_logit, BackboneParams, BipartiteGraph, BundleGrads, PreferenceBundle};
use crate::dataio::{
    sample_train_negatives, Domain, DualDomainDataset, LeaveOneOutSplit, TrainSample,
};
use crate::eval::Scorer;
use crate::numeric::{adam_step, dot, AdamState};
use crate::{Error, Mat, Result};

use super::net::{
    predict, selection_logits, ConfounderContext, MixtureNormalization, PredictionNetwork,
};

/// Phase-3 fine-tuning hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub train_negatives: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 20,
            batch_size: 1024,
            lr: 0.001,
            train_negatives: 7,
        }
    }
}

/// Frozen-parameter scorer for evaluation: prediction-network output over the
/// fused preferences and the domain's confounder context.
pub struct DeconfScorer<'a> {
    pub bundle: &'a PreferenceBundle,
    pub net: &'a PredictionNetwork,
    pub ctx_a: &'a ConfounderContext,
    pub ctx_b: &'a ConfounderContext,
}

impl Scorer for DeconfScorer<'_> {
    fn score(&self, user: usize, item: usize, domain: Domain) -> f64 {
        let ctx = match domain {
            Domain::A => self.ctx_a,
            Domain::B => self.ctx_b,
        };
        predict(
            self.bundle.user(domain).row(user),
            self.bundle.item(domain).row(item),
            ctx,
            self.net,
        )
        .unwrap_or(f64::NAN)
    }
}

struct PairRef {
    domain: Domain,
    user: usize,
    item: usize,
    label: f64,
}

/// Per-domain selection intermediates shared across a batch.
struct DomainSelection {
    /// K_u = C W_uc and K_v = C W_vc.
    k_u: Mat,
    k_v: Mat,
    /// Accumulated dL/dK over the batch.
    dk_u: Mat,
    dk_v: Mat,
    prior: f64,
}

/// Cross-entropy fine-tuning loss over one joint batch, differentiated
/// through the prediction network, the backdoor mixture, and the backbone.
///
/// The flat gradient is the backbone gradient followed by the network
/// gradient, matching the concatenation used by [`finetune`].
pub fn phase3_loss(
    backbone: &BackboneParams,
    net: &PredictionNetwork,
    graph_a: &BipartiteGraph,
    graph_b: &BipartiteGraph,
    ctx_a: &ConfounderContext,
    ctx_b: &ConfounderContext,
    batch_a: &[TrainSample],
    batch_b: &[TrainSample],
) -> Result<(f64, Vec<f64>)> {
    let (bundle, cache) = backbone.forward(graph_a, graph_b)?;
    let d = backbone.dim();

    let mut pairs: Vec<PairRef> = Vec::new();
    for (domain, batch) in [(Domain::A, batch_a), (Domain::B, batch_b)] {
        for s in batch {
            pairs.push(PairRef {
                domain,
                user: s.user,
                item: s.positive,
                label: 1.0,
            });
            for &n in &s.negatives {
                pairs.push(PairRef {
                    domain,
                    user: s.user,
                    item: n,
                    label: 0.0,
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArg("phase-3 batch is empty".into()));
    }
    let n_pairs = pairs.len();

    let selection = |ctx: &ConfounderContext| -> Result<Option<DomainSelection>> {
        match ctx {
            ConfounderContext::Fixed { .. } => Ok(None),
            ConfounderContext::Subspace { centroids } => Ok(Some(DomainSelection {
                k_u: centroids.matmul(&net.w_uc)?,
                k_v: centroids.matmul(&net.w_vc)?,
                dk_u: Mat::zeros(centroids.rows(), d),
                dk_v: Mat::zeros(centroids.rows(), d),
                prior: match net.mixture {
                    MixtureNormalization::Literal => 1.0 / centroids.rows() as f64,
                    MixtureNormalization::Renormalized => 1.0,
                },
            })),
        }
    };
    let mut sel_a = selection(ctx_a)?;
    let mut sel_b = selection(ctx_b)?;

    // forward: concat rows, remembering per-pair selection weights
    let mut concat = Mat::zeros(n_pairs, 3 * d);
    let mut phis: Vec<Option<(Vec<f64>, Vec<f64>)>> = Vec::with_capacity(n_pairs);
    for (r, p) in pairs.iter().enumerate() {
        let e_u = bundle.user(p.domain).row(p.user);
        let e_v = bundle.item(p.domain).row(p.item);
        let ctx = if p.domain == Domain::A { ctx_a } else { ctx_b };
        let row = concat.row_mut(r);
        row[..d].copy_from_slice(e_u);
        row[d..2 * d].copy_from_slice(e_v);
        match ctx {
            ConfounderContext::Fixed { vector } => {
                row[2 * d..].copy_from_slice(vector);
                phis.push(None);
            }
            ConfounderContext::Subspace { centroids } => {
                let (lu, lv) = selection_logits(e_u, e_v, centroids, net)?;
                let pu = crate::backbone::softmax_slice(&lu);
                let pv = crate::backbone::softmax_slice(&lv);
                let sel = if p.domain == Domain::A {
                    sel_a.as_ref().unwrap()
                } else {
                    sel_b.as_ref().unwrap()
                };
                for c in 0..centroids.rows() {
                    let w = sel.prior * 0.5 * (pu[c] + pv[c]);
                    for (o, &cv) in row[2 * d..].iter_mut().zip(centroids.row(c)) {
                        *o += w * cv;
                    }
                }
                phis.push(Some((pu, pv)));
            }
        }
    }

    let (q_in, fusion_cache) = net.fusion.forward_cached(&concat)?;
    let (logits, mlp_cache) = net.mlp.forward_cached(&q_in)?;

    let mut loss = 0.0;
    let mut upstream = Mat::zeros(n_pairs, 1);
    let scale = 1.0 / n_pairs as f64;
    for (r, p) in pairs.iter().enumerate() {
        let (l, dl) = bce_logit(logits.get(r, 0), p.label);
        loss += scale * l;
        upstream.set(r, 0, scale * dl);
    }

    let (mlp_grads, d_qin) = net.mlp.backward(&mlp_cache, &upstream)?;
    let (fusion_grads, d_concat) = net.fusion.backward(&fusion_cache, &d_qin)?;

    // route concat gradients into the bundle and the selection matrices
    let mut bundle_grads = BundleGrads::zeros(backbone, &bundle);
    let mut d_w_u = Mat::zeros(d, d);
    let mut d_w_v = Mat::zeros(d, d);
    for (r, p) in pairs.iter().enumerate() {
        let e_u = bundle.user(p.domain).row(p.user).to_vec();
        let e_v = bundle.item(p.domain).row(p.item).to_vec();
        let g = d_concat.row(r);
        let (g_eu_direct, g_ev_direct, g_mix) = (&g[..d], &g[d..2 * d], &g[2 * d..]);
        let mut g_eu = g_eu_direct.to_vec();
        let mut g_ev = g_ev_direct.to_vec();

        let (ctx, sel) = if p.domain == Domain::A {
            (ctx_a, &mut sel_a)
        } else {
            (ctx_b, &mut sel_b)
        };
        if let (ConfounderContext::Subspace { centroids }, Some(sel), Some((pu, pv))) =
            (ctx, sel.as_mut(), &phis[r])
        {
            // d phi_c = prior * <g_mix, C_c>; halved softmax splits evenly
            let dphi: Vec<f64> = (0..centroids.rows())
                .map(|c| sel.prior * dot(g_mix, centroids.row(c)))
                .collect();
            let softmax_back = |p: &[f64], dp: &[f64]| -> Vec<f64> {
                let inner = dot(p, dp);
                p.iter().zip(dp).map(|(a, b)| a * (b - inner)).collect()
            };
            let dpu: Vec<f64> = dphi.iter().map(|v| 0.5 * v).collect();
            let ds_u = softmax_back(pu, &dpu);
            let ds_v = softmax_back(pv, &dpu);

            // a_u = e_u W_u; logits_u = K_u a_u
            let mut da_u = vec![0.0; d];
            for (c, &s) in ds_u.iter().enumerate() {
                for (o, &k) in da_u.iter_mut().zip(sel.k_u.row(c)) {
                    *o += s * k;
                }
                // dK_u row c += ds_c * a_u
                let a_u = project_row(&e_u, &net.w_u);
                for (o, &a) in sel.dk_u.row_mut(c).iter_mut().zip(&a_u) {
                    *o += s * a;
                }
            }
            let mut da_v = vec![0.0; d];
            for (c, &s) in ds_v.iter().enumerate() {
                for (o, &k) in da_v.iter_mut().zip(sel.k_v.row(c)) {
                    *o += s * k;
                }
                let a_v = project_row(&e_v, &net.w_v);
                for (o, &a) in sel.dk_v.row_mut(c).iter_mut().zip(&a_v) {
                    *o += s * a;
                }
            }
            // dW_u += outer(e_u, da_u); d e_u += W_u da_u
            for i in 0..d {
                let wrow = net.w_u.row(i);
                let drow = d_w_u.row_mut(i);
                let mut acc = 0.0;
                for j in 0..d {
                    drow[j] += e_u[i] * da_u[j];
                    acc += wrow[j] * da_u[j];
                }
                g_eu[i] += acc;
            }
            for i in 0..d {
                let wrow = net.w_v.row(i);
                let drow = d_w_v.row_mut(i);
                let mut acc = 0.0;
                for j in 0..d {
                    drow[j] += e_v[i] * da_v[j];
                    acc += wrow[j] * da_v[j];
                }
                g_ev[i] += acc;
            }
        }

        let (bu, bi) = match p.domain {
            Domain::A => (&mut bundle_grads.user_a, &mut bundle_grads.item_a),
            Domain::B => (&mut bundle_grads.user_b, &mut bundle_grads.item_b),
        };
        for (o, &v) in bu.row_mut(p.user).iter_mut().zip(&g_eu) {
            *o += v;
        }
        for (o, &v) in bi.row_mut(p.item).iter_mut().zip(&g_ev) {
            *o += v;
        }
    }

    // dW_uc = C^T dK_u, accumulated over both domains
    let mut d_w_uc = Mat::zeros(d, d);
    let mut d_w_vc = Mat::zeros(d, d);
    for (ctx, sel) in [(ctx_a, &sel_a), (ctx_b, &sel_b)] {
        if let (ConfounderContext::Subspace { centroids }, Some(sel)) = (ctx, sel) {
            d_w_uc.add_assign(&centroids.matmul_tn(&sel.dk_u)?)?;
            d_w_vc.add_assign(&centroids.matmul_tn(&sel.dk_v)?)?;
        }
    }

    let mut flat = backbone.backward(graph_a, graph_b, &bundle, &cache, &bundle_grads)?;
    flat.extend_from_slice(d_w_u.data());
    flat.extend_from_slice(d_w_uc.data());
    flat.extend_from_slice(d_w_v.data());
    flat.extend_from_slice(d_w_vc.data());
    fusion_grads.append_to(&mut flat);
    mlp_grads.append_to(&mut flat);
    Ok((loss, flat))
}

fn project_row(row: &[f64], w: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (i, &x) in row.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(w.row(i)) {
            *o += x * wv;
        }
    }
    out
}

/// Phase 3: jointly fine-tune the backbone and the prediction network with
/// frozen confounder centroids.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    backbone: &mut BackboneParams,
    net: &mut PredictionNetwork,
    ctx_a: &ConfounderContext,
    ctx_b: &ConfounderContext,
    ds: &DualDomainDataset,
    split: &LeaveOneOutSplit,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<()> {
    let graph_a = BipartiteGraph::from_train(&split.domain_a.train, ds.domain_a.num_items())?;
    let graph_b = BipartiteGraph::from_train(&split.domain_b.train, ds.domain_b.num_items())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut flat = Vec::with_capacity(backbone.param_len() + net.param_len());
    backbone.append_params(&mut flat);
    net.append_params(&mut flat);
    let backbone_len = backbone.param_len();
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
            let (loss, grads) = phase3_loss(
                backbone, net, &graph_a, &graph_b, ctx_a, ctx_b, &batch_a, &batch_b,
            )?;
            if !loss.is_finite() {
                let pnorm: f64 = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
                return Err(Error::NonFinite(format!(
                    "phase-3 loss at epoch {epoch}, batch {batch_idx} (parameter norm {pnorm:.4})"
                )));
            }
            adam_step(&mut flat, &grads, &mut adam, cfg.lr)?;
            backbone.read_params(&flat[..backbone_len]);
            net.read_params(&flat[backbone_len..]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::init_backbone;
    use crate::backbone::BackboneConfig;
    use crate::dataio::{generate_synthetic, leave_one_out_split, SyntheticConfig};
    use crate::deconfounder::net::PredictionConfig;
    use crate::numeric::grad_check;

    fn toy() -> (
        DualDomainDataset,
        LeaveOneOutSplit,
        BackboneParams,
        PredictionNetwork,
        BipartiteGraph,
        BipartiteGraph,
    ) {
        // 4-user toy instance
        let cfg = SyntheticConfig {
            users: 4,
            items_a: 8,
            items_b: 8,
            latent_dim: 5,
            sdc_a: 1,
            sdc_b: 1,
            cdc: 1,
            density: 0.35,
            ..Default::default()
        };
        let (ds, _) = generate_synthetic(&cfg, 3).unwrap();
        let split = leave_one_out_split(&ds, 3, 0).unwrap();
        let bcfg = BackboneConfig {
            dim: 3,
            layers: 1,
            classifier_hidden: 4,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut backbone = init_backbone(&ds, &bcfg, &mut rng).unwrap();
        // move off the identity-head init so every path carries signal
        let mut flat = Vec::new();
        backbone.append_params(&mut flat);
        let mut prng = ChaCha8Rng::seed_from_u64(31);
        for v in flat.iter_mut() {
            *v += 0.1 * (prng.gen::<f64>() - 0.5);
        }
        backbone.read_params(&flat);
        let ncfg = PredictionConfig {
            fusion_dim: 6,
            hidden1: 5,
            hidden2: 4,
            q: 3,
            init_scale: 0.2,
            ..Default::default()
        };
        let net = PredictionNetwork::init(3, &ncfg, &mut rng).unwrap();
        let graph_a = BipartiteGraph::from_train(&split.domain_a.train, 8).unwrap();
        let graph_b = BipartiteGraph::from_train(&split.domain_b.train, 8).unwrap();
        (ds, split, backbone, net, graph_a, graph_b)
    }

    fn toy_contexts(d: usize) -> (ConfounderContext, ConfounderContext) {
        let ca = Mat::from_rows(&[vec![0.4, -0.2, 0.1], vec![-0.3, 0.5, 0.0]]).unwrap();
        let cb = Mat::from_rows(&[vec![0.2, 0.1, -0.4], vec![0.0, -0.5, 0.3], vec![0.6, 0.0, 0.1]])
            .unwrap();
        assert_eq!(ca.cols(), d);
        (
            ConfounderContext::Subspace { centroids: ca },
            ConfounderContext::Subspace { centroids: cb },
        )
    }

    #[test]
    fn zeroed_scorer_gives_ln2_loss() {
        let (ds, split, backbone, mut net, ga, gb) = toy();
        // zero final layer -> every logit 0 -> per-pair loss exactly ln 2
        let last = net.mlp.layers.last_mut().unwrap();
        last.weight.data_mut().fill(0.0);
        last.bias.fill(0.0);
        let (ctx_a, ctx_b) = toy_contexts(3);
        let batch_a = sample_train_negatives(&split.domain_a, &ds.domain_a, 1, 7).unwrap();
        let (loss, _) = phase3_loss(
            &backbone, &net, &ga, &gb, &ctx_a, &ctx_b, &batch_a[..1], &[],
        )
        .unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn phase3_gradients_match_finite_differences() {
        let (ds, split, backbone, net, ga, gb) = toy();
        let (ctx_a, ctx_b) = toy_contexts(3);
        let batch_a = sample_train_negatives(&split.domain_a, &ds.domain_a, 2, 7).unwrap();
        let batch_b = sample_train_negatives(&split.domain_b, &ds.domain_b, 2, 8).unwrap();

        let mut flat = Vec::new();
        backbone.append_params(&mut flat);
        net.append_params(&mut flat);
        let blen = backbone.param_len();
        let (tb, tn) = (backbone.clone(), net.clone());
        let f = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut b = tb.clone();
            let mut n = tn.clone();
            b.read_params(&p[..blen]);
            n.read_params(&p[blen..]);
            phase3_loss(&b, &n, &ga, &gb, &ctx_a, &ctx_b, &batch_a, &batch_b)
        };
        let err = grad_check(f, &flat, 1e-6).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn phase3_gradients_with_fixed_context() {
        // the no-adjustment comparison path must be differentiable too
        let (ds, split, backbone, net, ga, gb) = toy();
        let ctx_a = ConfounderContext::Fixed { vector: vec![0.3, -0.1, 0.2] };
        let ctx_b = ConfounderContext::empty(3);
        let batch_a = sample_train_negatives(&split.domain_a, &ds.domain_a, 2, 9).unwrap();
        let mut flat = Vec::new();
        backbone.append_params(&mut flat);
        net.append_params(&mut flat);
        let blen = backbone.param_len();
        let (tb, tn) = (backbone.clone(), net.clone());
        let f = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut b = tb.clone();
            let mut n = tn.clone();
            b.read_params(&p[..blen]);
            n.read_params(&p[blen..]);
            phase3_loss(&b, &n, &ga, &gb, &ctx_a, &ctx_b, &batch_a, &[])
        };
        let err = grad_check(f, &flat, 1e-6).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn finetune_deterministic_and_reduces_loss() {
        let (ds, split, backbone, net, ga, gb) = toy();
        let (ctx_a, ctx_b) = toy_contexts(3);
        let cfg = FinetuneConfig {
            epochs: 10,
            batch_size: 16,
            lr: 0.01,
            train_negatives: 2,
        };
        let batch_a = sample_train_negatives(&split.domain_a, &ds.domain_a, 2, 3).unwrap();
        let batch_b = sample_train_negatives(&split.domain_b, &ds.domain_b, 2, 4).unwrap();
        let (loss_before, _) = phase3_loss(
            &backbone, &net, &ga, &gb, &ctx_a, &ctx_b, &batch_a, &batch_b,
        )
        .unwrap();

        let run = || {
            let (mut b, mut n) = (backbone.clone(), net.clone());
            finetune(&mut b, &mut n, &ctx_a, &ctx_b, &ds, &split, &cfg, 17).unwrap();
            (b, n)
        };
        let (b1, n1) = run();
        let (b2, n2) = run();
        let (mut f1, mut f2) = (Vec::new(), Vec::new());
        b1.append_params(&mut f1);
        n1.append_params(&mut f1);
        b2.append_params(&mut f2);
        n2.append_params(&mut f2);
        assert_eq!(f1, f2);

        let (loss_after, _) =
            phase3_loss(&b1, &n1, &ga, &gb, &ctx_a, &ctx_b, &batch_a, &batch_b).unwrap();
        assert!(
            loss_after < loss_before,
            "fine-tuning did not reduce the loss: {loss_before} -> {loss_after}"
        );
    }
}
