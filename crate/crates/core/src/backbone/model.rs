use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::Domain;
use crate::numeric::{Activation, Layer, MlpCache, MlpGrads, MlpParams};
use crate::{Error, Mat, Result};

use super::encoder::Encoder;
use super::graph::BipartiteGraph;

/// Phase-1 hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    /// Embedding dimension d.
    pub dim: usize,
    /// Graph propagation depth L.
    pub layers: usize,
    /// Interpolation coefficient for the augmented view.
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Negatives per positive during pretraining.
    pub train_negatives: usize,
    /// Gaussian init scale for embeddings.
    pub init_scale: f64,
    pub classifier_hidden: usize,
    /// Weight of the domain-classification loss on specific components.
    pub class_weight: f64,
    /// Weight of the uniform-target confusion loss on the shared component.
    pub confusion_weight: f64,
    /// Weight of the specific/shared orthogonality penalty.
    pub orth_weight: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            dim: 64,
            layers: 2,
            eta: 0.5,
            epochs: 50,
            batch_size: 1024,
            lr: 0.001,
            train_negatives: 7,
            init_scale: 0.01,
            classifier_hidden: 16,
            class_weight: 1.0,
            confusion_weight: 1.0,
            orth_weight: 0.1,
        }
    }
}

/// All user-preference components and fused outputs of Phase 1.
#[derive(Debug, Clone)]
pub struct PreferenceBundle {
    pub z_sha: Mat,
    pub z_spe_a: Mat,
    pub z_spe_b: Mat,
    pub z_ind_a: Mat,
    pub z_ind_b: Mat,
    /// Comprehensive (fused) user preferences per domain.
    pub user_a: Mat,
    pub user_b: Mat,
    /// Propagated item embeddings per domain.
    pub item_a: Mat,
    pub item_b: Mat,
    /// Per-user attention weights (rows sum to 1) over (shared, specific,
    /// independent), per domain.
    pub attention_a: Mat,
    pub attention_b: Mat,
}

impl PreferenceBundle {
    pub fn z_spe(&self, d: Domain) -> &Mat {
        match d {
            Domain::A => &self.z_spe_a,
            Domain::B => &self.z_spe_b,
        }
    }

    pub fn user(&self, d: Domain) -> &Mat {
        match d {
            Domain::A => &self.user_a,
            Domain::B => &self.user_b,
        }
    }

    pub fn item(&self, d: Domain) -> &Mat {
        match d {
            Domain::A => &self.item_a,
            Domain::B => &self.item_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mats = [
            &self.z_sha,
            &self.z_spe_a,
            &self.z_spe_b,
            &self.z_ind_a,
            &self.z_ind_b,
            &self.user_a,
            &self.user_b,
            &self.item_a,
            &self.item_b,
        ];
        if mats.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("preference bundle".into()));
        }
        for att in [&self.attention_a, &self.attention_b] {
            for r in 0..att.rows() {
                let row = att.row(r);
                if row.iter().any(|&w| w < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                    return Err(Error::Data(format!(
                        "attention weights of user {r} do not form a distribution"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// All trainable Phase-1 parameters.
#[derive(Debug, Clone)]
pub struct BackboneParams {
    pub user_a: Encoder,
    pub user_b: Encoder,
    pub item_a: Encoder,
    pub item_b: Encoder,
    /// Single linear heads d -> d.
    pub head_sha: MlpParams,
    pub head_spe_a: MlpParams,
    pub head_spe_b: MlpParams,
    pub head_ind_a: MlpParams,
    pub head_ind_b: MlpParams,
    /// Domain classifier d -> hidden -> 1, identity output (logit).
    pub classifier: MlpParams,
    /// Attention vectors, one row per component (shared, specific, independent).
    pub att_a: Mat,
    pub att_b: Mat,
    /// Propagation depth.
    pub layers: usize,
    /// Interpolation coefficient.
    pub eta: f64,
    /// The sparser domain, whose independent head reads the augmented view.
    pub augment_domain: Domain,
}

/// Identity-initialized single linear head (components start equal to their
/// inputs, which keeps early training well-conditioned).
fn identity_head(d: usize) -> MlpParams {
    MlpParams {
        layers: vec![Layer {
            weight: Mat::identity(d),
            bias: vec![0.0; d],
            activation: Activation::Identity,
        }],
    }
}

impl BackboneParams {
    /// Initialize for the given encoder sides. `augment_domain` should be the
    /// sparser domain (fewer interactions).
    pub fn init<R: Rng>(
        user_a: Encoder,
        user_b: Encoder,
        item_a: Encoder,
        item_b: Encoder,
        cfg: &BackboneConfig,
        augment_domain: Domain,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.dim;
        for (name, enc) in [
            ("user_a", &user_a),
            ("user_b", &user_b),
            ("item_a", &item_a),
            ("item_b", &item_b),
        ] {
            if enc.out_dim() != d {
                return Err(Error::shape(
                    "backbone_init",
                    format!("{name} dim {d}"),
                    format!("{}", enc.out_dim()),
                ));
            }
        }
        if !(0.0..=1.0).contains(&cfg.eta) {
            return Err(Error::InvalidArg(format!("eta must be in [0,1], got {}", cfg.eta)));
        }
        let classifier = MlpParams::init(
            &[d, cfg.classifier_hidden, 1],
            &[Activation::Tanh, Activation::Identity],
            0.1,
            rng,
        )?;
        let normal = Normal::new(0.0, cfg.init_scale).unwrap();
        let mut att = || {
            Mat::from_vec(3, d, (0..3 * d).map(|_| normal.sample(rng)).collect())
                .expect("sized by construction")
        };
        let att_a = att();
        let att_b = att();
        Ok(BackboneParams {
            user_a,
            user_b,
            item_a,
            item_b,
            head_sha: identity_head(d),
            head_spe_a: identity_head(d),
            head_spe_b: identity_head(d),
            head_ind_a: identity_head(d),
            head_ind_b: identity_head(d),
            classifier,
            att_a,
            att_b,
            layers: cfg.layers,
            eta: cfg.eta,
            augment_domain,
        })
    }

    pub fn dim(&self) -> usize {
        self.user_a.out_dim()
    }

    pub fn param_len(&self) -> usize {
        self.user_a.param_len()
            + self.user_b.param_len()
            + self.item_a.param_len()
            + self.item_b.param_len()
            + self.head_sha.param_len()
            + self.head_spe_a.param_len()
            + self.head_spe_b.param_len()
            + self.head_ind_a.param_len()
            + self.head_ind_b.param_len()
            + self.classifier.param_len()
            + self.att_a.data().len()
            + self.att_b.data().len()
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        self.user_a.append_params(out);
        self.user_b.append_params(out);
        self.item_a.append_params(out);
        self.item_b.append_params(out);
        self.head_sha.append_params(out);
        self.head_spe_a.append_params(out);
        self.head_spe_b.append_params(out);
        self.head_ind_a.append_params(out);
        self.head_ind_b.append_params(out);
        self.classifier.append_params(out);
        out.extend_from_slice(self.att_a.data());
        out.extend_from_slice(self.att_b.data());
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut off = 0;
        off += self.user_a.read_params(&src[off..]);
        off += self.user_b.read_params(&src[off..]);
        off += self.item_a.read_params(&src[off..]);
        off += self.item_b.read_params(&src[off..]);
        off += self.head_sha.read_params(&src[off..]);
        off += self.head_spe_a.read_params(&src[off..]);
        off += self.head_spe_b.read_params(&src[off..]);
        off += self.head_ind_a.read_params(&src[off..]);
        off += self.head_ind_b.read_params(&src[off..]);
        off += self.classifier.read_params(&src[off..]);
        let alen = self.att_a.data().len();
        self.att_a.data_mut().copy_from_slice(&src[off..off + alen]);
        off += alen;
        let blen = self.att_b.data().len();
        self.att_b.data_mut().copy_from_slice(&src[off..off + blen]);
        off += blen;
        off
    }

    /// Full forward pass: encoders -> propagation -> disentanglement heads ->
    /// attention fusion.
    pub fn forward(
        &self,
        graph_a: &BipartiteGraph,
        graph_b: &BipartiteGraph,
    ) -> Result<(PreferenceBundle, BundleCache)> {
        let e_u0_a = self.user_a.forward()?;
        let e_u0_b = self.user_b.forward()?;
        let e_v0_a = self.item_a.forward()?;
        let e_v0_b = self.item_b.forward()?;
        let (coarse_u_a, item_a) = graph_a.propagate(&e_u0_a, &e_v0_a, self.layers)?;
        let (coarse_u_b, item_b) = graph_b.propagate(&e_u0_b, &e_v0_b, self.layers)?;

        let mean_coarse = coarse_u_a.add(&coarse_u_b)?.scale(0.5);
        let aug = augment_interpolate(&coarse_u_a, &coarse_u_b, self.eta)?;

        let (z_sha, cache_sha) = self.head_sha.forward_cached(&mean_coarse)?;
        let (z_spe_a, cache_spe_a) = self.head_spe_a.forward_cached(&coarse_u_a)?;
        let (z_spe_b, cache_spe_b) = self.head_spe_b.forward_cached(&coarse_u_b)?;
        let in_ind_a = if self.augment_domain == Domain::A { &aug } else { &coarse_u_a };
        let in_ind_b = if self.augment_domain == Domain::B { &aug } else { &coarse_u_b };
        let (z_ind_a, cache_ind_a) = self.head_ind_a.forward_cached(in_ind_a)?;
        let (z_ind_b, cache_ind_b) = self.head_ind_b.forward_cached(in_ind_b)?;

        let (user_a, attention_a) = fuse(&[&z_sha, &z_spe_a, &z_ind_a], &self.att_a)?;
        let (user_b, attention_b) = fuse(&[&z_sha, &z_spe_b, &z_ind_b], &self.att_b)?;

        let bundle = PreferenceBundle {
            z_sha,
            z_spe_a,
            z_spe_b,
            z_ind_a,
            z_ind_b,
            user_a,
            user_b,
            item_a,
            item_b,
            attention_a,
            attention_b,
        };
        let cache = BundleCache {
            cache_sha,
            cache_spe_a,
            cache_spe_b,
            cache_ind_a,
            cache_ind_b,
        };
        Ok((bundle, cache))
    }

    /// Backpropagate bundle-level gradients into a flat parameter gradient
    /// matching `append_params` order.
    pub fn backward(
        &self,
        graph_a: &BipartiteGraph,
        graph_b: &BipartiteGraph,
        bundle: &PreferenceBundle,
        cache: &BundleCache,
        grads: &BundleGrads,
    ) -> Result<Vec<f64>> {
        // through attention fusion
        let (dz_a, datt_a) = fuse_backward(
            &[&bundle.z_sha, &bundle.z_spe_a, &bundle.z_ind_a],
            &self.att_a,
            &bundle.attention_a,
            &grads.user_a,
        )?;
        let (dz_b, datt_b) = fuse_backward(
            &[&bundle.z_sha, &bundle.z_spe_b, &bundle.z_ind_b],
            &self.att_b,
            &bundle.attention_b,
            &grads.user_b,
        )?;

        let mut dz_sha = dz_a[0].add(&dz_b[0])?;
        dz_sha.add_assign(&grads.z_sha)?;
        let mut dz_spe_a = dz_a[1].clone();
        dz_spe_a.add_assign(&grads.z_spe_a)?;
        let mut dz_spe_b = dz_b[1].clone();
        dz_spe_b.add_assign(&grads.z_spe_b)?;
        let dz_ind_a = &dz_a[2];
        let dz_ind_b = &dz_b[2];

        // through the heads
        let (g_head_sha, d_mean) = self.head_sha.backward(&cache.cache_sha, &dz_sha)?;
        let (g_head_spe_a, d_coarse_spe_a) =
            self.head_spe_a.backward(&cache.cache_spe_a, &dz_spe_a)?;
        let (g_head_spe_b, d_coarse_spe_b) =
            self.head_spe_b.backward(&cache.cache_spe_b, &dz_spe_b)?;
        let (g_head_ind_a, d_in_ind_a) = self.head_ind_a.backward(&cache.cache_ind_a, dz_ind_a)?;
        let (g_head_ind_b, d_in_ind_b) = self.head_ind_b.backward(&cache.cache_ind_b, dz_ind_b)?;

        // accumulate gradients on the coarse (propagated) user matrices
        let mut d_u_a = d_mean.scale(0.5);
        let mut d_u_b = d_mean.scale(0.5);
        d_u_a.add_assign(&d_coarse_spe_a)?;
        d_u_b.add_assign(&d_coarse_spe_b)?;
        for (domain, d_in) in [(Domain::A, &d_in_ind_a), (Domain::B, &d_in_ind_b)] {
            if self.augment_domain == domain {
                // augmented view: eta toward A, (1 - eta) toward B
                d_u_a.add_assign(&d_in.scale(self.eta))?;
                d_u_b.add_assign(&d_in.scale(1.0 - self.eta))?;
            } else if domain == Domain::A {
                d_u_a.add_assign(d_in)?;
            } else {
                d_u_b.add_assign(d_in)?;
            }
        }

        // through propagation: the operator is self-adjoint
        let (d_e_u0_a, d_e_v0_a) = graph_a.propagate(&d_u_a, &grads.item_a, self.layers)?;
        let (d_e_u0_b, d_e_v0_b) = graph_b.propagate(&d_u_b, &grads.item_b, self.layers)?;

        // assemble the flat gradient in append_params order
        let mut flat = Vec::with_capacity(self.param_len());
        self.user_a.backward_flat(&d_e_u0_a, &mut flat)?;
        self.user_b.backward_flat(&d_e_u0_b, &mut flat)?;
        self.item_a.backward_flat(&d_e_v0_a, &mut flat)?;
        self.item_b.backward_flat(&d_e_v0_b, &mut flat)?;
        g_head_sha.append_to(&mut flat);
        g_head_spe_a.append_to(&mut flat);
        g_head_spe_b.append_to(&mut flat);
        g_head_ind_a.append_to(&mut flat);
        g_head_ind_b.append_to(&mut flat);
        grads.classifier.append_to(&mut flat);
        flat.extend_from_slice(datt_a.data());
        flat.extend_from_slice(datt_b.data());
        Ok(flat)
    }
}

/// Forward-pass intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BundleCache {
    cache_sha: MlpCache,
    cache_spe_a: MlpCache,
    cache_spe_b: MlpCache,
    cache_ind_a: MlpCache,
    cache_ind_b: MlpCache,
}

/// Upstream gradients on the bundle outputs. Components not touched by a loss
/// stay zero.
#[derive(Debug, Clone)]
pub struct BundleGrads {
    pub user_a: Mat,
    pub user_b: Mat,
    pub item_a: Mat,
    pub item_b: Mat,
    pub z_sha: Mat,
    pub z_spe_a: Mat,
    pub z_spe_b: Mat,
    pub classifier: MlpGrads,
}

impl BundleGrads {
    pub fn zeros(params: &BackboneParams, bundle: &PreferenceBundle) -> Self {
        let like = |m: &Mat| Mat::zeros(m.rows(), m.cols());
        BundleGrads {
            user_a: like(&bundle.user_a),
            user_b: like(&bundle.user_b),
            item_a: like(&bundle.item_a),
            item_b: like(&bundle.item_b),
            z_sha: like(&bundle.z_sha),
            z_spe_a: like(&bundle.z_spe_a),
            z_spe_b: like(&bundle.z_spe_b),
            classifier: MlpGrads::zeros_like(&params.classifier),
        }
    }
}

/// Linear interpolation eta * a + (1 - eta) * b.
pub fn augment_interpolate(a: &Mat, b: &Mat, eta: f64) -> Result<Mat> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::shape(
            "augment_interpolate",
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArg(format!("eta must be in [0,1], got {eta}")));
    }
    let mut out = a.scale(eta);
    out.add_assign(&b.scale(1.0 - eta))?;
    Ok(out)
}

/// Per-user softmax attention over preference components.
///
/// `components[k]` is m x d; `att` row k is the attention vector for
/// component k. Returns the fused m x d matrix and the m x k weight matrix.
pub fn fuse(components: &[&Mat], att: &Mat) -> Result<(Mat, Mat)> {
    let k = components.len();
    if k == 0 || att.rows() != k {
        return Err(Error::InvalidArg(format!(
            "fuse: {} attention rows for {k} components",
            att.rows()
        )));
    }
    let m = components[0].rows();
    let d = components[0].cols();
    for c in components {
        if c.rows() != m || c.cols() != d {
            return Err(Error::shape("fuse", format!("{m}x{d}"), format!("{}x{}", c.rows(), c.cols())));
        }
    }
    if att.cols() != d {
        return Err(Error::shape("fuse", format!("att cols {d}"), format!("{}", att.cols())));
    }
    let mut fused = Mat::zeros(m, d);
    let mut weights = Mat::zeros(m, k);
    for u in 0..m {
        let logits: Vec<f64> = (0..k)
            .map(|c| {
                components[c]
                    .row(u)
                    .iter()
                    .zip(att.row(c))
                    .map(|(z, a)| z * a)
                    .sum()
            })
            .collect();
        let w = softmax(&logits);
        for c in 0..k {
            weights.set(u, c, w[c]);
            for j in 0..d {
                let v = fused.get(u, j) + w[c] * components[c].get(u, j);
                fused.set(u, j, v);
            }
        }
    }
    Ok((fused, weights))
}

/// Gradients of `fuse` w.r.t. each component matrix and the attention rows,
/// given `weights` from the forward pass and upstream dL/d(fused).
pub fn fuse_backward(
    components: &[&Mat],
    att: &Mat,
    weights: &Mat,
    upstream: &Mat,
) -> Result<(Vec<Mat>, Mat)> {
    let k = components.len();
    let m = components[0].rows();
    let d = components[0].cols();
    if upstream.rows() != m || upstream.cols() != d {
        return Err(Error::shape(
            "fuse_backward",
            format!("{m}x{d}"),
            format!("{}x{}", upstream.rows(), upstream.cols()),
        ));
    }
    let mut dz: Vec<Mat> = (0..k).map(|_| Mat::zeros(m, d)).collect();
    let mut datt = Mat::zeros(k, d);
    for u in 0..m {
        let g = upstream.row(u);
        // a_c = <g, z_c>; ds_c = w_c (a_c - sum_j w_j a_j)
        let a: Vec<f64> = (0..k)
            .map(|c| g.iter().zip(components[c].row(u)).map(|(x, z)| x * z).sum())
            .collect();
        let abar: f64 = (0..k).map(|c| weights.get(u, c) * a[c]).sum();
        for c in 0..k {
            let w = weights.get(u, c);
            let ds = w * (a[c] - abar);
            let zrow = components[c].row(u);
            let drow = dz[c].row_mut(u);
            for j in 0..d {
                drow[j] += w * g[j] + ds * att.get(c, j);
            }
            let arow = datt.row_mut(c);
            for j in 0..d {
                arow[j] += ds * zrow[j];
            }
        }
    }
    Ok((dz, datt))
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Numerically stable ln(1 + e^t).
pub(crate) fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Binary cross-entropy on a pre-sigmoid logit with target `y`; returns the
/// loss and d(loss)/d(logit) = sigmoid(t) - y.
pub(crate) fn bce_logit(t: f64, y: f64) -> (f64, f64) {
    let sig = 1.0 / (1.0 + (-t).exp());
    (softplus(t) - y * t, sig - y)
}
