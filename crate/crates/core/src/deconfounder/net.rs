use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numeric::{Activation, MlpParams};
use crate::{Error, Mat, Result};

/// How the Eq.-style backdoor mixture combines prior and selection weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixtureNormalization {
    /// mixture = sum_c p(c) * phi(c) * c with uniform p(c) = 1/|C|.
    Literal,
    /// mixture = sum_c phi(c) * c (drops the uniform prior factor).
    Renormalized,
}

/// Phase-3 network hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionConfig {
    /// Fusion output width e.
    pub fusion_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Pre-output width q.
    pub q: usize,
    pub init_scale: f64,
    pub mixture_normalization: MixtureNormalization,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            fusion_dim: 128,
            hidden1: 32,
            hidden2: 16,
            q: 8,
            init_scale: 0.01,
            mixture_normalization: MixtureNormalization::Literal,
        }
    }
}

/// Confounder information available to the predictor for one domain.
#[derive(Debug, Clone)]
pub enum ConfounderContext {
    /// Backdoor adjustment over a centroid subspace with a uniform prior.
    Subspace { centroids: Mat },
    /// A fixed vector concatenated in place of the adjusted mixture (the
    /// no-adjustment comparison lever).
    Fixed { vector: Vec<f64> },
}

impl ConfounderContext {
    pub fn empty(d: usize) -> Self {
        ConfounderContext::Fixed { vector: vec![0.0; d] }
    }
}

/// Interaction prediction network with confounder selection.
#[derive(Debug, Clone)]
pub struct PredictionNetwork {
    /// Selection matrices, each d x d (selection space keeps the embedding
    /// dimension).
    pub w_u: Mat,
    pub w_uc: Mat,
    pub w_v: Mat,
    pub w_vc: Mat,
    /// Fusion W_fc: single linear layer 3d -> e.
    pub fusion: MlpParams,
    /// Scoring stack e -> h1 -> h2 -> q -> 1; output is a pre-sigmoid logit.
    pub mlp: MlpParams,
    pub mixture: MixtureNormalization,
}

impl PredictionNetwork {
    pub fn init<R: Rng>(d: usize, cfg: &PredictionConfig, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, cfg.init_scale).map_err(|e| Error::InvalidArg(e.to_string()))?;
        let mut sel = || {
            Mat::from_vec(d, d, (0..d * d).map(|_| normal.sample(rng)).collect())
                .expect("sized by construction")
        };
        let (w_u, w_uc, w_v, w_vc) = (sel(), sel(), sel(), sel());
        let fusion = MlpParams::init(&[3 * d, cfg.fusion_dim], &[Activation::Identity], cfg.init_scale, rng)?;
        let mlp = MlpParams::init(
            &[cfg.fusion_dim, cfg.hidden1, cfg.hidden2, cfg.q, 1],
            &[
                Activation::Tanh,
                Activation::Tanh,
                Activation::Tanh,
                Activation::Identity,
            ],
            0.1,
            rng,
        )?;
        Ok(PredictionNetwork {
            w_u,
            w_uc,
            w_v,
            w_vc,
            fusion,
            mlp,
            mixture: cfg.mixture_normalization,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_u.rows()
    }

    pub fn param_len(&self) -> usize {
        4 * self.w_u.data().len() + self.fusion.param_len() + self.mlp.param_len()
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w_u.data());
        out.extend_from_slice(self.w_uc.data());
        out.extend_from_slice(self.w_v.data());
        out.extend_from_slice(self.w_vc.data());
        self.fusion.append_params(out);
        self.mlp.append_params(out);
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut off = 0;
        for m in [&mut self.w_u, &mut self.w_uc, &mut self.w_v, &mut self.w_vc] {
            let len = m.data().len();
            m.data_mut().copy_from_slice(&src[off..off + len]);
            off += len;
        }
        off += self.fusion.read_params(&src[off..]);
        off += self.mlp.read_params(&src[off..]);
        off
    }
}

/// Combine two softmaxed logit vectors: phi = (softmax(lu) + softmax(lv)) / 2.
pub(crate) fn halved_softmax(lu: &[f64], lv: &[f64]) -> Vec<f64> {
    let su = crate::backbone::softmax_slice(lu);
    let sv = crate::backbone::softmax_slice(lv);
    su.iter().zip(&sv).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// Selection weights phi(c) over the centroid rows of `centroids`.
pub fn confounder_weights(
    e_u: &[f64],
    e_v: &[f64],
    centroids: &Mat,
    net: &PredictionNetwork,
) -> Result<Vec<f64>> {
    if centroids.rows() == 0 {
        return Err(Error::InvalidArg(
            "backdoor adjustment undefined over an empty confounder set".into(),
        ));
    }
    let (lu, lv) = selection_logits(e_u, e_v, centroids, net)?;
    Ok(halved_softmax(&lu, &lv))
}

fn project(row: &[f64], w: &Mat) -> Result<Vec<f64>> {
    if row.len() != w.rows() {
        return Err(Error::shape(
            "selection_project",
            format!("{} dims", w.rows()),
            format!("{}", row.len()),
        ));
    }
    let mut out = vec![0.0; w.cols()];
    for (i, &x) in row.iter().enumerate() {
        let wrow = w.row(i);
        for (o, &wv) in out.iter_mut().zip(wrow) {
            *o += x * wv;
        }
    }
    Ok(out)
}

/// Per-side selection logits: <W_u e_u, W_uc c> and <W_v e_v, W_vc c>.
pub(crate) fn selection_logits(
    e_u: &[f64],
    e_v: &[f64],
    centroids: &Mat,
    net: &PredictionNetwork,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let a_u = project(e_u, &net.w_u)?;
    let a_v = project(e_v, &net.w_v)?;
    let k_u = centroids.matmul(&net.w_uc)?;
    let k_v = centroids.matmul(&net.w_vc)?;
    let dot = |k: &Mat, a: &[f64]| -> Vec<f64> {
        (0..k.rows())
            .map(|c| k.row(c).iter().zip(a).map(|(x, y)| x * y).sum())
            .collect()
    };
    Ok((dot(&k_u, &a_u), dot(&k_v, &a_v)))
}

/// The backdoor mixture vector for one (user, item) pair.
pub fn backdoor_mixture(
    e_u: &[f64],
    e_v: &[f64],
    ctx: &ConfounderContext,
    net: &PredictionNetwork,
) -> Result<Vec<f64>> {
    match ctx {
        ConfounderContext::Fixed { vector } => Ok(vector.clone()),
        ConfounderContext::Subspace { centroids } => {
            let phi = confounder_weights(e_u, e_v, centroids, net)?;
            let prior = match net.mixture {
                MixtureNormalization::Literal => 1.0 / centroids.rows() as f64,
                MixtureNormalization::Renormalized => 1.0,
            };
            let mut out = vec![0.0; centroids.cols()];
            for (c, &w) in phi.iter().enumerate() {
                for (o, &cv) in out.iter_mut().zip(centroids.row(c)) {
                    *o += prior * w * cv;
                }
            }
            Ok(out)
        }
    }
}

/// Q_in = W_fc (e_u || e_v || mixture).
pub fn backdoor_input(
    e_u: &[f64],
    e_v: &[f64],
    ctx: &ConfounderContext,
    net: &PredictionNetwork,
) -> Result<Vec<f64>> {
    let mixture = backdoor_mixture(e_u, e_v, ctx, net)?;
    let mut concat = Vec::with_capacity(e_u.len() + e_v.len() + mixture.len());
    concat.extend_from_slice(e_u);
    concat.extend_from_slice(e_v);
    concat.extend(mixture);
    let input = Mat::from_vec(1, concat.len(), concat)?;
    Ok(net.fusion.forward(&input)?.row(0).to_vec())
}

/// Interaction probability for one pair.
pub fn predict(
    e_u: &[f64],
    e_v: &[f64],
    ctx: &ConfounderContext,
    net: &PredictionNetwork,
) -> Result<f64> {
    let q_in = backdoor_input(e_u, e_v, ctx, net)?;
    let input = Mat::from_vec(1, q_in.len(), q_in)?;
    let logit = net.mlp.forward(&input)?.get(0, 0);
    Ok(1.0 / (1.0 + (-logit).exp()))
}
