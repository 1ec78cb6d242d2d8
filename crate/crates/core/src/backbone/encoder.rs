use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::numeric::{Activation, MlpParams};
use crate::{Error, Mat, Result};

/// Map raw features to dense embeddings with a trainable linear map.
pub fn encode_items(raw: &Mat, map: &MlpParams) -> Result<Mat> {
    if map.layers.len() != 1 || map.layers[0].activation != Activation::Identity {
        return Err(Error::InvalidArg(
            "feature encoder must be a single linear layer".into(),
        ));
    }
    map.forward(raw)
}

/// Initial embeddings for one side (users or items) of one domain: either a
/// learnable per-id table or a trainable linear map over fixed raw features.
#[derive(Debug, Clone)]
pub enum Encoder {
    Table(Mat),
    Features { raw: Mat, map: MlpParams },
}

impl Encoder {
    pub fn table<R: Rng>(rows: usize, d: usize, scale: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, scale).unwrap();
        Encoder::Table(
            Mat::from_vec(rows, d, (0..rows * d).map(|_| normal.sample(rng)).collect())
                .expect("sized by construction"),
        )
    }

    pub fn features<R: Rng>(raw: Mat, d: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let map = MlpParams::init(&[raw.cols(), d], &[Activation::Identity], scale, rng)?;
        Ok(Encoder::Features { raw, map })
    }

    pub fn rows(&self) -> usize {
        match self {
            Encoder::Table(t) => t.rows(),
            Encoder::Features { raw, .. } => raw.rows(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Encoder::Table(t) => t.cols(),
            Encoder::Features { map, .. } => map.out_dim(),
        }
    }

    pub fn forward(&self) -> Result<Mat> {
        match self {
            Encoder::Table(t) => Ok(t.clone()),
            Encoder::Features { raw, map } => encode_items(raw, map),
        }
    }

    /// Flat gradient contribution given dL/d(embedding matrix).
    pub fn backward_flat(&self, upstream: &Mat, out: &mut Vec<f64>) -> Result<()> {
        match self {
            Encoder::Table(t) => {
                if upstream.rows() != t.rows() || upstream.cols() != t.cols() {
                    return Err(Error::shape(
                        "encoder_backward",
                        format!("{}x{}", t.rows(), t.cols()),
                        format!("{}x{}", upstream.rows(), upstream.cols()),
                    ));
                }
                out.extend_from_slice(upstream.data());
            }
            Encoder::Features { raw, map } => {
                let (_, cache) = map.forward_cached(raw)?;
                let (grads, _) = map.backward(&cache, upstream)?;
                grads.append_to(out);
            }
        }
        Ok(())
    }

    pub fn param_len(&self) -> usize {
        match self {
            Encoder::Table(t) => t.data().len(),
            Encoder::Features { map, .. } => map.param_len(),
        }
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        match self {
            Encoder::Table(t) => out.extend_from_slice(t.data()),
            Encoder::Features { map, .. } => map.append_params(out),
        }
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        match self {
            Encoder::Table(t) => {
                let len = t.data().len();
                t.data_mut().copy_from_slice(&src[..len]);
                len
            }
            Encoder::Features { map, .. } => map.read_params(src),
        }
    }
}
