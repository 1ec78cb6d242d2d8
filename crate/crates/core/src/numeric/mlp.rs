use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed in terms of the post-activation value.
    #[inline]
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer; `weight` is `in_dim x out_dim`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// A dense feed-forward network with explicit per-layer activations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Per-layer post-activation outputs kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Mat,
    outputs: Vec<Mat>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(Mat, Vec<f64>)>,
}

impl MlpParams {
    /// Gaussian `N(0, scale^2)` init for dims `[d0, d1, ..., dk]` with one
    /// activation per layer.
    pub fn init<R: Rng>(dims: &[usize], activations: &[Activation], scale: f64, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::InvalidArg(format!(
                "mlp init: {} dims need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        let normal = Normal::new(0.0, scale).map_err(|e| Error::InvalidArg(e.to_string()))?;
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Layer {
                weight: Mat::from_vec(
                    w[0],
                    w[1],
                    (0..w[0] * w[1]).map(|_| normal.sample(rng)).collect(),
                )
                .expect("sized by construction"),
                bias: vec![0.0; w[1]],
                activation,
            })
            .collect();
        Ok(MlpParams { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    /// Check that adjacent layer dimensions chain.
    pub fn validate(&self) -> Result<()> {
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].weight.cols() != pair[1].weight.rows() {
                return Err(Error::shape(
                    "MlpParams::validate",
                    format!("layer {} out = layer {} in", i, i + 1),
                    format!("{} vs {}", pair[0].weight.cols(), pair[1].weight.rows()),
                ));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.weight.cols() {
                return Err(Error::shape(
                    "MlpParams::validate",
                    format!("layer {} bias len {}", i, l.weight.cols()),
                    format!("{}", l.bias.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &Mat) -> Result<Mat> {
        Ok(self.forward_cached(input)?.0)
    }

    pub fn forward_cached(&self, input: &Mat) -> Result<(Mat, MlpCache)> {
        if input.cols() != self.in_dim() {
            return Err(Error::shape(
                "mlp_forward",
                format!("{} input cols", self.in_dim()),
                format!("{}", input.cols()),
            ));
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = input.clone();
        for layer in &self.layers {
            let mut out = cur.matmul(&layer.weight)?;
            for r in 0..out.rows() {
                for (v, b) in out.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v = layer.activation.apply(*v + b);
                }
            }
            outputs.push(out.clone());
            cur = out;
        }
        Ok((
            cur,
            MlpCache {
                input: input.clone(),
                outputs,
            },
        ))
    }

    /// Backprop `upstream` (dL/d output) through the network.
    ///
    /// Returns per-layer parameter gradients and the gradient w.r.t. the
    /// input batch. Gradients are summed over the batch, not averaged.
    pub fn backward(&self, cache: &MlpCache, upstream: &Mat) -> Result<(MlpGrads, Mat)> {
        let last = cache
            .outputs
            .last()
            .ok_or_else(|| Error::InvalidArg("mlp_backward on empty network".into()))?;
        if upstream.rows() != last.rows() || upstream.cols() != last.cols() {
            return Err(Error::shape(
                "mlp_backward",
                format!("{}x{}", last.rows(), last.cols()),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }
        let mut grads = vec![(Mat::zeros(0, 0), Vec::new()); self.layers.len()];
        let mut delta = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.outputs[i];
            // through the activation
            for r in 0..delta.rows() {
                for (dv, &y) in delta.row_mut(r).iter_mut().zip(out.row(r)) {
                    *dv *= layer.activation.deriv_from_output(y);
                }
            }
            let layer_in = if i == 0 { &cache.input } else { &cache.outputs[i - 1] };
            let gw = layer_in.matmul_tn(&delta)?;
            let mut gb = vec![0.0; layer.bias.len()];
            for r in 0..delta.rows() {
                for (g, v) in gb.iter_mut().zip(delta.row(r)) {
                    *g += v;
                }
            }
            delta = delta.matmul_nt(&layer.weight)?;
            grads[i] = (gw, gb);
        }
        Ok((MlpGrads { layers: grads }, delta))
    }

    pub fn param_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
    }

    /// Read parameters back from a flat slice; returns the number consumed.
    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut off = 0;
        for l in &mut self.layers {
            let wlen = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&src[off..off + wlen]);
            off += wlen;
            let blen = l.bias.len();
            l.bias.copy_from_slice(&src[off..off + blen]);
            off += blen;
        }
        off
    }
}

impl MlpGrads {
    pub fn append_to(&self, out: &mut Vec<f64>) {
        for (w, b) in &self.layers {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) -> Result<()> {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.add_assign(ow)?;
            for (x, y) in b.iter_mut().zip(ob) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn zeros_like(mlp: &MlpParams) -> MlpGrads {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| (Mat::zeros(l.weight.rows(), l.weight.cols()), vec![0.0; l.bias.len()]))
                .collect(),
        }
    }
}
