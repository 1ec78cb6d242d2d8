use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::{adam_step, Activation, AdamState, MlpCache, MlpGrads, MlpParams};
use crate::{Error, Mat, Result};

/// Phase-2 adversarial-training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversarialConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cycle-consistency weight.
    pub lambda: f64,
    pub generator_init: f64,
    pub discriminator_init: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            hidden: 16,
            epochs: 30,
            batch_size: 1024,
            lr: 0.001,
            lambda: 1.0,
            generator_init: 0.3,
            discriminator_init: 0.1,
        }
    }
}

/// Generator with a skip connection: G(z) = z + mlp(z).
///
/// The residual form starts near the identity, which keeps the cycle loss
/// trainable; a plain 2-layer map has to relearn the identity from scratch
/// and stalls.
#[derive(Debug, Clone)]
pub struct ResidualGenerator {
    pub mlp: MlpParams,
}

impl ResidualGenerator {
    pub fn init<R: Rng>(d: usize, hidden: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let mlp = MlpParams::init(
            &[d, hidden, d],
            &[Activation::Tanh, Activation::Identity],
            scale,
            rng,
        )?;
        Ok(ResidualGenerator { mlp })
    }

    pub fn forward(&self, z: &Mat) -> Result<Mat> {
        Ok(self.forward_cached(z)?.0)
    }

    pub fn forward_cached(&self, z: &Mat) -> Result<(Mat, MlpCache)> {
        let (out, cache) = self.mlp.forward_cached(z)?;
        Ok((out.add(z)?, cache))
    }

    /// The skip connection adds the upstream gradient to the MLP input grad.
    pub fn backward(&self, cache: &MlpCache, upstream: &Mat) -> Result<(MlpGrads, Mat)> {
        let (grads, mut dz) = self.mlp.backward(cache, upstream)?;
        dz.add_assign(upstream)?;
        Ok((grads, dz))
    }
}

/// Dual adversarial structure: generators S (A -> B) and T (B -> A) with
/// per-domain discriminators.
#[derive(Debug, Clone)]
pub struct AdversarialPair {
    pub s: ResidualGenerator,
    pub t: ResidualGenerator,
    pub disc_a: MlpParams,
    pub disc_b: MlpParams,
    pub lambda: f64,
}

/// Per-side least-squares adversarial loss values.
#[derive(Debug, Clone, PartialEq)]
pub struct LsganLosses {
    /// Generator S against discriminator B.
    pub gen_s: f64,
    /// Generator T against discriminator A.
    pub gen_t: f64,
    /// Discriminator A: real Z_spe^A vs fake T(Z_spe^B).
    pub disc_a: f64,
    /// Discriminator B: real Z_spe^B vs fake S(Z_spe^A).
    pub disc_b: f64,
}

impl AdversarialPair {
    pub fn init<R: Rng>(d: usize, cfg: &AdversarialConfig, rng: &mut R) -> Result<Self> {
        let s = ResidualGenerator::init(d, cfg.hidden, cfg.generator_init, rng)?;
        let t = ResidualGenerator::init(d, cfg.hidden, cfg.generator_init, rng)?;
        let disc = |rng: &mut R| {
            MlpParams::init(
                &[d, cfg.hidden, 1],
                &[Activation::Tanh, Activation::Sigmoid],
                cfg.discriminator_init,
                rng,
            )
        };
        let disc_a = disc(rng)?;
        let disc_b = disc(rng)?;
        Ok(AdversarialPair {
            s,
            t,
            disc_a,
            disc_b,
            lambda: cfg.lambda,
        })
    }

    pub fn generator_param_len(&self) -> usize {
        self.s.mlp.param_len() + self.t.mlp.param_len()
    }

    pub fn discriminator_param_len(&self) -> usize {
        self.disc_a.param_len() + self.disc_b.param_len()
    }

    pub fn append_generator_params(&self, out: &mut Vec<f64>) {
        self.s.mlp.append_params(out);
        self.t.mlp.append_params(out);
    }

    pub fn read_generator_params(&mut self, src: &[f64]) -> usize {
        let mut off = self.s.mlp.read_params(src);
        off += self.t.mlp.read_params(&src[off..]);
        off
    }

    pub fn append_discriminator_params(&self, out: &mut Vec<f64>) {
        self.disc_a.append_params(out);
        self.disc_b.append_params(out);
    }

    pub fn read_discriminator_params(&mut self, src: &[f64]) -> usize {
        let mut off = self.disc_a.read_params(src);
        off += self.disc_b.read_params(&src[off..]);
        off
    }
}

fn check_batches(za: &Mat, zb: &Mat) -> Result<()> {
    if za.rows() == 0 || zb.rows() == 0 {
        return Err(Error::InvalidArg("adversarial batch is empty".into()));
    }
    if za.cols() != zb.cols() {
        return Err(Error::shape(
            "adversarial",
            format!("{} cols", za.cols()),
            format!("{}", zb.cols()),
        ));
    }
    Ok(())
}

/// Mean squared distance of discriminator outputs to `target`.
fn ls_term(outputs: &Mat, target: f64) -> f64 {
    outputs
        .data()
        .iter()
        .map(|&h| (h - target) * (h - target))
        .sum::<f64>()
        / outputs.rows() as f64
}

/// Least-squares adversarial loss values for the current parameters (no
/// gradients): generator S minimizes mean (H^B(S(z_a)) - 1)^2; discriminator
/// H^B minimizes mean (H^B(z_b) - 1)^2 + mean H^B(S(z_a))^2; symmetrically
/// for T and H^A.
pub fn lsgan_losses(pair: &AdversarialPair, za: &Mat, zb: &Mat) -> Result<LsganLosses> {
    check_batches(za, zb)?;
    let sa = pair.s.forward(za)?;
    let tb = pair.t.forward(zb)?;
    let h_b_real = pair.disc_b.forward(zb)?;
    let h_b_fake = pair.disc_b.forward(&sa)?;
    let h_a_real = pair.disc_a.forward(za)?;
    let h_a_fake = pair.disc_a.forward(&tb)?;
    Ok(LsganLosses {
        gen_s: ls_term(&h_b_fake, 1.0),
        gen_t: ls_term(&h_a_fake, 1.0),
        disc_a: ls_term(&h_a_real, 1.0) + ls_term(&h_a_fake, 0.0),
        disc_b: ls_term(&h_b_real, 1.0) + ls_term(&h_b_fake, 0.0),
    })
}

/// Cycle-consistency loss: mean row L1 of T(S(z_a)) - z_a plus mean row L1 of
/// S(T(z_b)) - z_b.
pub fn cycle_loss(pair: &AdversarialPair, za: &Mat, zb: &Mat) -> Result<f64> {
    check_batches(za, zb)?;
    let tsa = pair.t.forward(&pair.s.forward(za)?)?;
    let stb = pair.s.forward(&pair.t.forward(zb)?)?;
    let mean_l1 = |x: &Mat, y: &Mat| -> f64 {
        x.data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / x.rows() as f64
    };
    Ok(mean_l1(&tsa, za) + mean_l1(&stb, zb))
}

/// Discriminator loss and flat gradient (H^A then H^B); generators detached.
pub fn discriminator_loss(pair: &AdversarialPair, za: &Mat, zb: &Mat) -> Result<(f64, Vec<f64>)> {
    check_batches(za, zb)?;
    let sa = pair.s.forward(za)?;
    let tb = pair.t.forward(zb)?;

    // dL/dh of mean (h - target)^2 over m rows
    let ls_upstream = |outputs: &Mat, target: f64| -> Mat {
        let m = outputs.rows() as f64;
        let mut up = Mat::zeros(outputs.rows(), 1);
        for r in 0..outputs.rows() {
            up.set(r, 0, 2.0 * (outputs.get(r, 0) - target) / m);
        }
        up
    };
    let mut loss = 0.0;
    let mut run = |disc: &MlpParams, input: &Mat, target: f64| -> Result<MlpGrads> {
        let (out, cache) = disc.forward_cached(input)?;
        loss += ls_term(&out, target);
        let (grads, _) = disc.backward(&cache, &ls_upstream(&out, target))?;
        Ok(grads)
    };
    let mut g_a = run(&pair.disc_a, za, 1.0)?;
    g_a.add_assign(&run(&pair.disc_a, &tb, 0.0)?)?;
    let mut g_b = run(&pair.disc_b, zb, 1.0)?;
    g_b.add_assign(&run(&pair.disc_b, &sa, 0.0)?)?;

    let mut flat = Vec::with_capacity(pair.discriminator_param_len());
    g_a.append_to(&mut flat);
    g_b.append_to(&mut flat);
    Ok((loss, flat))
}

/// Generator loss (adversarial terms + lambda * cycle) and flat gradient
/// (S then T); discriminators frozen but differentiated through.
pub fn generator_loss(pair: &AdversarialPair, za: &Mat, zb: &Mat) -> Result<(f64, Vec<f64>)> {
    check_batches(za, zb)?;
    let (ma, mb) = (za.rows() as f64, zb.rows() as f64);
    let lambda = pair.lambda;

    let (sa, cache_s_a) = pair.s.forward_cached(za)?;
    let (tb, cache_t_b) = pair.t.forward_cached(zb)?;
    let (tsa, cache_t_sa) = pair.t.forward_cached(&sa)?;
    let (stb, cache_s_tb) = pair.s.forward_cached(&tb)?;

    let mut loss = 0.0;
    let mut d_sa = Mat::zeros(sa.rows(), sa.cols());
    let mut d_tb = Mat::zeros(tb.rows(), tb.cols());

    // adversarial terms through the frozen discriminators
    {
        let (h, cache) = pair.disc_b.forward_cached(&sa)?;
        loss += ls_term(&h, 1.0);
        let mut up = Mat::zeros(h.rows(), 1);
        for r in 0..h.rows() {
            up.set(r, 0, 2.0 * (h.get(r, 0) - 1.0) / ma);
        }
        let (_, din) = pair.disc_b.backward(&cache, &up)?;
        d_sa.add_assign(&din)?;
    }
    {
        let (h, cache) = pair.disc_a.forward_cached(&tb)?;
        loss += ls_term(&h, 1.0);
        let mut up = Mat::zeros(h.rows(), 1);
        for r in 0..h.rows() {
            up.set(r, 0, 2.0 * (h.get(r, 0) - 1.0) / mb);
        }
        let (_, din) = pair.disc_a.backward(&cache, &up)?;
        d_tb.add_assign(&din)?;
    }

    // cycle terms (L1 subgradient: sign of the residual)
    let sign_upstream = |out: &Mat, reference: &Mat, m: f64| -> Mat {
        let mut up = Mat::zeros(out.rows(), out.cols());
        for i in 0..out.data().len() {
            let r = out.data()[i] - reference.data()[i];
            up.data_mut()[i] = lambda * r.signum() / m;
        }
        up
    };
    let mut g_s;
    let mut g_t;
    {
        // T(S(za)) vs za: upstream into T at input sa, then into S
        loss += lambda
            * tsa
                .data()
                .iter()
                .zip(za.data())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
            / ma;
        let up = sign_upstream(&tsa, za, ma);
        let (gt, din) = pair.t.backward(&cache_t_sa, &up)?;
        g_t = gt;
        d_sa.add_assign(&din)?;
    }
    {
        // S(T(zb)) vs zb
        loss += lambda
            * stb
                .data()
                .iter()
                .zip(zb.data())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
            / mb;
        let up = sign_upstream(&stb, zb, mb);
        let (gs, din) = pair.s.backward(&cache_s_tb, &up)?;
        g_s = gs;
        d_tb.add_assign(&din)?;
    }

    // finally through the first-hop generators
    let (gs_first, _) = pair.s.backward(&cache_s_a, &d_sa)?;
    g_s.add_assign(&gs_first)?;
    let (gt_first, _) = pair.t.backward(&cache_t_b, &d_tb)?;
    g_t.add_assign(&gt_first)?;

    let mut flat = Vec::with_capacity(pair.generator_param_len());
    g_s.append_to(&mut flat);
    g_t.append_to(&mut flat);
    Ok((loss, flat))
}

/// Training trace for diagnostics and the cycle-efficacy checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdversarialTrace {
    pub initial_cycle: f64,
    pub final_cycle: f64,
    pub cycle_per_epoch: Vec<f64>,
}

/// Train the dual adversarial structure on frozen specific components with
/// alternating one-discriminator-step / one-generator-step batches.
pub fn train_dual_adversarial(
    z_spe_a: &Mat,
    z_spe_b: &Mat,
    cfg: &AdversarialConfig,
    seed: u64,
) -> Result<(AdversarialPair, AdversarialTrace)> {
    check_batches(z_spe_a, z_spe_b)?;
    if z_spe_a.rows() != z_spe_b.rows() {
        return Err(Error::shape(
            "train_dual_adversarial",
            format!("{} rows", z_spe_a.rows()),
            format!("{}", z_spe_b.rows()),
        ));
    }
    let d = z_spe_a.cols();
    let m = z_spe_a.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pair = AdversarialPair::init(d, cfg, &mut rng)?;

    let mut gen_flat = Vec::new();
    pair.append_generator_params(&mut gen_flat);
    let mut disc_flat = Vec::new();
    pair.append_discriminator_params(&mut disc_flat);
    let mut gen_adam = AdamState::new(gen_flat.len());
    let mut disc_adam = AdamState::new(disc_flat.len());

    let initial_cycle = cycle_loss(&pair, z_spe_a, z_spe_b)?;
    let mut cycle_per_epoch = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(batch) {
            let za = z_spe_a.select_rows(chunk);
            let zb = z_spe_b.select_rows(chunk);
            let (d_loss, d_grads) = discriminator_loss(&pair, &za, &zb)?;
            if !d_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "discriminator loss at epoch {epoch}"
                )));
            }
            adam_step(&mut disc_flat, &d_grads, &mut disc_adam, cfg.lr)?;
            pair.read_discriminator_params(&disc_flat);

            let (g_loss, g_grads) = generator_loss(&pair, &za, &zb)?;
            if !g_loss.is_finite() {
                return Err(Error::NonFinite(format!("generator loss at epoch {epoch}")));
            }
            adam_step(&mut gen_flat, &g_grads, &mut gen_adam, cfg.lr)?;
            pair.read_generator_params(&gen_flat);
        }
        cycle_per_epoch.push(cycle_loss(&pair, z_spe_a, z_spe_b)?);
    }
    let final_cycle = cycle_per_epoch.last().copied().unwrap_or(initial_cycle);
    Ok((
        pair,
        AdversarialTrace {
            initial_cycle,
            final_cycle,
            cycle_per_epoch,
        },
    ))
}

/// Candidate single-domain confounders, computed once after training:
/// Ĉ_sd^A = T(Z_spe^B) - Z_spe^A and Ĉ_sd^B = S(Z_spe^A) - Z_spe^B.
pub fn sdc_candidates(pair: &AdversarialPair, z_spe_a: &Mat, z_spe_b: &Mat) -> Result<(Mat, Mat)> {
    check_batches(z_spe_a, z_spe_b)?;
    let c_a = pair.t.forward(z_spe_b)?.sub(z_spe_a)?;
    let c_b = pair.s.forward(z_spe_a)?.sub(z_spe_b)?;
    Ok((c_a, c_b))
}
