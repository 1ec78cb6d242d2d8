//! Acceptance gate: one test per release criterion, each printing a single
//! PASS/FAIL line. Oracles (Gaussian elimination, power iteration, closed-form
//! metric values) are implemented independently inside this file.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deconfrec::backbone::{init_backbone, BackboneConfig, BipartiteGraph};
use deconfrec::confounders::{
    cdc_candidates, discriminator_loss, generator_loss, hsr_fit, sdc_candidates,
    train_dual_adversarial, AdversarialConfig, AdversarialPair,
};
use deconfrec::dataio::{
    generate_synthetic, leave_one_out_split, sample_train_negatives, Domain, SyntheticConfig,
};
use deconfrec::deconfounder::{
    confounder_weights, phase3_loss, ConfounderContext, PredictionConfig, PredictionNetwork,
};
use deconfrec::eval::{evaluate_domain, hr_at_k, ndcg_at_k, rank_test_item, Scorer};
use deconfrec::numeric::{grad_check, ridge_solve};
use deconfrec::pipeline::{
    cmd_pipeline, DatasetSource, PipelineConfig, Variant, LR_GRID,
};
use deconfrec::Mat;

fn verdict(n: usize, what: &str, pass: bool) {
    println!(
        "criterion {n:2} ({what}): {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {what}");
}

fn random_mat(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Mat {
    let data = (0..rows * cols)
        .map(|_| scale * (rng.gen::<f64>() - 0.5))
        .collect();
    Mat::from_vec(rows, cols, data).unwrap()
}

// --- criterion 1: selection weights form a probability distribution --------

#[test]
fn criterion_01_selection_weights_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.gen_range(2..=16);
        let j = rng.gen_range(1..=12);
        let net = PredictionNetwork::init(
            d,
            &PredictionConfig {
                fusion_dim: 8,
                hidden1: 6,
                hidden2: 5,
                q: 3,
                init_scale: 0.5,
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        let e_u: Vec<f64> = (0..d).map(|_| 3.0 * (rng.gen::<f64>() - 0.5)).collect();
        let e_v: Vec<f64> = (0..d).map(|_| 3.0 * (rng.gen::<f64>() - 0.5)).collect();
        let centroids = random_mat(j, d, 4.0, &mut rng);
        let phi = confounder_weights(&e_u, &e_v, &centroids, &net).unwrap();
        worst = worst.max((phi.iter().sum::<f64>() - 1.0).abs());
    }
    verdict(1, "selection weights sum to 1 within 1e-6", worst < 1e-6);
}

// --- criterion 2: ridge solver vs an independent eliminator ----------------

/// Gaussian elimination with partial pivoting; written independently of the
/// library's Cholesky-based solver.
fn gauss_solve(a: &Mat, b: &Mat) -> Mat {
    let n = a.rows();
    let m = b.cols();
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.extend_from_slice(b.row(i));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, piv);
        let p = aug[col][col];
        for i in 0..n {
            if i != col {
                let f = aug[i][col] / p;
                for j in col..n + m {
                    aug[i][j] -= f * aug[col][j];
                }
            }
        }
    }
    let data: Vec<f64> = (0..n)
        .flat_map(|i| {
            let p = aug[i][i];
            aug[i][n..].iter().map(move |v| v / p).collect::<Vec<_>>()
        })
        .collect();
    Mat::from_vec(n, m, data).unwrap()
}

#[test]
fn criterion_02_ridge_matches_elimination_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_rel: f64 = 0.0;
    let mut worst_residual: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.gen_range(2..=20);
        let d = rng.gen_range(1..=8);
        let dy = rng.gen_range(1..=8);
        let alpha = 10f64.powf(rng.gen_range(-2.0..2.0));
        let x = random_mat(m, d, 2.0, &mut rng);
        let y = random_mat(m, dy, 2.0, &mut rng);
        let w = ridge_solve(&x, &y, alpha).unwrap();

        // normal equations assembled and solved independently
        let mut gram = x.matmul_tn(&x).unwrap();
        for i in 0..d {
            gram.set(i, i, gram.get(i, i) + alpha);
        }
        let rhs = x.matmul_tn(&y).unwrap();
        let w_oracle = gauss_solve(&gram, &rhs);

        let rel = w.sub(&w_oracle).unwrap().frob_norm() / w_oracle.frob_norm().max(1e-300);
        worst_rel = worst_rel.max(rel);
        let residual = gram.matmul(&w).unwrap().sub(&rhs).unwrap().frob_norm()
            / rhs.frob_norm().max(1.0);
        worst_residual = worst_residual.max(residual);
    }
    verdict(
        2,
        "ridge equals elimination oracle within 1e-8",
        worst_rel < 1e-8 && worst_residual < 1e-8,
    );
}

// --- criterion 3: every hand-derived gradient matches finite differences ---

#[test]
fn criterion_03_gradients_match_finite_differences() {
    let scfg = SyntheticConfig {
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
    let (ds, _) = generate_synthetic(&scfg, 303).unwrap();
    let split = leave_one_out_split(&ds, 3, 0).unwrap();
    let bcfg = BackboneConfig {
        dim: 3,
        layers: 1,
        classifier_hidden: 4,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut backbone = init_backbone(&ds, &bcfg, &mut rng).unwrap();
    let mut flat = Vec::new();
    backbone.append_params(&mut flat);
    let mut prng = ChaCha8Rng::seed_from_u64(31);
    for v in flat.iter_mut() {
        *v += 0.1 * (prng.gen::<f64>() - 0.5);
    }
    backbone.read_params(&flat);
    let graph_a = BipartiteGraph::from_train(&split.domain_a.train, 8).unwrap();
    let graph_b = BipartiteGraph::from_train(&split.domain_b.train, 8).unwrap();
    let batch_a = sample_train_negatives(&split.domain_a, &ds.domain_a, 2, 7).unwrap();
    let batch_b = sample_train_negatives(&split.domain_b, &ds.domain_b, 2, 8).unwrap();

    // backbone pretraining loss
    let tb = backbone.clone();
    let err_backbone = grad_check(
        |p| {
            let mut b = tb.clone();
            b.read_params(p);
            deconfrec::backbone::phase1_loss(&b, &graph_a, &graph_b, &batch_a, &batch_b, &bcfg)
        },
        &flat,
        1e-6,
    )
    .unwrap();

    // adversarial generators and discriminators
    let za = random_mat(6, 4, 2.0, &mut rng);
    let zb = za
        .add(&random_mat(6, 4, 0.6, &mut rng))
        .unwrap();
    let acfg = AdversarialConfig {
        hidden: 4,
        generator_init: 0.4,
        discriminator_init: 0.3,
        ..Default::default()
    };
    let pair = AdversarialPair::init(4, &acfg, &mut rng).unwrap();
    let mut gp = Vec::new();
    pair.append_generator_params(&mut gp);
    let err_gen = grad_check(
        |p| {
            let mut q = pair.clone();
            q.read_generator_params(p);
            generator_loss(&q, &za, &zb)
        },
        &gp,
        1e-6,
    )
    .unwrap();
    let mut dp = Vec::new();
    pair.append_discriminator_params(&mut dp);
    let err_disc = grad_check(
        |p| {
            let mut q = pair.clone();
            q.read_discriminator_params(p);
            discriminator_loss(&q, &za, &zb)
        },
        &dp,
        1e-6,
    )
    .unwrap();

    // full fine-tuning loss through the backdoor mixture
    let ncfg = PredictionConfig {
        fusion_dim: 6,
        hidden1: 5,
        hidden2: 4,
        q: 3,
        init_scale: 0.2,
        ..Default::default()
    };
    let net = PredictionNetwork::init(3, &ncfg, &mut rng).unwrap();
    let ctx_a = ConfounderContext::Subspace {
        centroids: random_mat(2, 3, 1.0, &mut rng),
    };
    let ctx_b = ConfounderContext::Subspace {
        centroids: random_mat(3, 3, 1.0, &mut rng),
    };
    let mut full = flat.clone();
    net.append_params(&mut full);
    let blen = flat.len();
    let (tb, tn) = (backbone.clone(), net.clone());
    let err_phase3 = grad_check(
        |p| {
            let mut b = tb.clone();
            let mut n = tn.clone();
            b.read_params(&p[..blen]);
            n.read_params(&p[blen..]);
            phase3_loss(&b, &n, &graph_a, &graph_b, &ctx_a, &ctx_b, &batch_a, &batch_b)
        },
        &full,
        1e-6,
    )
    .unwrap();

    let worst = err_backbone.max(err_gen).max(err_disc).max(err_phase3);
    verdict(3, "all analytic gradients within 1e-4 of central differences", worst < 1e-4);
}

// --- criterion 4: the cross-domain candidate family recovers the planted
// --- cross-domain direction ------------------------------------------------

fn top_principal_direction(points: &Mat) -> Vec<f64> {
    // column-center, then power-iterate C^T C
    let (n, d) = (points.rows(), points.cols());
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(points.row(r)) {
            *m += v / n as f64;
        }
    }
    let centered = Mat::from_vec(
        n,
        d,
        (0..n)
            .flat_map(|r| {
                points
                    .row(r)
                    .iter()
                    .zip(&mean)
                    .map(|(&v, &m)| v - m)
                    .collect::<Vec<_>>()
            })
            .collect(),
    )
    .unwrap();
    let cov = centered.matmul_tn(&centered).unwrap();
    let mut v: Vec<f64> = (0..d).map(|i| ((i + 1) as f64).sin()).collect();
    for _ in 0..300 {
        let mut next = vec![0.0; d];
        for i in 0..d {
            for (nj, &c) in next.iter_mut().zip(cov.row(i)) {
                *nj += v[i] * c;
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = next.iter().map(|x| x / norm).collect();
    }
    v
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn criterion_04_cross_domain_confounder_recovery() {
    let mut wins = 0;
    for seed in 0..5u64 {
        let scfg = SyntheticConfig {
            users: 500,
            items_a: 600,
            items_b: 600,
            latent_dim: 16,
            sdc_a: 2,
            sdc_b: 2,
            cdc: 1,
            beta_cd: 2.0,
            ..Default::default()
        };
        let (_, truth) = generate_synthetic(&scfg, 400 + seed).unwrap();
        let (w_ab, w_ba) = hsr_fit(&truth.pref_a, &truth.pref_b, 1.0).unwrap();
        let (cdc_ab, cdc_ba) = cdc_candidates(&truth.pref_a, &truth.pref_b, &w_ab, &w_ba).unwrap();
        let stacked = cdc_ab.vstack(&cdc_ba).unwrap();
        let pc = top_principal_direction(&stacked);

        let cdc_cos = cosine(&pc, &truth.cdc[0].vector).abs();
        let max_sdc_cos = truth
            .sdc_a
            .iter()
            .chain(truth.sdc_b.iter())
            .map(|s| cosine(&pc, &s.vector).abs())
            .fold(0.0f64, f64::max);
        if cdc_cos > 0.8 && max_sdc_cos < 0.3 {
            wins += 1;
        }
    }
    verdict(4, "top candidate direction matches the planted cross-domain confounder", wins >= 4);
}

// --- criteria 5 and 6: adversarial extraction on ground-truth pairs --------

fn adversarial_training_config(lambda: f64, generator_init: f64) -> AdversarialConfig {
    AdversarialConfig {
        hidden: 16,
        epochs: 200,
        batch_size: 256,
        lr: 0.002,
        lambda,
        generator_init,
        ..Default::default()
    }
}

#[test]
fn criterion_05_no_confounder_no_candidates() {
    let mut wins = 0;
    for seed in 0..5u64 {
        let scfg = SyntheticConfig {
            users: 500,
            items_a: 600,
            items_b: 600,
            latent_dim: 16,
            beta_sd: 0.0,
            beta_cd: 0.0,
            ..Default::default()
        };
        let (_, truth) = generate_synthetic(&scfg, 500 + seed).unwrap();
        let (za, zb) = (&truth.confounded_spe_a, &truth.confounded_spe_b);
        // near-identity start: any candidate mass must come from the data
        let (pair, _) =
            train_dual_adversarial(za, zb, &adversarial_training_config(1.0, 0.05), 900 + seed)
                .unwrap();
        let (ca, cb) = sdc_candidates(&pair, za, zb).unwrap();

        let mean_norm = |m: &Mat| -> f64 {
            (0..m.rows())
                .map(|r| m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
                .sum::<f64>()
                / m.rows() as f64
        };
        let cand = 0.5 * (mean_norm(&ca) + mean_norm(&cb));
        let spe = 0.5 * (mean_norm(za) + mean_norm(zb));
        if cand < 0.1 * spe {
            wins += 1;
        }
    }
    verdict(5, "confounder-free control yields near-zero candidates", wins >= 4);
}

#[test]
fn criterion_06_cycle_consistency_tightens_the_loop() {
    let mut wins = 0;
    for seed in 0..5u64 {
        let scfg = SyntheticConfig {
            users: 500,
            items_a: 600,
            items_b: 600,
            latent_dim: 16,
            ..Default::default()
        };
        let (_, truth) = generate_synthetic(&scfg, 600 + seed).unwrap();
        let (za, zb) = (&truth.confounded_spe_a, &truth.confounded_spe_b);
        // perturbed start so the initial reconstruction error is measurable
        let (_, with) =
            train_dual_adversarial(za, zb, &adversarial_training_config(1.0, 0.3), 910 + seed)
                .unwrap();
        let (_, without) =
            train_dual_adversarial(za, zb, &adversarial_training_config(0.0, 0.3), 910 + seed)
                .unwrap();
        if with.final_cycle < 0.05 * with.initial_cycle && with.final_cycle < without.final_cycle {
            wins += 1;
        }
    }
    verdict(6, "cycle penalty shrinks reconstruction error below the unpenalized run", wins >= 4);
}

// --- criterion 7: full model vs the no-adjustment comparison ---------------

fn ablation_config(seed: u64, variant: Variant) -> PipelineConfig {
    PipelineConfig {
        dataset: DatasetSource::Synthetic(SyntheticConfig {
            users: 1000,
            items_a: 2000,
            items_b: 2000,
            latent_dim: 16,
            sdc_a: 2,
            sdc_b: 2,
            cdc: 1,
            beta_sd: 2.0,
            beta_cd: 2.0,
            density: 0.02,
            ..Default::default()
        }),
        dim: 16,
        layers: 2,
        phase1_epochs: 8,
        phase2_epochs: 8,
        phase3_epochs: 8,
        batch_size: 1024,
        lr: 0.005,
        j_sd_a: 4,
        j_sd_b: 4,
        j_cd: 4,
        eval_negatives: 199,
        fusion_dim: 32,
        hidden1: 16,
        hidden2: 8,
        q: 4,
        seed,
        variant,
        ..Default::default()
    }
}

#[test]
fn criterion_07_backdoor_adjustment_beats_coarse_concatenation() {
    let mut wins = 0;
    for seed in 0..5u64 {
        let dir = tempfile::tempdir().unwrap();
        let full = cmd_pipeline(
            &ablation_config(700 + seed, Variant::Full),
            &dir.path().join("full"),
            false,
        )
        .unwrap();
        let coarse = cmd_pipeline(
            &ablation_config(700 + seed, Variant::Coarse),
            &dir.path().join("coarse"),
            false,
        )
        .unwrap();
        let hr = |r: &deconfrec::eval::MetricsReport| 0.5 * (r.domain_a.hr + r.domain_b.hr);
        if hr(&full.report) > hr(&coarse.report) {
            wins += 1;
        }
    }
    verdict(7, "full model beats coarse concatenation on HR@10 in >= 4/5 paired seeds", wins >= 4);
}

// --- criterion 8: ranking metrics against closed forms ---------------------

struct SeededRandomScorer;

impl Scorer for SeededRandomScorer {
    fn score(&self, user: usize, item: usize, _domain: Domain) -> f64 {
        // splitmix-style hash keeps scores i.i.d.-like and deterministic
        let mut x = (user as u64) << 32 | item as u64;
        x = x.wrapping_add(0x9e3779b97f4a7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
        (x ^ (x >> 31)) as f64 / u64::MAX as f64
    }
}

#[test]
fn criterion_08_metric_unit_suite() {
    // closed-form spot checks
    let mut ok = ndcg_at_k(3, 10) == 0.5 && hr_at_k(3, 10) == 1.0;
    ok &= hr_at_k(11, 10) == 0.0 && ndcg_at_k(11, 10) == 0.0;
    ok &= ndcg_at_k(1, 10) == 1.0;
    ok &= (ndcg_at_k(2, 10) - 1.0 / 3f64.log2()).abs() < 1e-15;
    ok &= rank_test_item(5, 2.0, &[(1, 3.0), (2, 1.0)]) == 2;

    // random scorer over 1000 users x 999 negatives
    let scfg = SyntheticConfig {
        users: 1000,
        items_a: 1200,
        items_b: 1200,
        density: 0.05,
        ..Default::default()
    };
    let (ds, _) = generate_synthetic(&scfg, 800).unwrap();
    let split = leave_one_out_split(&ds, 999, 1).unwrap();
    let m = evaluate_domain(&SeededRandomScorer, &split.domain_a, Domain::A, 10).unwrap();
    let p = 10.0 / 1000.0;
    let sigma = (p * (1.0 - p) / m.test_users as f64).sqrt();
    ok &= (m.hr - p).abs() < 3.0 * sigma;
    ok &= m.ndcg <= m.hr;
    verdict(8, "ranking metrics match closed forms and the random-scorer rate", ok);
}

// --- criterion 9: bitwise-deterministic reports ----------------------------

#[test]
fn criterion_09_same_seed_same_report_bytes() {
    let cfg = PipelineConfig {
        dataset: DatasetSource::Synthetic(SyntheticConfig {
            users: 60,
            items_a: 80,
            items_b: 80,
            latent_dim: 8,
            density: 0.08,
            ..Default::default()
        }),
        dim: 6,
        layers: 2,
        phase1_epochs: 3,
        phase2_epochs: 3,
        phase3_epochs: 3,
        batch_size: 128,
        j_sd_a: 2,
        j_sd_b: 2,
        j_cd: 2,
        eval_negatives: 40,
        fusion_dim: 12,
        hidden1: 8,
        hidden2: 6,
        q: 4,
        seed: 901,
        ..Default::default()
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_pipeline(&cfg, d1.path(), false).unwrap();
    cmd_pipeline(&cfg, d2.path(), false).unwrap();
    let r1 = std::fs::read(d1.path().join("report.json")).unwrap();
    let r2 = std::fs::read(d2.path().join("report.json")).unwrap();
    verdict(9, "fixed-seed pipeline reports are byte-identical", r1 == r2);
}

// --- criterion 10: defaults stay pinned to the documented literals ---------

#[test]
fn criterion_10_config_defaults_pinned() {
    let c = PipelineConfig::default();
    let ok = c.dim == 64
        && c.batch_size == 1024
        && c.phase1_epochs == 50
        && c.phase2_epochs == 30
        && c.phase3_epochs == 20
        && c.j_sd_a == 10
        && c.j_sd_b == 10
        && c.j_cd == 10
        && c.lambda == 1.0
        && c.alpha == 1.0
        && c.train_negatives == 7
        && c.eval_negatives == 999
        && c.fusion_dim == 128
        && c.hidden1 == 32
        && c.hidden2 == 16
        && c.q == 8
        && c.lr == 0.001
        && LR_GRID == [0.01, 0.005, 0.001, 0.0005, 0.0001];
    verdict(10, "pipeline defaults match the documented literals", ok);
}
