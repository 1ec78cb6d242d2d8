use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backbone::{init_backbone, pretrain, BackboneParams, BipartiteGraph};
use crate::confounders::{
    build_subspaces, cdc_candidates, hsr_fit, sdc_candidates, train_dual_adversarial,
    CandidateConfounders, ConfounderSubspace,
};
use crate::dataio::{
    generate_synthetic, leave_one_out_split, load_domain_tsv, load_feature_file, Domain,
    DomainDataset, DualDomainDataset, LeaveOneOutSplit,
};
use crate::deconfounder::{finetune, ConfounderContext, DeconfScorer, PredictionNetwork};
use crate::eval::{evaluate_domain, MetricsReport};
use crate::numeric::kmeans;
use crate::{Error, Mat, Result};

use super::checkpoint::{quantize, save_checkpoint, try_load_matching, Checkpoint};
use super::config::{DatasetSource, PipelineConfig, Variant};

/// Wall-clock seconds per phase, reported separately from the metrics so the
/// canonical report stays byte-stable across runs. Zero means the phase was
/// restored from a checkpoint instead of computed.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub pretrain_secs: f64,
    pub disentangle_secs: f64,
    pub finetune_secs: f64,
    pub evaluate_secs: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: MetricsReport,
    pub timings: PhaseTimings,
}

/// Resolve the configured dataset source into memory.
pub fn resolve_dataset(cfg: &PipelineConfig) -> Result<DualDomainDataset> {
    match &cfg.dataset {
        DatasetSource::Synthetic(scfg) => {
            let (ds, _) = generate_synthetic(scfg, cfg.seed)?;
            Ok(ds)
        }
        DatasetSource::Tsv {
            domain_a,
            domain_b,
            features_a,
            features_b,
            min_interactions,
        } => {
            let mut a = load_domain_tsv(domain_a, *min_interactions)?;
            let mut b = load_domain_tsv(domain_b, *min_interactions)?;
            if let Some(p) = features_a {
                a.item_features = Some(load_feature_file(p)?);
            }
            if let Some(p) = features_b {
                b.item_features = Some(load_feature_file(p)?);
            }
            DualDomainDataset::pair(a, b)
        }
    }
}

fn write_domain_tsv(ds: &DomainDataset, path: &Path) -> Result<()> {
    let mut out = String::from("# user\titem\ttimestamp\n");
    for (u, inters) in ds.by_user.iter().enumerate() {
        for i in inters {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                ds.user_ids[u], ds.item_ids[i.item], i.timestamp
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

/// Generate the configured synthetic dataset to disk: two interaction TSVs
/// plus a ground-truth manifest with the planted confounder directions.
pub fn cmd_gen(cfg: &PipelineConfig, out_dir: &Path, force: bool) -> Result<()> {
    let scfg = match &cfg.dataset {
        DatasetSource::Synthetic(s) => s.clone(),
        DatasetSource::Tsv { .. } => {
            return Err(Error::Config(
                "gen requires a synthetic dataset source".into(),
            ))
        }
    };
    fs::create_dir_all(out_dir)?;
    let path_a = out_dir.join("domain_a.tsv");
    let path_b = out_dir.join("domain_b.tsv");
    let path_m = out_dir.join("ground_truth.json");
    for p in [&path_a, &path_b, &path_m] {
        refuse_overwrite(p, force)?;
    }

    let (ds, truth) = generate_synthetic(&scfg, cfg.seed)?;
    write_domain_tsv(&ds.domain_a, &path_a)?;
    write_domain_tsv(&ds.domain_b, &path_b)?;

    let manifest = json!({
        "config": scfg,
        "seed": cfg.seed,
        "confounder_free": scfg.beta_sd == 0.0 && scfg.beta_cd == 0.0,
        "density_a": ds.domain_a.density(),
        "density_b": ds.domain_b.density(),
        "sdc_a": truth.sdc_a.iter().map(|c| &c.vector).collect::<Vec<_>>(),
        "sdc_b": truth.sdc_b.iter().map(|c| &c.vector).collect::<Vec<_>>(),
        "cdc": truth.cdc.iter().map(|c| &c.vector).collect::<Vec<_>>(),
    });
    fs::write(&path_m, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// How far into the pipeline a command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Pretrain,
    Disentangle,
    Train,
    Evaluate,
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    out: &'a Path,
    hash: String,
    ds: DualDomainDataset,
    split: LeaveOneOutSplit,
    graph_a: BipartiteGraph,
    graph_b: BipartiteGraph,
    timings: PhaseTimings,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a PipelineConfig, out: &'a Path) -> Result<Self> {
        cfg.validate()?;
        fs::create_dir_all(out)?;
        let ds = resolve_dataset(cfg)?;
        let split = leave_one_out_split(&ds, cfg.eval_negatives, cfg.seed.wrapping_add(1))?;
        let graph_a = BipartiteGraph::from_train(&split.domain_a.train, ds.domain_a.num_items())?;
        let graph_b = BipartiteGraph::from_train(&split.domain_b.train, ds.domain_b.num_items())?;
        Ok(Runner {
            cfg,
            out,
            hash: cfg.hash()?,
            ds,
            split,
            graph_a,
            graph_b,
            timings: PhaseTimings::default(),
        })
    }

    /// Phase 1, checkpoint-mediated: parameters always round through storage
    /// precision so resumed and uninterrupted runs are identical.
    fn phase1(&mut self) -> Result<BackboneParams> {
        let dir = self.out.join("phase1");
        let bcfg = self.cfg.backbone_config();
        let flat = match try_load_matching(&dir, &self.hash)? {
            Some(ckpt) => ckpt.flat("backbone")?,
            None => {
                let start = Instant::now();
                let (params, _) = pretrain(
                    &self.ds,
                    &self.split,
                    &bcfg,
                    self.cfg.seed.wrapping_add(2),
                )?;
                self.timings.pretrain_secs = start.elapsed().as_secs_f64();
                let mut flat = Vec::with_capacity(params.param_len());
                params.append_params(&mut flat);
                quantize(&mut flat);
                let mut ckpt = Checkpoint::new(&self.hash, "pretrain");
                ckpt.insert_flat("backbone", &flat)?;
                save_checkpoint(&ckpt, &dir)?;
                flat
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(2));
        let mut params = init_backbone(&self.ds, &bcfg, &mut rng)?;
        if flat.len() != params.param_len() {
            return Err(Error::Integrity(format!(
                "backbone block has {} values, model needs {}",
                flat.len(),
                params.param_len()
            )));
        }
        params.read_params(&flat);
        Ok(params)
    }

    fn phase2(
        &mut self,
        backbone: &BackboneParams,
    ) -> Result<(ConfounderContext, ConfounderContext)> {
        let dir = self.out.join("phase2");
        if let Some(ckpt) = try_load_matching(&dir, &self.hash)? {
            return Ok((load_context(&ckpt, "ctx_a")?, load_context(&ckpt, "ctx_b")?));
        }
        let start = Instant::now();
        let cfg = self.cfg;
        let (bundle, _) = backbone.forward(&self.graph_a, &self.graph_b)?;

        // SDC candidates from the dual adversarial structure (skipped when
        // the variant drops the single-domain family entirely)
        let sdc = if cfg.variant == Variant::Cross {
            None
        } else {
            let (pair, _trace) = train_dual_adversarial(
                bundle.z_spe(Domain::A),
                bundle.z_spe(Domain::B),
                &cfg.adversarial_config(),
                cfg.seed.wrapping_add(3),
            )?;
            Some(sdc_candidates(
                &pair,
                bundle.z_spe(Domain::A),
                bundle.z_spe(Domain::B),
            )?)
        };
        // CDC candidates from half-sibling ridge regression
        let cdc = if cfg.variant == Variant::Single {
            None
        } else {
            let (w_ab, w_ba) = hsr_fit(bundle.user(Domain::A), bundle.user(Domain::B), cfg.alpha)?;
            let (cdc_ab, cdc_ba) =
                cdc_candidates(bundle.user(Domain::A), bundle.user(Domain::B), &w_ab, &w_ba)?;
            Some((cdc_ab, cdc_ba, w_ab, w_ba))
        };

        let km_seed = cfg.seed.wrapping_add(4);
        let (ctx_a, ctx_b) = match cfg.variant {
            Variant::Full | Variant::Cycle => {
                let (sdc_a, sdc_b) = sdc.unwrap();
                let (cdc_ab, cdc_ba, w_ab, w_ba) = cdc.unwrap();
                let cands = CandidateConfounders { sdc_a, sdc_b, cdc_ab, cdc_ba, w_ab, w_ba };
                let sub: ConfounderSubspace =
                    build_subspaces(&cands, cfg.j_sd_a, cfg.j_sd_b, cfg.j_cd, km_seed)?;
                (
                    ConfounderContext::Subspace { centroids: sub.union_a()? },
                    ConfounderContext::Subspace { centroids: sub.union_b()? },
                )
            }
            Variant::Cross => {
                let (cdc_ab, cdc_ba, _, _) = cdc.unwrap();
                let all = cdc_ab.vstack(&cdc_ba)?;
                let c_cd = kmeans(&all, cfg.j_cd, 100, km_seed)?.centroids;
                (
                    ConfounderContext::Subspace { centroids: c_cd.clone() },
                    ConfounderContext::Subspace { centroids: c_cd },
                )
            }
            Variant::Single => {
                let (sdc_a, sdc_b) = sdc.unwrap();
                let c_a = kmeans(&sdc_a, cfg.j_sd_a, 100, km_seed)?.centroids;
                let c_b = kmeans(&sdc_b, cfg.j_sd_b, 100, km_seed.wrapping_add(1))?.centroids;
                (
                    ConfounderContext::Subspace { centroids: c_a },
                    ConfounderContext::Subspace { centroids: c_b },
                )
            }
            Variant::Coarse => {
                let (sdc_a, sdc_b) = sdc.unwrap();
                let (cdc_ab, cdc_ba, _, _) = cdc.unwrap();
                let shared = cdc_ab.vstack(&cdc_ba)?;
                (
                    ConfounderContext::Fixed { vector: mean_row(&sdc_a.vstack(&shared)?) },
                    ConfounderContext::Fixed { vector: mean_row(&sdc_b.vstack(&shared)?) },
                )
            }
        };
        self.timings.disentangle_secs = start.elapsed().as_secs_f64();

        let mut ckpt = Checkpoint::new(&self.hash, "disentangle");
        store_context(&mut ckpt, "ctx_a", &ctx_a)?;
        store_context(&mut ckpt, "ctx_b", &ctx_b)?;
        save_checkpoint(&ckpt, &dir)?;
        // reload so in-memory contexts carry storage precision
        let ckpt = try_load_matching(&dir, &self.hash)?
            .ok_or_else(|| Error::Integrity("phase-2 checkpoint vanished after save".into()))?;
        Ok((load_context(&ckpt, "ctx_a")?, load_context(&ckpt, "ctx_b")?))
    }

    fn phase3(
        &mut self,
        backbone: &mut BackboneParams,
        ctx_a: &ConfounderContext,
        ctx_b: &ConfounderContext,
    ) -> Result<PredictionNetwork> {
        let dir = self.out.join("phase3");
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(5));
        let mut net = PredictionNetwork::init(self.cfg.dim, &self.cfg.prediction_config(), &mut rng)?;
        let (b_flat, n_flat) = match try_load_matching(&dir, &self.hash)? {
            Some(ckpt) => (ckpt.flat("backbone")?, ckpt.flat("net")?),
            None => {
                let start = Instant::now();
                finetune(
                    backbone,
                    &mut net,
                    ctx_a,
                    ctx_b,
                    &self.ds,
                    &self.split,
                    &self.cfg.finetune_config(),
                    self.cfg.seed.wrapping_add(6),
                )?;
                self.timings.finetune_secs = start.elapsed().as_secs_f64();
                let mut b_flat = Vec::new();
                backbone.append_params(&mut b_flat);
                let mut n_flat = Vec::new();
                net.append_params(&mut n_flat);
                quantize(&mut b_flat);
                quantize(&mut n_flat);
                let mut ckpt = Checkpoint::new(&self.hash, "train");
                ckpt.insert_flat("backbone", &b_flat)?;
                ckpt.insert_flat("net", &n_flat)?;
                save_checkpoint(&ckpt, &dir)?;
                (b_flat, n_flat)
            }
        };
        if b_flat.len() != backbone.param_len() || n_flat.len() != net.param_len() {
            return Err(Error::Integrity(
                "phase-3 checkpoint block sizes do not match the model".into(),
            ));
        }
        backbone.read_params(&b_flat);
        net.read_params(&n_flat);
        Ok(net)
    }

    fn evaluate(
        &mut self,
        backbone: &BackboneParams,
        net: &PredictionNetwork,
        ctx_a: &ConfounderContext,
        ctx_b: &ConfounderContext,
        force: bool,
    ) -> Result<MetricsReport> {
        let report_path = self.out.join("report.json");
        refuse_overwrite(&report_path, force)?;
        let start = Instant::now();
        let (bundle, _) = backbone.forward(&self.graph_a, &self.graph_b)?;
        let scorer = DeconfScorer { bundle: &bundle, net, ctx_a, ctx_b };
        let a = evaluate_domain(&scorer, &self.split.domain_a, Domain::A, self.cfg.k)?;
        let b = evaluate_domain(&scorer, &self.split.domain_b, Domain::B, self.cfg.k)?;
        let report = MetricsReport {
            k: self.cfg.k,
            variant: self.cfg.variant.tag().to_string(),
            seed: self.cfg.seed,
            domain_a: a,
            domain_b: b,
        };
        self.timings.evaluate_secs = start.elapsed().as_secs_f64();
        fs::write(&report_path, report.to_json()?)?;
        fs::write(self.out.join("report.txt"), report.to_table())?;
        fs::write(self.out.join("report.csv"), report.to_csv())?;
        fs::write(
            self.out.join("timings.json"),
            serde_json::to_string_pretty(&self.timings)?,
        )?;
        Ok(report)
    }
}

fn mean_row(m: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, &v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    let n = m.rows().max(1) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

fn store_context(ckpt: &mut Checkpoint, name: &str, ctx: &ConfounderContext) -> Result<()> {
    match ctx {
        ConfounderContext::Subspace { centroids } => {
            ckpt.insert(&format!("{name}_subspace"), centroids.clone());
        }
        ConfounderContext::Fixed { vector } => {
            ckpt.insert_flat(&format!("{name}_fixed"), vector)?;
        }
    }
    Ok(())
}

fn load_context(ckpt: &Checkpoint, name: &str) -> Result<ConfounderContext> {
    let sub = format!("{name}_subspace");
    let fix = format!("{name}_fixed");
    if ckpt.blocks.contains_key(&sub) {
        Ok(ConfounderContext::Subspace { centroids: ckpt.block(&sub)?.clone() })
    } else if ckpt.blocks.contains_key(&fix) {
        Ok(ConfounderContext::Fixed { vector: ckpt.flat(&fix)? })
    } else {
        Err(Error::Integrity(format!(
            "checkpoint has neither '{sub}' nor '{fix}'"
        )))
    }
}

/// Run the pipeline up to `stage`, reusing any valid checkpoints in
/// `out_dir`. Returns the outcome only when the evaluation stage runs.
pub fn run_stage(
    cfg: &PipelineConfig,
    out_dir: &Path,
    stage: Stage,
    force: bool,
) -> Result<Option<PipelineOutcome>> {
    let mut runner = Runner::new(cfg, out_dir)?;
    let mut backbone = runner.phase1()?;
    if stage == Stage::Pretrain {
        return Ok(None);
    }
    let (ctx_a, ctx_b) = runner.phase2(&backbone)?;
    if stage == Stage::Disentangle {
        return Ok(None);
    }
    let net = runner.phase3(&mut backbone, &ctx_a, &ctx_b)?;
    if stage == Stage::Train {
        return Ok(None);
    }
    let report = runner.evaluate(&backbone, &net, &ctx_a, &ctx_b, force)?;
    let timings = runner.timings.clone();
    Ok(Some(PipelineOutcome { report, timings }))
}

/// Full three-phase run: pretrain, disentangle, fine-tune, evaluate.
pub fn cmd_pipeline(cfg: &PipelineConfig, out_dir: &Path, force: bool) -> Result<PipelineOutcome> {
    run_stage(cfg, out_dir, Stage::Evaluate, force)?
        .ok_or_else(|| Error::Integrity("evaluation stage produced no outcome".into()))
}

/// Which hyperparameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// All three cluster counts together.
    J,
    Lambda,
    Alpha,
}

impl SweepParam {
    pub fn tag(self) -> &'static str {
        match self {
            SweepParam::J => "j",
            SweepParam::Lambda => "lambda",
            SweepParam::Alpha => "alpha",
        }
    }

    /// Conventional grid for this parameter.
    pub fn preset(self) -> Vec<f64> {
        match self {
            SweepParam::J => vec![2.0, 5.0, 10.0, 20.0, 50.0],
            SweepParam::Lambda => vec![0.1, 1.0, 2.0, 5.0, 10.0],
            SweepParam::Alpha => vec![0.1, 1.0, 10.0, 20.0, 50.0],
        }
    }

    fn apply(self, cfg: &mut PipelineConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::J => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "cluster count must be a positive integer, got {value}"
                    )));
                }
                let j = value as usize;
                cfg.j_sd_a = j;
                cfg.j_sd_b = j;
                cfg.j_cd = j;
            }
            SweepParam::Lambda => cfg.lambda = value,
            SweepParam::Alpha => cfg.alpha = value,
        }
        Ok(())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "j" | "J" => Ok(SweepParam::J),
            "lambda" => Ok(SweepParam::Lambda),
            "alpha" => Ok(SweepParam::Alpha),
            other => Err(Error::Config(format!(
                "unknown sweep parameter '{other}' (expected j|lambda|alpha)"
            ))),
        }
    }
}

/// One full pipeline per value under a shared base seed; per-value failures
/// are recorded in the CSV and the sweep continues. Returns the CSV text and
/// writes it to `sweep.csv` in `out_dir`.
pub fn cmd_sweep(
    cfg: &PipelineConfig,
    param: SweepParam,
    values: &[f64],
    out_dir: &Path,
    force: bool,
) -> Result<String> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("sweep.csv");
    refuse_overwrite(&csv_path, force)?;

    let mut csv = String::from("parameter,value,domain,metric,score,status\n");
    for &value in values {
        let run = (|| -> Result<PipelineOutcome> {
            let mut c = cfg.clone();
            param.apply(&mut c, value)?;
            let sub = out_dir.join(format!("{}_{}", param.tag(), value));
            cmd_pipeline(&c, &sub, force)
        })();
        match run {
            Ok(outcome) => {
                let r = &outcome.report;
                for (domain, m) in [("A", &r.domain_a), ("B", &r.domain_b)] {
                    for (metric, score) in [("hr", m.hr), ("ndcg", m.ndcg)] {
                        csv.push_str(&format!(
                            "{},{},{},{}@{},{},ok\n",
                            param.tag(),
                            value,
                            domain,
                            metric,
                            cfg.k,
                            score
                        ));
                    }
                }
            }
            Err(e) => {
                let msg = e.to_string().replace([',', '\n'], ";");
                for domain in ["A", "B"] {
                    for metric in ["hr", "ndcg"] {
                        csv.push_str(&format!(
                            "{},{},{},{}@{},,{}\n",
                            param.tag(),
                            value,
                            domain,
                            metric,
                            cfg.k,
                            msg
                        ));
                    }
                }
            }
        }
    }
    fs::write(&csv_path, &csv)?;
    Ok(csv)
}
