use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::confounders::AdversarialConfig;
use crate::dataio::SyntheticConfig;
use crate::deconfounder::{FinetuneConfig, MixtureNormalization, PredictionConfig};
use crate::{Error, Result};

/// Learning-rate grid searched by convention; `lr` defaults to its midpoint.
pub const LR_GRID: [f64; 5] = [0.01, 0.005, 0.001, 0.0005, 0.0001];

/// Where the dual-domain dataset comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    /// Pre-existing interaction TSVs, optionally with raw item features.
    Tsv {
        domain_a: PathBuf,
        domain_b: PathBuf,
        #[serde(default)]
        features_a: Option<PathBuf>,
        #[serde(default)]
        features_b: Option<PathBuf>,
        #[serde(default = "default_min_interactions")]
        min_interactions: usize,
    },
    /// Generated on the fly with planted ground-truth confounders.
    Synthetic(SyntheticConfig),
}

fn default_min_interactions() -> usize {
    2
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticConfig::default())
    }
}

/// Pipeline variant: the full model or one of its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Both confounder families, full backdoor adjustment.
    Full,
    /// Cross-domain subspace only.
    Cross,
    /// Single-domain subspace only.
    Single,
    /// Mean candidate vector concatenated directly, no backdoor adjustment.
    Coarse,
    /// Cycle-consistency weight set to zero during disentanglement.
    Cycle,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Cross => "cross",
            Variant::Single => "single",
            Variant::Coarse => "coarse",
            Variant::Cycle => "cycle",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "cross" => Ok(Variant::Cross),
            "single" => Ok(Variant::Single),
            "coarse" => Ok(Variant::Coarse),
            "cycle" => Ok(Variant::Cycle),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected full|cross|single|coarse|cycle)"
            ))),
        }
    }
}

/// Every knob of a pipeline run, serializable as one experiment record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset: DatasetSource,
    /// Embedding dimension d.
    pub dim: usize,
    /// Graph propagation depth L.
    pub layers: usize,
    /// Interpolation weight for the independent-component augmentation.
    pub eta: f64,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub phase3_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cluster counts per candidate family.
    pub j_sd_a: usize,
    pub j_sd_b: usize,
    pub j_cd: usize,
    /// Cycle-consistency weight.
    pub lambda: f64,
    /// Half-sibling ridge strength.
    pub alpha: f64,
    pub train_negatives: usize,
    pub eval_negatives: usize,
    /// Metric cutoff K.
    pub k: usize,
    pub seed: u64,
    pub mixture_normalization: MixtureNormalization,
    pub variant: Variant,
    /// Fused-input width e.
    pub fusion_dim: usize,
    /// Prediction-head hidden widths.
    pub hidden1: usize,
    pub hidden2: usize,
    /// Final projection width q.
    pub q: usize,
    /// Hidden width of the generators and discriminators.
    pub adversarial_hidden: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: DatasetSource::default(),
            dim: 64,
            layers: 2,
            eta: 0.5,
            phase1_epochs: 50,
            phase2_epochs: 30,
            phase3_epochs: 20,
            batch_size: 1024,
            lr: 0.001,
            j_sd_a: 10,
            j_sd_b: 10,
            j_cd: 10,
            lambda: 1.0,
            alpha: 1.0,
            train_negatives: 7,
            eval_negatives: 999,
            k: 10,
            seed: 0,
            mixture_normalization: MixtureNormalization::Literal,
            variant: Variant::Full,
            fusion_dim: 128,
            hidden1: 32,
            hidden2: 16,
            q: 8,
            adversarial_hidden: 16,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("layers", self.layers),
            ("phase1_epochs", self.phase1_epochs),
            ("phase2_epochs", self.phase2_epochs),
            ("phase3_epochs", self.phase3_epochs),
            ("batch_size", self.batch_size),
            ("j_sd_a", self.j_sd_a),
            ("j_sd_b", self.j_sd_b),
            ("j_cd", self.j_cd),
            ("eval_negatives", self.eval_negatives),
            ("k", self.k),
            ("fusion_dim", self.fusion_dim),
            ("hidden1", self.hidden1),
            ("hidden2", self.hidden2),
            ("q", self.q),
            ("adversarial_hidden", self.adversarial_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.lr > 0.0) || !(self.eta >= 0.0 && self.eta <= 1.0) {
            return Err(Error::Config("lr must be > 0 and eta in [0, 1]".into()));
        }
        if self.lambda < 0.0 || self.alpha <= 0.0 {
            return Err(Error::Config("lambda must be >= 0 and alpha > 0".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Stable fingerprint used to guard checkpoint reuse (FNV-1a over the
    /// canonical JSON encoding).
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        Ok(format!("{h:016x}"))
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            dim: self.dim,
            layers: self.layers,
            eta: self.eta,
            epochs: self.phase1_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            train_negatives: self.train_negatives,
            ..Default::default()
        }
    }

    pub fn adversarial_config(&self) -> AdversarialConfig {
        AdversarialConfig {
            hidden: self.adversarial_hidden,
            epochs: self.phase2_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lambda: if self.variant == Variant::Cycle {
                0.0
            } else {
                self.lambda
            },
            ..Default::default()
        }
    }

    pub fn prediction_config(&self) -> PredictionConfig {
        PredictionConfig {
            fusion_dim: self.fusion_dim,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            q: self.q,
            mixture_normalization: self.mixture_normalization,
            ..Default::default()
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.phase3_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            train_negatives: self.train_negatives,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_literals() {
        let c = PipelineConfig::default();
        // (name, actual, expected) table so a drift names the field
        let table: &[(&str, f64, f64)] = &[
            ("dim", c.dim as f64, 64.0),
            ("layers", c.layers as f64, 2.0),
            ("phase1_epochs", c.phase1_epochs as f64, 50.0),
            ("phase2_epochs", c.phase2_epochs as f64, 30.0),
            ("phase3_epochs", c.phase3_epochs as f64, 20.0),
            ("batch_size", c.batch_size as f64, 1024.0),
            ("lr", c.lr, 0.001),
            ("j_sd_a", c.j_sd_a as f64, 10.0),
            ("j_sd_b", c.j_sd_b as f64, 10.0),
            ("j_cd", c.j_cd as f64, 10.0),
            ("lambda", c.lambda, 1.0),
            ("alpha", c.alpha, 1.0),
            ("train_negatives", c.train_negatives as f64, 7.0),
            ("eval_negatives", c.eval_negatives as f64, 999.0),
            ("k", c.k as f64, 10.0),
            ("fusion_dim", c.fusion_dim as f64, 128.0),
            ("hidden1", c.hidden1 as f64, 32.0),
            ("hidden2", c.hidden2 as f64, 16.0),
            ("q", c.q as f64, 8.0),
        ];
        for (name, got, want) in table {
            assert_eq!(got, want, "default for {name}");
        }
        assert_eq!(LR_GRID, [0.01, 0.005, 0.001, 0.0005, 0.0001]);
        assert_eq!(c.variant, Variant::Full);
        assert!(matches!(
            c.mixture_normalization,
            MixtureNormalization::Literal
        ));
    }

    #[test]
    fn json_roundtrip_and_hash_stability() {
        let c = PipelineConfig::default();
        let json = c.to_json().unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(c.hash().unwrap(), back.hash().unwrap());
        let mut changed = c.clone();
        changed.lambda = 2.0;
        assert_ne!(c.hash().unwrap(), changed.hash().unwrap());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = PipelineConfig { dim: 0, ..Default::default() };
        assert!(c.validate().is_err());
        c.dim = 8;
        c.eta = 1.5;
        assert!(c.validate().is_err());
        c.eta = 0.5;
        c.alpha = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("coarse".parse::<Variant>().unwrap(), Variant::Coarse);
        assert!("bogus".parse::<Variant>().is_err());
        assert_eq!(Variant::Cycle.to_string(), "cycle");
    }

    #[test]
    fn cycle_variant_zeroes_lambda() {
        let mut c = PipelineConfig::default();
        assert_eq!(c.adversarial_config().lambda, 1.0);
        c.variant = Variant::Cycle;
        assert_eq!(c.adversarial_config().lambda, 0.0);
    }
}
