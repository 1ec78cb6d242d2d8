//! Causal-deconfounding dual-target cross-domain recommendation.
//!
//! The pipeline runs in three phases over a pair of implicit-feedback domains
//! with a common user set:
//!
//! 1. **Pretraining** ([`backbone`]) — graph-propagated embeddings are
//!    disentangled into shared, specific, and independent preference
//!    components and fused into comprehensive user preferences per domain.
//! 2. **Confounder disentanglement** ([`confounders`]) — single-domain
//!    confounder candidates come out of a cycle-consistent dual adversarial
//!    structure over domain-specific preferences; cross-domain candidates come
//!    out of half-sibling ridge regression between the two domains'
//!    comprehensive preferences. Both are distilled into centroid subspaces.
//! 3. **Deconfounded prediction** ([`deconfounder`]) — interaction
//!    probabilities are predicted with backdoor adjustment over the confounder
//!    subspaces and fine-tuned end to end.
//!
//! [`dataio`] loads and generates dual-domain datasets (including a synthetic
//! generator that plants ground-truth confounders), [`eval`] implements the
//! leave-one-out HR@K/NDCG@K protocol, and [`pipeline`] orchestrates the
//! phases with checkpointing.

pub mod backbone;
pub mod confounders;
pub mod dataio;
pub mod deconfounder;
mod error;
pub mod eval;
pub mod numeric;
pub mod pipeline;

pub use error::{Error, Result};
pub use numeric::Mat;
