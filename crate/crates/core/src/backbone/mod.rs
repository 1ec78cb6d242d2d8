//! Phase 1: initial embeddings, linear graph propagation, interpolation
//! augmentation, preference disentanglement with a domain classifier, and
//! attention fusion into comprehensive user preferences.
//!
//! Every trainable structure exposes a flat parameter vector; gradients are
//! hand-derived and validated against finite differences.

mod encoder;
mod graph;
mod model;
mod pretrain;

pub use encoder::{encode_items, Encoder};
pub use graph::BipartiteGraph;
pub use model::{
    augment_interpolate, fuse, fuse_backward, BackboneConfig, BackboneParams, BundleCache,
    BundleGrads, PreferenceBundle,
};
pub use pretrain::{init_backbone, phase1_loss, pretrain};

pub(crate) use model::{bce_logit, softmax as softmax_slice};
