//! Phase 2: disentangle candidate confounders from frozen Phase-1 outputs.
//!
//! Single-domain candidates come from a dual adversarial structure with cycle
//! consistency (least-squares adversarial objectives); cross-domain
//! candidates come from half-sibling ridge regression between the two
//! domains' comprehensive preferences. K-means distills both candidate
//! families into centroid subspaces used by the Phase-3 backdoor adjustment.

mod adversarial;
mod hsr;
mod subspace;

pub use adversarial::{
    cycle_loss, discriminator_loss, generator_loss, lsgan_losses, sdc_candidates,
    train_dual_adversarial, AdversarialConfig, AdversarialPair, AdversarialTrace, LsganLosses,
    ResidualGenerator,
};
pub use hsr::{cdc_candidates, hsr_fit};
pub use subspace::{build_subspaces, CandidateConfounders, ConfounderSubspace};
