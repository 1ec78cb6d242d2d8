//! Phase 3: backdoor-adjusted prediction and fine-tuning.
//!
//! User/item embedding projections select a softmax weighting over frozen
//! confounder centroids; the weighted mixture joins the user and item
//! embeddings in a fused prediction network trained with cross-entropy.

mod finetune;
mod net;

pub use finetune::{finetune, phase3_loss, DeconfScorer, FinetuneConfig};
pub use net::{
    backdoor_input, backdoor_mixture, confounder_weights, predict, ConfounderContext,
    MixtureNormalization, PredictionConfig, PredictionNetwork,
};
