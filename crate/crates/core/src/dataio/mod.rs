//! Dual-domain implicit-feedback data: TSV loading with fixpoint filtering,
//! leave-one-out splitting, training-negative sampling, and a synthetic
//! generator that plants ground-truth confounders.
//!
//! Datasets are immutable after construction; samplers own their seeded
//! randomness.

mod dataset;
mod loader;
mod sampling;
mod split;
mod synthetic;

pub use dataset::{Domain, DomainDataset, DualDomainDataset, Interaction};
pub use loader::{load_domain_tsv, load_feature_file};
pub use sampling::{sample_train_negatives, TrainSample};
pub use split::{leave_one_out_split, DomainSplit, LeaveOneOutSplit, TestInstance};
pub use synthetic::{
    generate_synthetic, PlantedCdc, PlantedSdc, SyntheticConfig, SyntheticGroundTruth,
};
