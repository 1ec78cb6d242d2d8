//! Three-phase orchestration with checkpointing: configuration, artifact
//! persistence, full pipeline runs, ablation variants, and parameter sweeps.

mod checkpoint;
mod config;
mod run;

pub use checkpoint::{
    load_checkpoint, quantize, save_checkpoint, try_load_matching, Checkpoint, CHECKPOINT_VERSION,
};
pub use config::{DatasetSource, PipelineConfig, Variant, LR_GRID};
pub use run::{
    cmd_gen, cmd_pipeline, cmd_sweep, resolve_dataset, run_stage, PhaseTimings, PipelineOutcome,
    Stage, SweepParam,
};
