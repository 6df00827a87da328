//! Episodic memory, embedding consolidation and the two-phase stage loop.

mod config;
mod log;
mod memory;
mod steps;
mod trainer;

pub use config::{E2mcConfig, Phase2Schedule};
pub use log::{TrainingLog, TRAINING_LOG_HEADER};
pub use memory::EpisodicMemory;
pub use steps::{
    apply_phase1, clip_global_norm, consolidation_loss, freeze_alignment, freeze_all_but_alignment, grad_norm,
    phase1_gradient, phase1_step, phase2_gradient, phase2_step,
};
pub use trainer::{
    begin_stage, shuffled_batches, ContinualLearner, E2mcLearner, Phase, StageDiagnostics, StepRecord, TrainObserver,
};

#[cfg(test)]
mod tests;
