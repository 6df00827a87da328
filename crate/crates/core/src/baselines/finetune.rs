use super::run_epochs;
use crate::continual::{begin_stage, phase1_gradient, ContinualLearner, E2mcConfig, StageDiagnostics, TrainObserver};
use crate::error::Result;
use crate::model::DualEncoderModel;
use crate::numeric::{Parallelism, RngStream};
use crate::stream::{Note, TaskStream};

/// Cross-entropy on the current task only; no memory and no regulariser.
#[derive(Clone, Debug)]
pub struct FinetuneLearner {
    config: E2mcConfig,
    rng: RngStream,
    par: Parallelism,
}

impl FinetuneLearner {
    pub fn new(config: E2mcConfig, par: Parallelism) -> Self {
        Self {
            rng: RngStream::new(config.seed).derive("train", &[]),
            config,
            par,
        }
    }
}

impl ContinualLearner for FinetuneLearner {
    fn train_stage(
        &mut self,
        model: &mut DualEncoderModel,
        stream: &TaskStream,
        k: usize,
        observer: &mut dyn TrainObserver,
    ) -> Result<StageDiagnostics> {
        begin_stage(model, stream, k, &self.rng)?;
        let train: Vec<&Note> = stream.task(k).train.iter().collect();
        let par = self.par;
        let steps = run_epochs(model, &train, k, &self.config, &self.rng, observer, |m, b, _| {
            phase1_gradient(m, b, par)
        })?;
        Ok(StageDiagnostics {
            stage: k,
            steps,
            ..StageDiagnostics::default()
        })
    }
}
