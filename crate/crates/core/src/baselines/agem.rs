use super::run_epochs;
use crate::continual::{
    begin_stage, phase1_gradient, ContinualLearner, E2mcConfig, EpisodicMemory, StageDiagnostics, TrainObserver,
};
use crate::error::Result;
use crate::model::DualEncoderModel;
use crate::numeric::{dot, GradBuffer, Parallelism, RngStream};
use crate::stream::{Note, TaskStream};

/// Projects `g` so it does not increase the loss on the reference batch:
/// `g − (g·r / r·r) r` when `g·r < 0`, otherwise `g`. A zero `r` leaves `g`
/// unchanged.
pub fn agem_project(g: &[f64], g_ref: &[f64]) -> Vec<f64> {
    assert_eq!(g.len(), g_ref.len(), "gradient lengths differ");
    let gr = dot(g, g_ref);
    let rr = dot(g_ref, g_ref);
    if gr >= 0.0 || rr == 0.0 {
        return g.to_vec();
    }
    let c = gr / rr;
    g.iter().zip(g_ref).map(|(a, b)| a - c * b).collect()
}

pub fn flatten(g: &GradBuffer) -> Vec<f64> {
    g.0.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Writes `flat` back into a buffer shaped like `like`.
pub fn unflatten(flat: &[f64], like: &GradBuffer) -> GradBuffer {
    let mut out = like.clone();
    let mut at = 0;
    for t in &mut out.0 {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
    }
    out
}

/// Gradient projection against a reference gradient from a random replay
/// batch at every step.
#[derive(Clone, Debug)]
pub struct AgemLearner {
    config: E2mcConfig,
    memory: EpisodicMemory,
    rng: RngStream,
    par: Parallelism,
}

impl AgemLearner {
    pub fn new(config: E2mcConfig, par: Parallelism) -> Self {
        Self {
            memory: EpisodicMemory::new(config.budget),
            rng: RngStream::new(config.seed).derive("train", &[]),
            config,
            par,
        }
    }

    pub fn memory(&self) -> &EpisodicMemory {
        &self.memory
    }
}

impl ContinualLearner for AgemLearner {
    fn train_stage(
        &mut self,
        model: &mut DualEncoderModel,
        stream: &TaskStream,
        k: usize,
        observer: &mut dyn TrainObserver,
    ) -> Result<StageDiagnostics> {
        begin_stage(model, stream, k, &self.rng)?;
        let task = stream.task(k);
        let train: Vec<&Note> = task.train.iter().collect();
        let (par, memory, rng, size) = (self.par, &self.memory, &self.rng, self.config.replay_batch);
        let steps = run_epochs(model, &train, k, &self.config, &self.rng, observer, |m, b, ids| {
            let (loss, g) = phase1_gradient(m, b, par)?;
            let replay = memory.sample_replay_batch(size, &mut rng.derive("replay", &ids));
            if replay.is_empty() {
                return Ok((loss, g));
            }
            let (_, g_ref) = phase1_gradient(m, &replay, par)?;
            let projected = agem_project(&flatten(&g), &flatten(&g_ref));
            Ok((loss, unflatten(&projected, &g)))
        })?;
        self.memory
            .write_memory(k, &task.train, &mut self.rng.derive("memory", &[k as u64]))?;
        Ok(StageDiagnostics {
            stage: k,
            steps,
            memory_size: self.memory.total(),
            omega_probe: None,
        })
    }
}
