use super::steps::{phase1_step, phase2_gradient, phase2_step};
use super::{E2mcConfig, EpisodicMemory, Phase2Schedule};
use crate::error::{Error, Result};
use crate::model::{DualEncoderModel, EncoderSnapshot};
use crate::numeric::{Parallelism, RngStream};
use crate::stream::{Note, Task, TaskStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Cross-entropy step with alignment frozen.
    One,
    /// Alignment-only consolidation step.
    Two,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::One => "1",
            Phase::Two => "2",
        }
    }
}

/// One optimisation step as seen by observers and the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub stage: usize,
    pub epoch: usize,
    pub step: usize,
    pub phase: Phase,
    /// Cross-entropy for phase 1, `α Ω_c + β Ω_s` for phase 2.
    pub loss: f64,
    pub omega_c: Option<f64>,
    pub omega_s: Option<f64>,
}

/// Hook invoked around every optimisation step.
pub trait TrainObserver {
    fn before_step(&mut self, _model: &DualEncoderModel, _phase: Phase) {}

    fn after_step(&mut self, _model: &DualEncoderModel, _record: &StepRecord) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Per-stage facts a learner reports besides accuracy.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageDiagnostics {
    pub stage: usize,
    pub steps: usize,
    /// `|M|` after the stage's memory write.
    pub memory_size: usize,
    /// Mean `α Ω_c + β Ω_s` over a frozen replay batch before and after a
    /// few extra phase-2 steps on a copy of the model.
    pub omega_probe: Option<(f64, f64)>,
}

/// A strategy that can be advanced one stage of a task stream at a time.
pub trait ContinualLearner {
    /// Trains on stage `k` (1-based). Stages must be visited in order.
    fn train_stage(
        &mut self,
        model: &mut DualEncoderModel,
        stream: &TaskStream,
        k: usize,
        observer: &mut dyn TrainObserver,
    ) -> Result<StageDiagnostics>;
}

/// Index batches over `n` items in a fresh random order.
pub fn shuffled_batches(n: usize, batch: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Checks stage order and grows the classifier for the new task's labels.
pub fn begin_stage(model: &mut DualEncoderModel, stream: &TaskStream, k: usize, rng: &RngStream) -> Result<()> {
    if k == 0 || k > stream.num_tasks() {
        return Err(Error::Stage(format!("stage {k} outside 1..={}", stream.num_tasks())));
    }
    let seen = stream.accumulated_labels(k - 1);
    if model.num_classes() != seen {
        return Err(Error::Stage(format!(
            "stage {k} expects {seen} classes before expansion, model has {}",
            model.num_classes()
        )));
    }
    let task = stream.task(k);
    if let Some(&bad) = task.labels.iter().find(|&&l| l < seen) {
        return Err(Error::Validation(format!("task {k} reuses label {bad} from an earlier task")));
    }
    model.expand_classifier(task.labels.len(), &mut rng.derive("expand", &[k as u64]))
}

fn pick<'a>(train: &'a [Note], idx: &[usize]) -> Vec<&'a Note> {
    idx.iter().map(|&i| &train[i]).collect()
}

/// The two-phase learner with episodic replay and embedding consolidation.
#[derive(Clone, Debug)]
pub struct E2mcLearner {
    config: E2mcConfig,
    memory: EpisodicMemory,
    snapshot: Option<EncoderSnapshot>,
    rng: RngStream,
    par: Parallelism,
    /// `false` skips every phase-2 step (alignment stays at its initial value).
    pub consolidate: bool,
    /// Phase-2 steps taken by the end-of-stage Ω probe; 0 disables it.
    pub probe_steps: usize,
}

impl E2mcLearner {
    pub fn new(config: E2mcConfig, par: Parallelism) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            memory: EpisodicMemory::new(config.budget),
            rng: RngStream::new(config.seed).derive("train", &[]),
            config,
            snapshot: None,
            par,
            consolidate: true,
            probe_steps: 10,
        })
    }

    pub fn config(&self) -> &E2mcConfig {
        &self.config
    }

    pub fn memory(&self) -> &EpisodicMemory {
        &self.memory
    }

    pub fn snapshot(&self) -> Option<&EncoderSnapshot> {
        self.snapshot.as_ref()
    }

    fn phase2(
        &self,
        model: &mut DualEncoderModel,
        batch: &[&Note],
        ids: [usize; 3],
        observer: &mut dyn TrainObserver,
    ) -> Result<()> {
        let snap = self.snapshot.as_ref().expect("phase 2 runs only from stage 2");
        let c = &self.config;
        let mut order = batch.to_vec();
        self.rng.derive("phase2", &ids.map(|v| v as u64)).shuffle(&mut order);
        order.truncate(c.batch_phase2);
        observer.before_step(model, Phase::Two);
        let (oc, os) = phase2_step(model, &order, snap, c.alpha, c.beta, c.lr_align_c, c.lr_align_s, self.par)?;
        observer.after_step(
            model,
            &StepRecord {
                stage: ids[0],
                epoch: ids[1],
                step: ids[2],
                phase: Phase::Two,
                loss: c.alpha * oc + c.beta * os,
                omega_c: Some(oc),
                omega_s: Some(os),
            },
        )
    }

    /// Mean weighted Ω on a frozen replay batch before and after
    /// `probe_steps` phase-2 steps on a copy of `model`.
    fn omega_probe(&self, model: &DualEncoderModel, k: usize) -> Result<Option<(f64, f64)>> {
        let Some(snap) = self.snapshot.as_ref() else {
            return Ok(None);
        };
        if self.probe_steps == 0 || !self.consolidate || self.memory.is_empty() {
            return Ok(None);
        }
        let c = &self.config;
        let batch = self
            .memory
            .sample_replay_batch(c.batch_phase2, &mut self.rng.derive("probe", &[k as u64]));
        let mut probe = model.clone();
        let mut first = None;
        for _ in 0..self.probe_steps {
            let (oc, os) = phase2_step(&mut probe, &batch, snap, c.alpha, c.beta, c.lr_align_c, c.lr_align_s, self.par)?;
            first.get_or_insert(c.alpha * oc + c.beta * os);
        }
        let (oc, os, _, _) = phase2_gradient(&probe, &batch, snap, c.alpha, c.beta, self.par)?;
        Ok(first.map(|before| (before, c.alpha * oc + c.beta * os)))
    }
}

impl ContinualLearner for E2mcLearner {
    fn train_stage(
        &mut self,
        model: &mut DualEncoderModel,
        stream: &TaskStream,
        k: usize,
        observer: &mut dyn TrainObserver,
    ) -> Result<StageDiagnostics> {
        begin_stage(model, stream, k, &self.rng)?;
        let task: &Task = stream.task(k);
        let c = self.config.clone();
        let phase2_on = self.consolidate && self.snapshot.is_some();
        let mut steps = 0;
        for epoch in 1..=c.epochs_per_task {
            let batches = shuffled_batches(task.train.len(), c.batch_train, &mut self.rng.derive("shuffle", &[k as u64, epoch as u64]));
            for (b, idx) in batches.iter().enumerate() {
                let step = b + 1;
                let ids = [k as u64, epoch as u64, step as u64];
                let mut batch = pick(&task.train, idx);
                let replay = self
                    .memory
                    .sample_replay_batch(c.replay_batch, &mut self.rng.derive("replay", &ids));
                batch.extend(replay);
                observer.before_step(model, Phase::One);
                let loss = phase1_step(model, &batch, c.lr_phase1, c.clip_norm, self.par)?;
                steps += 1;
                observer.after_step(
                    model,
                    &StepRecord {
                        stage: k,
                        epoch,
                        step,
                        phase: Phase::One,
                        loss,
                        omega_c: None,
                        omega_s: None,
                    },
                )?;
                if phase2_on && c.schedule == Phase2Schedule::Interleaved {
                    self.phase2(model, &batch, [k, epoch, step], observer)?;
                    steps += 1;
                }
            }
        }
        if phase2_on && c.schedule == Phase2Schedule::EndOfTask {
            let epoch = c.epochs_per_task + 1;
            let batches = shuffled_batches(task.train.len(), c.batch_train, &mut self.rng.derive("shuffle", &[k as u64, epoch as u64]));
            for (b, idx) in batches.iter().enumerate() {
                let step = b + 1;
                let mut batch = pick(&task.train, idx);
                let ids = [k as u64, epoch as u64, step as u64];
                batch.extend(self.memory.sample_replay_batch(c.replay_batch, &mut self.rng.derive("replay", &ids)));
                self.phase2(model, &batch, [k, epoch, step], observer)?;
                steps += 1;
            }
        }
        let omega_probe = if phase2_on { self.omega_probe(model, k)? } else { None };
        self.memory
            .write_memory(k, &task.train, &mut self.rng.derive("memory", &[k as u64]))?;
        self.snapshot = Some(model.snapshot());
        Ok(StageDiagnostics {
            stage: k,
            steps,
            memory_size: self.memory.total(),
            omega_probe,
        })
    }
}
