//! Comparison strategies sharing the dual-channel model: plain fine-tuning,
//! multi-task retraining, EWC and A-GEM, plus the E²MC ablations.

mod agem;
mod ewc;
mod finetune;
mod multitask;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use agem::{agem_project, flatten, unflatten, AgemLearner};
pub use ewc::{estimate_fisher, ewc_gradient, ewc_penalty, EwcLearner, EwcState};
pub use finetune::FinetuneLearner;
pub use multitask::MultitaskLearner;

use crate::continual::{apply_phase1, shuffled_batches, ContinualLearner, E2mcConfig, E2mcLearner, Phase, StepRecord, TrainObserver};
use crate::error::{Error, Result};
use crate::model::{DualEncoderModel, EntityFusion, ModelConfig};
use crate::numeric::{GradBuffer, Parallelism, RngStream};
use crate::stream::Note;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    Finetune,
    Multitask,
    Ewc,
    Agem,
    E2mc,
    E2mcNoEntity,
    E2mcNoAttention,
    /// E²MC with phase 2 disabled; alignment stays at identity.
    E2mcNoAlign,
}

/// Names accepted by [`Strategy::parse`].
pub const STRATEGY_NAMES: [&str; 8] = [
    "finetune",
    "multitask",
    "ewc",
    "agem",
    "e2mc",
    "e2mc-no-entity",
    "e2mc-no-attention",
    "e2mc-no-align",
];

/// Names reserved for strategies that are not provided.
pub const RESERVED_NAMES: [&str; 2] = ["gem", "mbpa++"];

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Finetune,
        Strategy::Multitask,
        Strategy::Ewc,
        Strategy::Agem,
        Strategy::E2mc,
        Strategy::E2mcNoEntity,
        Strategy::E2mcNoAttention,
        Strategy::E2mcNoAlign,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        let key = name.trim().to_ascii_lowercase();
        if let Some(i) = STRATEGY_NAMES.iter().position(|n| *n == key) {
            return Ok(Self::ALL[i]);
        }
        if RESERVED_NAMES.contains(&key.as_str()) {
            return Err(Error::Unimplemented(key));
        }
        Err(Error::UnknownStrategy {
            name: name.to_string(),
            valid: STRATEGY_NAMES.join(", "),
        })
    }

    pub fn name(self) -> &'static str {
        STRATEGY_NAMES[Self::ALL.iter().position(|s| *s == self).expect("listed")]
    }

    /// The model layout this strategy trains.
    pub fn model_config(self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        match self {
            Strategy::E2mcNoEntity => cfg.use_entities = false,
            Strategy::E2mcNoAttention => cfg.fusion = EntityFusion::Uniform,
            _ => {}
        }
        cfg
    }

    /// Whether the strategy keeps an episodic memory.
    pub fn uses_memory(self) -> bool {
        matches!(
            self,
            Strategy::Agem | Strategy::E2mc | Strategy::E2mcNoEntity | Strategy::E2mcNoAttention | Strategy::E2mcNoAlign
        )
    }

    pub fn learner(
        self,
        config: &E2mcConfig,
        baseline: &BaselineConfig,
        par: Parallelism,
    ) -> Result<Box<dyn ContinualLearner + Send>> {
        config.validate()?;
        baseline.validate()?;
        Ok(match self {
            Strategy::Finetune => Box::new(FinetuneLearner::new(config.clone(), par)),
            Strategy::Multitask => Box::new(MultitaskLearner::new(config.clone(), par)),
            Strategy::Ewc => Box::new(EwcLearner::new(config.clone(), baseline.clone(), par)),
            Strategy::Agem => Box::new(AgemLearner::new(config.clone(), par)),
            Strategy::E2mc | Strategy::E2mcNoEntity | Strategy::E2mcNoAttention => {
                Box::new(E2mcLearner::new(config.clone(), par)?)
            }
            Strategy::E2mcNoAlign => {
                let mut l = E2mcLearner::new(config.clone(), par)?;
                l.consolidate = false;
                Box::new(l)
            }
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::parse(s)
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Strategy::parse(&s)
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.name().to_string()
    }
}

/// Settings used only by the baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub ewc_lambda: f64,
    /// Notes per task used to estimate the Fisher diagonal.
    pub fisher_samples: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            ewc_lambda: 100.0,
            fisher_samples: 1024,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ewc_lambda >= 0.0 && self.ewc_lambda.is_finite()) {
            return Err(Error::Config(format!("ewc_lambda must be non-negative, got {}", self.ewc_lambda)));
        }
        if self.fisher_samples == 0 {
            return Err(Error::Config("fisher_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Runs `epochs_per_task` shuffled passes over `train`, one update per batch.
/// `grad` supplies the loss and gradient for each batch; the update itself
/// is the shared alignment-frozen SGD step.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_epochs<F>(
    model: &mut DualEncoderModel,
    train: &[&Note],
    k: usize,
    config: &E2mcConfig,
    rng: &RngStream,
    observer: &mut dyn TrainObserver,
    mut grad: F,
) -> Result<usize>
where
    F: FnMut(&DualEncoderModel, &[&Note], [u64; 3]) -> Result<(f64, GradBuffer)>,
{
    let mut steps = 0;
    for epoch in 1..=config.epochs_per_task {
        let batches = shuffled_batches(
            train.len(),
            config.batch_train,
            &mut rng.derive("shuffle", &[k as u64, epoch as u64]),
        );
        for (b, idx) in batches.iter().enumerate() {
            let step = b + 1;
            let batch: Vec<&Note> = idx.iter().map(|&i| train[i]).collect();
            observer.before_step(model, Phase::One);
            let (loss, g) = grad(model, &batch, [k as u64, epoch as u64, step as u64])?;
            apply_phase1(model, &g, config.lr_phase1, config.clip_norm)?;
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
        }
    }
    Ok(steps)
}
