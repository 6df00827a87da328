use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// When phase-2 (alignment) steps run within a stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase2Schedule {
    /// One phase-2 step right after every phase-1 step.
    #[default]
    Interleaved,
    /// One pass of phase-2 steps after the last epoch.
    EndOfTask,
}

impl std::str::FromStr for Phase2Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interleaved" => Ok(Self::Interleaved),
            "end-of-task" => Ok(Self::EndOfTask),
            _ => Err(Error::Config(format!(
                "unknown schedule `{s}`; expected interleaved or end-of-task"
            ))),
        }
    }
}

/// Optimisation settings shared by every strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E2mcConfig {
    /// Weight of the context consolidation term.
    pub alpha: f64,
    /// Weight of the sub-entity consolidation term.
    pub beta: f64,
    pub lr_phase1: f64,
    pub lr_align_c: f64,
    pub lr_align_s: f64,
    pub batch_train: usize,
    pub batch_phase2: usize,
    /// Notes stored per task.
    pub budget: usize,
    /// Upper bound on replay notes appended to each training batch.
    pub replay_batch: usize,
    pub epochs_per_task: usize,
    pub schedule: Phase2Schedule,
    /// Global L2 bound on each phase-1 gradient; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for E2mcConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            lr_phase1: 1e-3,
            lr_align_c: 1e-4,
            lr_align_s: 2e-5,
            batch_train: 50,
            batch_phase2: 32,
            budget: 128,
            replay_batch: 16,
            epochs_per_task: 3,
            schedule: Phase2Schedule::Interleaved,
            clip_norm: None,
            seed: 0,
        }
    }
}

impl E2mcConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_phase1", self.lr_phase1),
            ("lr_align_c", self.lr_align_c),
            ("lr_align_s", self.lr_align_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("batch_train", self.batch_train),
            ("batch_phase2", self.batch_phase2),
            ("epochs_per_task", self.epochs_per_task),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}
