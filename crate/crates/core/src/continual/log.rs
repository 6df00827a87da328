use std::io::Write;

use super::{StepRecord, TrainObserver};
use crate::error::Result;
use crate::model::DualEncoderModel;

pub const TRAINING_LOG_HEADER: [&str; 7] = ["stage", "epoch", "step", "phase", "loss", "omega_c", "omega_s"];

/// Append-only CSV of every optimisation step.
pub struct TrainingLog<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> TrainingLog<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(TRAINING_LOG_HEADER)?;
        Ok(Self { writer })
    }

    pub fn record(&mut self, r: &StepRecord) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        self.writer.write_record([
            r.stage.to_string(),
            r.epoch.to_string(),
            r.step.to_string(),
            r.phase.as_str().to_string(),
            r.loss.to_string(),
            opt(r.omega_c),
            opt(r.omega_s),
        ])?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.writer
            .into_inner()
            .map_err(|e| crate::Error::Io(e.into_error()))
    }
}

impl<W: Write> TrainObserver for TrainingLog<W> {
    fn after_step(&mut self, _model: &DualEncoderModel, record: &StepRecord) -> Result<()> {
        self.record(record)
    }
}
