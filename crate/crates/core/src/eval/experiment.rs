use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::{summarize, write_diagnostics, write_reports, write_summary, write_timings, DiagnosticRow, SummaryRow};
use super::{aggregation_degree, aggregation_sample, evaluate_task, export_embeddings, StageReport};
use crate::baselines::{BaselineConfig, Strategy};
use crate::continual::{E2mcConfig, StageDiagnostics, StepRecord, TrainObserver, TrainingLog};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, DualEncoderModel, ModelConfig};
use crate::numeric::{Parallelism, RngStream};
use crate::stream::{load_stream, synthesize_stream, GeneratorSpec, TaskStream};

/// Where the task stream of a run comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamSource {
    /// Generated per seed from the spec.
    Synthetic(GeneratorSpec),
    /// Loaded from a stream file; identical for every seed.
    File(PathBuf),
}

/// Which artefacts besides the report tables a run writes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputOptions {
    pub checkpoints: bool,
    pub embeddings: bool,
    pub training_log: bool,
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self {
            checkpoints: true,
            embeddings: true,
            training_log: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: StreamSource,
    pub strategy: Strategy,
    #[serde(default)]
    pub train: E2mcConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    pub seeds: Vec<u64>,
    /// Test notes of the first task sampled for the aggregation degree.
    #[serde(default = "default_aggregation_sample")]
    pub aggregation_sample: usize,
    #[serde(default)]
    pub outputs: OutputOptions,
}

fn default_aggregation_sample() -> usize {
    100
}

impl ExperimentConfig {
    pub fn new(source: StreamSource, strategy: Strategy, seeds: Vec<u64>) -> Self {
        Self {
            source,
            strategy,
            train: E2mcConfig::default(),
            model: ModelConfig::default(),
            baseline: BaselineConfig::default(),
            seeds,
            aggregation_sample: default_aggregation_sample(),
            outputs: OutputOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        self.train.validate()?;
        self.baseline.validate()
    }

    /// The stream a given seed trains on.
    pub fn build_stream(&self, seed: u64) -> Result<TaskStream> {
        let stream = match &self.source {
            StreamSource::Synthetic(spec) => synthesize_stream(spec, &mut RngStream::new(seed).derive("stream", &[]))?,
            StreamSource::File(path) => load_stream(path)?,
        };
        stream.validate()?;
        Ok(stream)
    }
}

/// Everything one seed produced, possibly cut short by `error`.
#[derive(Debug, Default)]
pub struct SeedRun {
    pub reports: Vec<StageReport>,
    pub diagnostics: Vec<DiagnosticRow>,
    pub error: Option<Error>,
}

#[derive(Debug, Default)]
pub struct ExperimentResult {
    pub reports: Vec<StageReport>,
    pub diagnostics: Vec<DiagnosticRow>,
    pub summary: Vec<SummaryRow>,
}

struct Tee<'a, 'b> {
    a: Option<&'a mut dyn TrainObserver>,
    b: Option<&'b mut dyn TrainObserver>,
}

impl TrainObserver for Tee<'_, '_> {
    fn before_step(&mut self, model: &DualEncoderModel, phase: crate::continual::Phase) {
        if let Some(a) = self.a.as_mut() {
            a.before_step(model, phase);
        }
        if let Some(b) = self.b.as_mut() {
            b.before_step(model, phase);
        }
    }

    fn after_step(&mut self, model: &DualEncoderModel, record: &StepRecord) -> Result<()> {
        if let Some(a) = self.a.as_mut() {
            a.after_step(model, record)?;
        }
        if let Some(b) = self.b.as_mut() {
            b.after_step(model, record)?;
        }
        Ok(())
    }
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Runs every stage of one seed, collecting reports as stages finish.
/// `observer` sees every optimisation step.
pub fn run_seed(
    config: &ExperimentConfig,
    seed: u64,
    out: Option<&Path>,
    par: Parallelism,
    observer: Option<&mut dyn TrainObserver>,
) -> SeedRun {
    let mut run = SeedRun::default();
    if let Err(e) = run_seed_into(config, seed, out, par, observer, &mut run) {
        run.error = Some(e);
    }
    run
}

fn run_seed_into(
    config: &ExperimentConfig,
    seed: u64,
    out: Option<&Path>,
    par: Parallelism,
    observer: Option<&mut dyn TrainObserver>,
    run: &mut SeedRun,
) -> Result<()> {
    let root = RngStream::new(seed);
    let stream = config.build_stream(seed)?;
    let strategy = config.strategy;
    let model_cfg = strategy.model_config(&config.model);
    let mut model = DualEncoderModel::new(
        model_cfg,
        stream.char_vocab.len(),
        stream.lexicon.len(),
        &mut root.derive("init", &[]),
    )?;
    let train_cfg = E2mcConfig {
        seed,
        ..config.train.clone()
    };
    let mut learner = strategy.learner(&train_cfg, &config.baseline, par)?;
    let sample = aggregation_sample(
        &stream.task(1).test,
        config.aggregation_sample,
        &mut root.derive("aggregation", &[]),
    );

    let dir = out.map(|o| seed_dir(o, seed));
    if let Some(d) = &dir {
        fs::create_dir_all(d)?;
    }
    let mut log = match (&dir, config.outputs.training_log) {
        (Some(d), true) => Some(TrainingLog::new(std::io::BufWriter::new(fs::File::create(
            d.join("training_log.csv"),
        )?))?),
        _ => None,
    };
    let mut tee = Tee {
        a: observer,
        b: log.as_mut().map(|l| l as &mut dyn TrainObserver),
    };

    for k in 1..=stream.num_tasks() {
        let start = Instant::now();
        let diagnostics: StageDiagnostics = learner.train_stage(&mut model, &stream, k, &mut tee)?;
        let per_task = par
            .map(&stream.tasks[..k], |t| evaluate_task(&model, &t.test, Parallelism::Sequential))
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
        let agg = if model.has_entity_channel() && !sample.is_empty() {
            Some(aggregation_degree(&model, &sample)?)
        } else {
            None
        };
        let wall = start.elapsed().as_secs_f64();
        run.reports.push(StageReport::new(strategy, seed, per_task, agg, wall)?);
        run.diagnostics.push(DiagnosticRow {
            strategy,
            seed,
            diagnostics,
        });
        if let Some(d) = &dir {
            if config.outputs.checkpoints {
                let cdir = d.join("checkpoints");
                fs::create_dir_all(&cdir)?;
                save_checkpoint(&model, cdir.join(format!("stage-{k:02}.ckpt")))?;
            }
            if config.outputs.embeddings && model.has_entity_channel() && !sample.is_empty() {
                let edir = d.join("embeddings");
                fs::create_dir_all(&edir)?;
                export_embeddings(&model, &sample, &stream.lexicon, k, edir.join(format!("stage-{k:02}.csv")))?;
            }
        }
    }
    if let Some(l) = log {
        use std::io::Write;
        l.into_inner()?.flush()?;
    }
    Ok(())
}

/// Writes the report, timing, diagnostic and summary tables under `out`.
pub fn write_tables(out: &Path, reports: &[StageReport], diagnostics: &[DiagnosticRow]) -> Result<Vec<SummaryRow>> {
    fs::create_dir_all(out)?;
    let create = |name: &str| -> Result<std::io::BufWriter<fs::File>> {
        Ok(std::io::BufWriter::new(fs::File::create(out.join(name))?))
    };
    write_reports(reports, create("reports.csv")?)?;
    write_timings(reports, create("timings.csv")?)?;
    write_diagnostics(diagnostics, create("diagnostics.csv")?)?;
    let summary = summarize(reports);
    write_summary(&summary, create("summary.csv")?)?;
    Ok(summary)
}

/// Runs every seed and, when `out` is given, writes all tables there. Rows of
/// completed stages are written even when a seed fails; the first error is
/// then returned.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>, par: Parallelism) -> Result<ExperimentResult> {
    config.validate()?;
    let runs: Vec<SeedRun> = par.map(&config.seeds, |&seed| run_seed(config, seed, out, par, None));
    let mut result = ExperimentResult::default();
    let mut first_error = None;
    for r in runs {
        result.reports.extend(r.reports);
        result.diagnostics.extend(r.diagnostics);
        if first_error.is_none() {
            first_error = r.error;
        }
    }
    result.summary = match out {
        Some(o) => write_tables(o, &result.reports, &result.diagnostics)?,
        None => summarize(&result.reports),
    };
    match first_error {
        Some(e) => Err(e),
        None => Ok(result),
    }
}
