use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::baselines::Strategy;
use crate::continual::StageDiagnostics;
use crate::error::{Error, Result};

/// Accuracy and embedding metrics after one stage of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub strategy: Strategy,
    pub seed: u64,
    pub stage: usize,
    /// Accuracy on the first task's test set.
    pub acc_first: f64,
    /// Mean of `per_task_acc`.
    pub acc_avg: f64,
    pub per_task_acc: Vec<f64>,
    /// `None` when the model has no entity channel.
    pub aggregation_degree: Option<f64>,
    /// Seconds spent training and evaluating the stage.
    pub wall_time: f64,
}

impl StageReport {
    pub fn new(
        strategy: Strategy,
        seed: u64,
        per_task_acc: Vec<f64>,
        aggregation_degree: Option<f64>,
        wall_time: f64,
    ) -> Result<Self> {
        if per_task_acc.is_empty() {
            return Err(Error::EmptyInput("per-task accuracies"));
        }
        if per_task_acc.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Validation(format!("accuracy outside [0, 1]: {per_task_acc:?}")));
        }
        let acc_avg = per_task_acc.iter().sum::<f64>() / per_task_acc.len() as f64;
        Ok(Self {
            strategy,
            seed,
            stage: per_task_acc.len(),
            acc_first: per_task_acc[0],
            acc_avg,
            per_task_acc,
            aggregation_degree,
            wall_time,
        })
    }
}

pub const REPORT_HEADER: [&str; 7] = [
    "strategy",
    "seed",
    "stage",
    "acc_first",
    "acc_avg",
    "per_task_acc",
    "aggregation_degree",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("not a number: `{s}`"),
    })
}

fn parse_opt(s: &str, line: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s, line).map(Some)
    }
}

/// Writes the deterministic report table; wall time goes to the timing table.
pub fn write_reports<W: Write>(reports: &[StageReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        let per_task: Vec<String> = r.per_task_acc.iter().map(f64::to_string).collect();
        w.write_record([
            r.strategy.to_string(),
            r.seed.to_string(),
            r.stage.to_string(),
            r.acc_first.to_string(),
            r.acc_avg.to_string(),
            per_task.join("|"),
            opt(r.aggregation_degree),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_reports`]; `wall_time` is left at 0.
pub fn read_reports<R: Read>(input: R) -> Result<Vec<StageReport>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != REPORT_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected report header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let per_task = field(5)
            .split('|')
            .map(|s| parse_f64(s, line))
            .collect::<Result<Vec<f64>>>()?;
        let stage: usize = field(2).parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad stage `{}`", field(2)),
        })?;
        if stage != per_task.len() {
            return Err(Error::Parse {
                line,
                msg: format!("stage {stage} with {} per-task accuracies", per_task.len()),
            });
        }
        out.push(StageReport {
            strategy: Strategy::parse(field(0))?,
            seed: field(1).parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad seed `{}`", field(1)),
            })?,
            stage,
            acc_first: parse_f64(field(3), line)?,
            acc_avg: parse_f64(field(4), line)?,
            per_task_acc: per_task,
            aggregation_degree: parse_opt(field(6), line)?,
            wall_time: 0.0,
        });
    }
    Ok(out)
}

pub fn write_timings<W: Write>(reports: &[StageReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "seed", "stage", "wall_time"])?;
    for r in reports {
        w.write_record([r.strategy.to_string(), r.seed.to_string(), r.stage.to_string(), r.wall_time.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Learner diagnostics of one stage of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub diagnostics: StageDiagnostics,
}

pub fn write_diagnostics<W: Write>(rows: &[DiagnosticRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "seed", "stage", "steps", "memory_size", "omega_before", "omega_after"])?;
    for r in rows {
        let d = &r.diagnostics;
        w.write_record([
            r.strategy.to_string(),
            r.seed.to_string(),
            d.stage.to_string(),
            d.steps.to_string(),
            d.memory_size.to_string(),
            opt(d.omega_probe.map(|p| p.0)),
            opt(d.omega_probe.map(|p| p.1)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation; std is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Cross-seed statistics for one strategy at one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub stage: usize,
    pub seeds: usize,
    pub acc_first_mean: f64,
    pub acc_first_std: f64,
    pub acc_avg_mean: f64,
    pub acc_avg_std: f64,
    pub aggregation_degree_mean: Option<f64>,
    pub aggregation_degree_std: Option<f64>,
}

pub fn summarize(reports: &[StageReport]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Strategy, usize), Vec<&StageReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.strategy, r.stage)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((strategy, stage), rs)| {
            let first: Vec<f64> = rs.iter().map(|r| r.acc_first).collect();
            let avg: Vec<f64> = rs.iter().map(|r| r.acc_avg).collect();
            let agg: Option<Vec<f64>> = rs.iter().map(|r| r.aggregation_degree).collect();
            let (fm, fs) = mean_std(&first);
            let (am, asd) = mean_std(&avg);
            let agg_stats = agg.map(|a| mean_std(&a));
            SummaryRow {
                strategy,
                stage,
                seeds: rs.len(),
                acc_first_mean: fm,
                acc_first_std: fs,
                acc_avg_mean: am,
                acc_avg_std: asd,
                aggregation_degree_mean: agg_stats.map(|s| s.0),
                aggregation_degree_std: agg_stats.map(|s| s.1),
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "strategy",
            "stage",
            "seeds",
            "acc_first_mean",
            "acc_first_std",
            "acc_avg_mean",
            "acc_avg_std",
            "aggregation_degree_mean",
            "aggregation_degree_std",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
