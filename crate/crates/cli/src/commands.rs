use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::{Args, Parser, Subcommand, ValueEnum};
use e2mc_core::baselines::Strategy;
use e2mc_core::eval::{read_reports, read_summary, run_experiment, seed_dir, summarize, write_summary, ExperimentConfig, StreamSource, SummaryRow};
use e2mc_core::model::model_probes;
use e2mc_core::numeric::{check_all, layer_probes, Differentiable, FaultInjected, Parallelism, Probe, RngStream};
use e2mc_core::stream::{save_stream, synthesize_stream, GeneratorSpec};
use e2mc_core::{Error, Result};
use serde_json::Value;

use crate::config::{default_config, finish, merge, parse_assignment, read_layer, set_dotted};
use crate::manifest::{now, RunManifest};

/// Lifelong text classification experiments with embedding consolidation.
#[derive(Debug, Parser)]
#[command(name = "e2mc", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic task stream file.
    Synth(SynthArgs),
    /// Train a strategy over a task stream and write reports.
    Train(TrainArgs),
    /// Merge run summaries into one per-stage table.
    Compare(CompareArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator spec (TOML or JSON); defaults apply to missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output stream file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Spec overrides as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file (TOML with dotted keys, JSON, or a previous run manifest).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Train on this stream file instead of a synthetic stream.
    #[arg(long, conflicts_with = "spec")]
    pub stream: Option<PathBuf>,
    /// Synthetic generator spec for the stream.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// finetune, multitask, ewc, agem, e2mc, e2mc-no-entity,
    /// e2mc-no-attention or e2mc-no-align.
    #[arg(long)]
    pub strategy: Option<String>,
    /// One or more seeds (repeat or comma-separate).
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    /// Weight of context consolidation.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of sub-entity consolidation.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Notes stored per task.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Epochs per task.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Run directory; defaults to `$E2MC_OUT/<strategy>` or `runs/<strategy>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Processes to spread seeds over.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Disable thread-level parallelism.
    #[arg(long)]
    pub sequential: bool,
    /// Config overrides as dotted `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Skip the summary printout.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directories holding a summary.csv.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    Layer,
    Model,
    All,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Individual layers, the assembled model, or both.
    #[arg(long, value_enum, default_value_t = Scope::All)]
    pub scope: Scope,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Corrupt every analytic gradient (self-test of the checker).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// Outcome of a command that ran to completion.
#[derive(Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Completed but found failures (gradient check).
    Failed,
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<Outcome> {
    match cli.command {
        Command::Synth(a) => synth(a, stdout),
        Command::Train(a) => train(a, stdout),
        Command::Compare(a) => compare(a, stdout),
        Command::Gradcheck(a) => gradcheck(a, stdout),
    }
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<Outcome> {
    let mut value = serde_json::to_value(GeneratorSpec::default())?;
    if let Some(p) = &a.spec {
        merge(&mut value, read_layer(p)?);
    }
    for s in &a.set {
        let (k, v) = parse_assignment(s)?;
        set_dotted(&mut value, &k, v)?;
    }
    let spec: GeneratorSpec =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid generator spec: {e}")))?;
    let stream = synthesize_stream(&spec, &mut RngStream::new(a.seed).derive("stream", &[]))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_stream(&stream, &a.out)?;
    writeln!(
        out,
        "wrote {} tasks, {} labels to {}",
        stream.num_tasks(),
        stream.label_names.len(),
        a.out.display()
    )?;
    Ok(Outcome::Success)
}

/// Resolves the layered configuration for `train`.
pub fn resolve_train_config(a: &TrainArgs) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(default_config())?;
    if let Some(p) = &a.config {
        merge(&mut value, read_layer(p)?);
    }
    if let Some(p) = &a.stream {
        set_dotted(&mut value, "source", serde_json::to_value(StreamSource::File(p.clone()))?)?;
    }
    if let Some(p) = &a.spec {
        let mut spec = serde_json::to_value(GeneratorSpec::default())?;
        merge(&mut spec, read_layer(p)?);
        let mut src = serde_json::Map::new();
        src.insert("synthetic".into(), spec);
        set_dotted(&mut value, "source", Value::Object(src))?;
    }
    for s in &a.set {
        let (k, v) = parse_assignment(s)?;
        set_dotted(&mut value, &k, v)?;
    }
    if let Some(s) = &a.strategy {
        set_dotted(&mut value, "strategy", Value::String(Strategy::parse(s)?.name().into()))?;
    }
    if !a.seed.is_empty() {
        set_dotted(&mut value, "seeds", serde_json::to_value(&a.seed)?)?;
    }
    let flags = [
        ("train.alpha", a.alpha.map(Value::from)),
        ("train.beta", a.beta.map(Value::from)),
        ("train.budget", a.budget.map(Value::from)),
        ("train.epochs_per_task", a.epochs.map(Value::from)),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            set_dotted(&mut value, k, v)?;
        }
    }
    finish(value)
}

fn default_out(strategy: Strategy) -> PathBuf {
    let root = std::env::var_os("E2MC_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(strategy.name())
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<Outcome> {
    let cfg = resolve_train_config(&a)?;
    let dir = a.out.clone().unwrap_or_else(|| default_out(cfg.strategy));
    fs::create_dir_all(&dir)?;
    let inputs: Vec<PathBuf> = a.config.iter().chain(&a.spec).cloned().collect();
    let mut manifest = RunManifest::new(&cfg, &inputs)?;
    manifest.write(&dir.join("manifest.json"))?;
    let par = if a.sequential { Parallelism::Sequential } else { Parallelism::Rayon };

    let summary = if a.jobs > 1 && cfg.seeds.len() > 1 {
        fan_out(&cfg, &dir, a.jobs, a.sequential)?
    } else {
        run_experiment(&cfg, Some(&dir), par)?.summary
    };

    manifest.finished_at = Some(now());
    manifest.write(&dir.join("manifest.json"))?;
    if !a.quiet {
        writeln!(out, "{} over seeds {:?} -> {}", cfg.strategy, cfg.seeds, dir.display())?;
        writeln!(out, "stage,acc_first_mean,acc_first_std,acc_avg_mean,acc_avg_std")?;
        for r in &summary {
            writeln!(
                out,
                "{},{:.4},{:.4},{:.4},{:.4}",
                r.stage, r.acc_first_mean, r.acc_first_std, r.acc_avg_mean, r.acc_avg_std
            )?;
        }
    }
    Ok(Outcome::Success)
}

/// Runs each seed in its own child process under `<dir>/jobs/<s>`, then moves
/// the per-seed output into `dir` and merges the tables.
fn fan_out(cfg: &ExperimentConfig, dir: &Path, jobs: usize, sequential: bool) -> Result<Vec<SummaryRow>> {
    let resolved = dir.join("config.json");
    fs::write(&resolved, serde_json::to_string_pretty(cfg)?)?;
    let exe = std::env::current_exe()?;
    let jobs_dir = dir.join("jobs");
    let child_dir = |s: u64| jobs_dir.join(s.to_string());
    for wave in cfg.seeds.chunks(jobs) {
        let mut children = Vec::new();
        for &s in wave {
            let mut cmd = Process::new(&exe);
            cmd.arg("train")
                .arg("--config")
                .arg(&resolved)
                .arg("--seed")
                .arg(s.to_string())
                .arg("--out")
                .arg(child_dir(s))
                .arg("--quiet");
            if sequential {
                cmd.arg("--sequential");
            }
            children.push((s, cmd.spawn()?));
        }
        for (s, mut c) in children {
            let status = c.wait()?;
            match status.code() {
                Some(0) => {}
                Some(1) => return Err(Error::Config(format!("seed {s} failed with a configuration error"))),
                _ => return Err(Error::Stage(format!("seed {s} process failed ({status})"))),
            }
        }
    }
    for name in ["reports.csv", "timings.csv", "diagnostics.csv"] {
        let mut merged = String::new();
        for (i, &s) in cfg.seeds.iter().enumerate() {
            let text = fs::read_to_string(child_dir(s).join(name))?;
            let mut lines = text.split_inclusive('\n');
            let header = lines.next().unwrap_or_default();
            if i == 0 {
                merged.push_str(header);
            }
            lines.for_each(|l| merged.push_str(l));
        }
        fs::write(dir.join(name), merged)?;
    }
    for &s in &cfg.seeds {
        let target = seed_dir(dir, s);
        if target.exists() {
            fs::remove_dir_all(&target)?;
        }
        fs::rename(seed_dir(&child_dir(s), s), target)?;
    }
    fs::remove_dir_all(&jobs_dir)?;
    let reports = read_reports(fs::File::open(dir.join("reports.csv"))?)?;
    let summary = summarize(&reports);
    write_summary(&summary, fs::File::create(dir.join("summary.csv"))?)?;
    Ok(summary)
}

/// Per-stage comparison of several runs, one column pair per run.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub columns: Vec<(String, Strategy)>,
    /// `rows[stage - 1][column]`.
    pub rows: Vec<Vec<SummaryRow>>,
    /// Best column by mean average accuracy among non-multitask runs.
    pub best: Vec<Option<usize>>,
}

pub fn build_comparison(dirs: &[PathBuf]) -> Result<ComparisonTable> {
    let mut columns: Vec<(String, Strategy)> = Vec::new();
    let mut per_column: Vec<Vec<SummaryRow>> = Vec::new();
    for d in dirs {
        let path = d.join("summary.csv");
        if !path.is_file() {
            return Err(Error::Validation(format!("{} has no summary.csv", d.display())));
        }
        let rows = read_summary(fs::File::open(&path)?)?;
        if rows.is_empty() {
            return Err(Error::Validation(format!("{} holds an empty summary", d.display())));
        }
        let mut by_strategy: BTreeMap<Strategy, Vec<SummaryRow>> = BTreeMap::new();
        for r in rows {
            by_strategy.entry(r.strategy).or_default().push(r);
        }
        for (s, mut rows) in by_strategy {
            rows.sort_by_key(|r| r.stage);
            let mut label = s.name().to_string();
            if columns.iter().any(|(l, _)| *l == label) {
                label = format!("{label}@{}", d.display());
            }
            columns.push((label, s));
            per_column.push(rows);
        }
    }
    let stages = per_column[0].len();
    for ((label, _), rows) in columns.iter().zip(&per_column) {
        if rows.len() != stages || rows.iter().enumerate().any(|(i, r)| r.stage != i + 1) {
            return Err(Error::Validation(format!(
                "stage counts differ: `{}` has {} stages, `{}` has {stages}",
                label,
                rows.len(),
                columns[0].0
            )));
        }
    }
    let rows: Vec<Vec<SummaryRow>> = (0..stages).map(|i| per_column.iter().map(|c| c[i].clone()).collect()).collect();
    let best = rows
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(j, _)| columns[*j].1 != Strategy::Multitask)
                .max_by(|a, b| a.1.acc_avg_mean.total_cmp(&b.1.acc_avg_mean))
                .map(|(j, _)| j)
        })
        .collect();
    Ok(ComparisonTable { columns, rows, best })
}

pub fn write_comparison<W: Write>(t: &ComparisonTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["stage".to_string()];
    for (label, _) in &t.columns {
        header.push(format!("{label}:acc_avg"));
        header.push(format!("{label}:acc_first"));
    }
    header.push("best".into());
    w.write_record(&header)?;
    for (i, row) in t.rows.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        for r in row {
            rec.push(format!("{:.4}±{:.4}", r.acc_avg_mean, r.acc_avg_std));
            rec.push(format!("{:.4}±{:.4}", r.acc_first_mean, r.acc_first_std));
        }
        rec.push(t.best[i].map(|j| t.columns[j].0.clone()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn compare(a: CompareArgs, out: &mut dyn Write) -> Result<Outcome> {
    let table = build_comparison(&a.dirs)?;
    let mut buf = Vec::new();
    write_comparison(&table, &mut buf)?;
    out.write_all(&buf)?;
    if let Some(p) = &a.out {
        fs::write(p, &buf)?;
    }
    Ok(Outcome::Success)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<Outcome> {
    if !(a.epsilon > 0.0 && a.tolerance > 0.0) {
        return Err(Error::Config("epsilon and tolerance must be positive".into()));
    }
    let mut failures = 0;
    let mut checks = 0;
    for seed in a.seed..a.seed + a.seeds.max(1) {
        let mut probes: Vec<Probe> = Vec::new();
        if a.scope != Scope::Model {
            probes.extend(layer_probes(seed).into_iter().map(|(n, p)| (format!("layer/{n}"), p)));
        }
        if a.scope != Scope::Layer {
            probes.extend(model_probes(seed));
        }
        if a.inject_fault {
            probes = probes
                .into_iter()
                .map(|(n, p)| {
                    let faulty: Box<dyn Differentiable + Send> = Box::new(FaultInjected(p));
                    (n, faulty)
                })
                .collect();
        }
        for (name, report) in check_all(probes, a.epsilon, a.tolerance) {
            checks += 1;
            let ok = report.passed();
            if !ok {
                failures += 1;
            }
            writeln!(
                out,
                "{} {name} seed={seed} max_rel_error={:.3e}",
                if ok { "PASS" } else { "FAIL" },
                report.max_rel_error()
            )?;
            for f in report.failures() {
                writeln!(out, "  {} rel_error={:.3e} at {}", f.name, f.max_rel_error, f.worst_index)?;
            }
        }
    }
    writeln!(out, "{} of {checks} checks passed", checks - failures)?;
    Ok(if failures == 0 { Outcome::Success } else { Outcome::Failed })
}
