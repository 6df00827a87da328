//! Accuracy metrics, embedding diagnostics, report tables and the
//! multi-seed experiment runner.

mod experiment;
mod export;
mod metrics;
mod pca;
mod report;

pub use experiment::{
    run_experiment, run_seed, seed_dir, write_tables, ExperimentConfig, ExperimentResult, OutputOptions, SeedRun,
    StreamSource,
};
pub use export::{embedding_rows, export_embeddings, write_embeddings, EmbeddingRow};
pub use metrics::{aggregation_degree, aggregation_sample, evaluate_task, mean_pairwise_cosine};
pub use pca::Pca2;
pub use report::{
    mean_std, read_reports, read_summary, summarize, write_diagnostics, write_reports, write_summary, write_timings,
    DiagnosticRow, StageReport, SummaryRow, REPORT_HEADER,
};
