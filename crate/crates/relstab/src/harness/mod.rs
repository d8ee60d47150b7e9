//! Experiment orchestration: configuration, the end-to-end pipeline,
//! persisted results, summaries, and the embedding-drift analysis.

pub mod circles;
pub mod config;
pub mod io;
pub mod run;
pub mod summary;

pub use circles::{embedding_report, EmbeddingReport, EmbeddingReportConfig};
pub use config::{DatasetSource, ExperimentConfig, ModelSettings, PerturbationSettings};
pub use io::Manifest;
pub use run::{reverify_bounds, run_experiment, train_only, RunOutput, BOUND_TOL};
pub use summary::{render_summary, summarize_dir, summarize_records, Summary};
