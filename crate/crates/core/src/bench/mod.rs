//! Benchmark harness: runs compression pipelines on toy models, ingests
//! external metric tables and scores everything against a base model.

pub mod data;
pub mod metrics;
pub mod suite;

pub use data::{bundled, BUNDLED};
pub use metrics::{
    emit_plot_data, ingest_metrics, parse_metrics, plot_data_csv, score_report, score_with, write_metrics,
    MethodMetrics, OptTable, Ranking,
};
pub use suite::{
    run_suite, write_outputs, CalibrationSpec, ModelFile, ModelSpec, OptScore, PipelineSpec, Report, ReportRow,
    SeededModel, StudentSpec, SuiteConfig, TrainSpec, TrainedStudent, BASE_PIPELINE,
};
