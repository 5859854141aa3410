//! Meta-test protocol, metrics, experiment driver and reports.

mod config;
mod experiment;
mod metrics;
mod protocol;
mod report;
mod sweep;

pub use config::{
    ClusteringSpec, DatasetSpec, EmbeddingSpec, ExperimentConfig, MetaTestSpec, OodKind, OodSpec, OutputSpec,
    ResolvedVariant, TaskMode, VariantSpec, OUT_ENV,
};
pub use experiment::{load_datasets, resolve_arch, run_experiment, Datasets, ResultsRecord, RunRecord};
pub use metrics::{accuracy, argmax};
pub use protocol::{adapt_dataset, meta_test, ood_evaluate, AccuracyCurve, CurvePoint, FineTuneConfig};
pub use report::{
    aggregate, emit_report, parse_results_csv, plot_series, read_results_csv, result_rows, rows_to_csv, summary,
    ReportFiles, ResultRow, VariantSeries, RESULTS_HEADER,
};
pub use sweep::{apply_override, run_sweep, SweepPoint, SweepRecord};
