//! Data ingestion, metrics, manifests and the pipelines used by the CLI.

pub mod evaluate;
pub mod io;
pub mod metrics;
pub mod report;
pub mod run;

pub use evaluate::{transfer_evaluation, TransferEvaluation, TransferEvaluationConfig};
pub use io::{atomic_write, dataset_csv, load_dataset, orthogonalize, ColumnSchema, DataPaths};
pub use metrics::{evaluate_metrics, metric_auc, metric_cc, metric_fcr, metric_rmspe, EvaluationInput, MetricReport, Validation};
pub use report::report_csv;
pub use run::{load_request_data, run_bootstrap, run_evaluate, run_fit, Benchmark, Coefficients, FitManifest, FitRequest};
