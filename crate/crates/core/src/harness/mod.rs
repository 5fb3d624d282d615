//! Metrics, baselines, threshold sweeps and end-to-end experiment runs.

mod baselines;
mod experiment;
mod metrics;
mod report;
mod sweep;

pub use baselines::{fixed_window_count, fixed_window_recall};
pub use experiment::{
    build_suite, generate_suites, prepare_predictor, run_experiment, run_sweep, sweep_suite, train_predictors, write_count_summary,
    write_recall_summary, CountSummaryRow, ExperimentConfig, ExperimentOutcome, Method, PredictorSetup, RecallSummaryRow, ResultRecord,
    SuiteKind, SuiteTasks, SweepRow, SweepTable, OUTPUT_ENV,
};
pub use metrics::{auroc, boundary_prf, choice_accuracy, match_boundaries, mean_sd, mra, pearson, BoundaryCounts, Prf};
pub use report::write_report;
pub use sweep::{select_tau, SweepPoint};
