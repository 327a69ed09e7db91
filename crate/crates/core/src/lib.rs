//! Predictive process monitoring with bootstrap-ensemble LSTM prediction
//! intervals.
//!
//! Phase I trains `b` LSTM predictors on bootstrap bags of a windowed
//! training series, measures their disagreement (model uncertainty), and fits
//! a small feed-forward network to the remaining squared residuals (data
//! uncertainty). Phase II places Shewhart-type limits `f̂ ± z·s` around each
//! one-step-ahead prediction and flags observations that fall outside.
//!
//! The crate also carries the AR(1)-GARCH(1,1) simulator, run-level metrics
//! (FAP, CED, DR, Recall), the benchmark detectors and the experiment runner
//! used to compare them.

pub mod audit;
pub mod chart;
pub mod dataset;
pub mod detectors;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod hashing;
pub mod metrics;
pub mod nn;
pub mod simgen;

pub use chart::{first_alarm, limits, monitor, AlarmRecord, ChartConfig, IntervalPredictor};
pub use dataset::{
    at_summary, bootstrap_resample, load_csv, make_windows, resample_energy, split_train_test,
    write_csv, BootstrapSplit, EnergyResampleConfig, Pair, TimeSeries, WindowedPairs,
};
pub use detectors::{Audit, DetectorKind, DetectorSpec, FittedDetector};
pub use ensemble::{
    compute_residuals, ensemble_predict, predict_total_std, train_ensemble, train_variance_net,
    EnsembleModel, ResidualPair, UncertaintyBundle, VarianceNet,
};
pub use error::{Error, Result};
pub use experiment::{run_experiment, Calibration, ExperimentConfig, ExperimentOutput};
pub use metrics::{aggregate, ced, dr, fap, mean_recall, recall, MetricsReport, RunOutcome, RunRecord};
pub use nn::{CellVariant, LstmModel, LstmParams, LstmState, OptimizerKind, RnnModel, TrainConfig};
pub use simgen::{experiment_grid, generate, seed_schedule, ScheduleKind, ShiftMode, SimConfig};
