//! Experiment harness: configuration, drivers and reports.
//!
//! Experiments run their repetitions one after another; the particle loop
//! inside each step is what runs in parallel. Reports are assembled in grid
//! order, so output does not depend on the thread count.

mod config;
mod experiments;
mod report;

pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::{
    moment_scheme_index, pooled_w1, quartile_means, refit_loglog, run_chaos_experiment, run_contraction_check,
    run_couple_check, run_decay_experiment, run_delay_experiment, run_delta_experiment, run_experiment,
    run_moment_experiment, run_simulate, write_trajectory,
};
pub use report::{parse_series_csv, Check, ExperimentReport, SeriesPoint, Window};
