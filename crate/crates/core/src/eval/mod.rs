//! Metrics, batch experiments, cost benchmark and plot data.

pub mod assign;
pub mod bench;
pub mod experiment;
pub mod metrics;
pub mod plot;

pub use assign::{hungarian, hungarian_assign, Match};
pub use bench::{bench_cost, BenchConfig, BenchReport, BenchRow, Stats};
pub use experiment::{run_experiment, run_trial, EvalReport, TrialReport};
pub use metrics::{doa_error, DoaErrors, PairError, EXTREME_ERROR};
pub use plot::{emit_plot_data, mollweide, read_plot_data, PlotRow};
