//! Experiment orchestration: scenario generation, Monte-Carlo sweeps, CDFs
//! over drops and CSV/JSON reporting.

pub mod cdf;
pub mod config;
pub mod generate;
pub mod report;
pub mod sweep;

pub use cdf::{compute_cdf, CdfTable};
pub use config::{ArraySpec, ConfigError, Generator, ScenarioConfig};
pub use generate::{generate_drop, generate_scenario, Scenario};
pub use report::{read_results, render_csv, write_report, write_results, CSV_HEADER};
pub use sweep::{frequency_grid, run_bounds, run_sweep, EstimatorSet, SweepResult, SweepRow};
