//! Closed-loop simulation, scenario files, identification and run artifacts.

pub mod footprint;
pub mod identify;
pub mod metrics;
pub mod output;
pub mod run;
pub mod scenario;

pub use footprint::clearance;
pub use identify::{collect_transitions, estimate_disturbance_set, load_trials, residual_bounds, Transition};
pub use metrics::{compute_metrics, log_from_rows, Metrics};
pub use output::{emit_outputs, parse_run_csv, read_run_csv, run_csv_string, write_run_csv, CSV_COLUMNS};
pub use run::{run_scenario, run_scenario_with, LogRow, RunLog, RunOptions, StepRecord, Termination};
pub use scenario::ScenarioConfig;
