//! Scenario files, the closed-loop runner, metrics and CSV output.

pub mod export;
pub mod metrics;
pub mod run;
pub mod scenario;

pub use export::{export_csv, read_csv, trajectory_csv};
pub use metrics::{compute_metrics, RunMetrics, Sample, SegmentMetrics, Trajectory};
pub use run::{run, sweep, RunOutput, Runner};
pub use scenario::{load_scenario, ControllerKind, Scenario, ScenarioError, Schedule};
