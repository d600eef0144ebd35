//! Scenario files, property suites, reports, and the CLI command layer.

pub mod commands;
pub mod report;
pub mod scenario;
pub mod suites;

pub use commands::{cmd_shells, cmd_simulate, cmd_sweep, cmd_verify, CommandAction, CommandOutcome};
pub use report::{
    read_trajectory_csv, revalidate_from_artifacts, write_trajectory_csv, CheckOutcome, RunReport,
    TRAJECTORY_CSV_HEADER,
};
pub use scenario::{build_scenario, load_scenario, scenario_hash, BuiltScenario, Scenario};
