//! Scenario runner for the `bmlab` toolkit: JSON configs in, canonical JSON
//! reports and CSV curves out.

pub mod canonical;
pub mod emit;
pub mod scenario;

pub use emit::{emit_report, run_cli, Args};
pub use scenario::{parse_config, run_scenario, CliError, Outcome, Report, ScenarioConfig, Task};
