//! Experiment harness behind the `elastrec` command-line tool: configuration
//! files, vertex selectors, seeded sweeps and CSV/VTK reporting.

pub mod config;
pub mod error;
pub mod forward;
pub mod harness;
pub mod report;

pub use config::{ExperimentConfig, Scenario};
pub use error::{CliError, CliResult};
pub use harness::{export_vtk, run_cell, run_experiment, run_sweep, Cell, SweepOutcome};
pub use report::{report_csv, ReportRow, SweepReport};
