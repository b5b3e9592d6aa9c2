//! Experiment configuration, parallel sweeps, the oracle gate and reports.

mod config;
mod gate;
mod report;
mod run;

pub use config::{EstimatorSpec, ExperimentConfig};
pub use gate::{oracle_gate, GateCheck, GateReport};
pub use report::{read_results, write_report, ReportOutput};
pub use run::{
    cell_disorder, format_float, rows_to_csv, run_cell, run_experiment, CellPart, CellRecord, ResultRow, RunOutcome,
    CONFIG_SNAPSHOT, CSV_HEADER, JOURNAL_FILE, RESULTS_FILE,
};

use crate::error::Error;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 3,
        Error::Diagnostic(_) => 2,
        _ => 1,
    }
}
