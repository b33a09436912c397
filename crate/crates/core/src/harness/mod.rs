//! Config files, sweeps, learning-rate search, verification suite and
//! reports.

pub mod config;
pub mod lr_search;
pub mod plot;
pub mod report;
pub mod sweep;
pub mod verify;

pub use config::{ExperimentConfig, VerifyConfig};
pub use lr_search::{lr_search, lr_search_with_threads, LrCandidate, LrChoice};
pub use plot::convergence_svg;
pub use report::{emit_report, report_from_dir};
pub use sweep::{
    cells, records_from_csv, records_to_csv, run_cells, run_sweep, run_sweep_with_threads,
    threads_from_env, Cell, CellResult, SummaryRow, SweepSummary, CSV_HEADER,
};
pub use verify::{run_verification, VerificationSuite};
