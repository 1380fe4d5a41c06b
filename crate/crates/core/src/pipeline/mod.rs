//! Experiment drivers: detection sweeps over attack grids and the Gaussian
//! re-rendering removal pipeline.

mod removal;
mod report;
mod sweep;

pub use removal::{
    run_removal, run_removal_pipeline, RemovalConfig, RemovalDiagnostics, RemovalReport, RemovalSession,
    REMOVAL_METHOD,
};
pub use report::{emit_report, sweep_csv, sweep_svg, ReportFormat, SWEEP_CSV_HEADER};
pub use sweep::{
    phase_ramp_error, run_detection_sweep, CellReport, PhaseRampMeasurement, SweepReport, TrialConfig,
    TrialRecord,
};
