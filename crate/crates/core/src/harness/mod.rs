//! Configured runs: parameter sweeps with checkpoint and resume, run
//! manifests, output files and the per-figure pipelines.

mod analysis;
mod config;
mod figures;
mod io;
mod sweep;

pub use analysis::{
    analyze_sweep, crossing_times, nearest_k, normalized_collapse, overlapping_curves, saturated_k,
    SweepAnalysis,
};
pub use config::{with_workers, worker_count, AnalysisConfig, RunConfig, TimeSchedule};
pub use figures::{
    cost_estimate, critical_diffusion, critical_point_config, critical_series, distribution_config,
    golden_eta, gravity_runs, main_sweep_config, reproduce_figure, set_d_config, slope_dataset,
    slope_sweep_config, CriticalDiffusionReport, FigureOptions, FigureOutput, GravityReport, Scale,
    FIGURES, SITE_UPDATES_PER_SECOND,
};
pub use io::{
    file_hash, read_dataset_csv, read_series_csv, run_id, write_atomic, write_dataset_csv,
    write_distributions_csv, write_report, write_series_csv, write_table, RunManifest,
    CODE_VERSION, DATASET_HEADER, DISTRIBUTION_HEADER, SERIES_HEADER,
};
pub use sweep::{
    run_sweep, run_sweep_complete, FailedPoint, SweepOptions, SweepOutcome, SweepStatus,
};
