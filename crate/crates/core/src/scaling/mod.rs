//! Finite-time scaling: curve collapse, cutoff divergence fit, slope method
//! and the full fit with an irrelevant scaling variable.

mod bootstrap;
mod collapse;
mod critical;
mod dataset;
mod full;
pub mod spline;

pub use bootstrap::{
    bootstrap_ci, bootstrap_full_fit, BootstrapOptions, BootstrapResult, MAX_FAILURE_FRACTION,
    MIN_RESAMPLES,
};
pub use collapse::{
    collapse, collapse_with, isolated_curves, normalize_xi, CollapseOptions, CollapseResult,
    LOCALIZED_SLOPE, LOCALIZED_SLOPE_TOL,
};
pub use critical::{
    crossing_points, fit_critical_cutoff, slope_method, wegner_consistency, Crossing,
    CrossingReport, CutoffFit, CutoffOptions, SlopeMethodResult, WegnerReport,
};
pub use dataset::ScalingDataset;
pub use full::{
    fit_full_scaling, order_robustness, refit_full_scaling, synthetic_full_dataset, CriticalCi,
    CriticalFit, Interval, OrderVariant, ScalingOrders,
};
