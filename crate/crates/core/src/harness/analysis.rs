use serde::{Deserialize, Serialize};

use super::config::AnalysisConfig;
use crate::error::{Error, Result};
use crate::scaling::{
    bootstrap_ci, collapse, crossing_points, fit_critical_cutoff, isolated_curves, normalize_xi,
    slope_method, BootstrapOptions, CollapseResult, CrossingReport, CutoffFit, CutoffOptions,
    Interval, ScalingDataset, SlopeMethodResult, LOCALIZED_SLOPE, LOCALIZED_SLOPE_TOL,
};
use crate::stats::line_fit;

/// K values whose late-time `ln Λ` slope (last third of the times) passes
/// the saturation test.
pub fn saturated_k(data: &ScalingDataset) -> Vec<f64> {
    let nt = data.n_t();
    let late0 = nt - (nt / 3).max(3).min(nt);
    let x: Vec<f64> = data.t[late0..].iter().map(|t| t.ln()).collect();
    (0..data.n_k())
        .filter(|&i| {
            line_fit(
                &x,
                &data.ln_lambda[i][late0..],
                Some(&data.sigma[i][late0..]),
            )
            .map_or(false, |f| {
                (f.slope - LOCALIZED_SLOPE).abs() <= LOCALIZED_SLOPE_TOL
            })
        })
        .map(|i| data.k[i])
        .collect()
}

/// Drops curves that share fewer than two `ln Λ` levels with every other
/// curve, repeating until none is left isolated. Returns the remaining
/// dataset and the dropped K values.
pub fn overlapping_curves(data: &ScalingDataset) -> Result<(ScalingDataset, Vec<f64>)> {
    let mut d = data.clone();
    let mut dropped = Vec::new();
    loop {
        let iso = isolated_curves(&d);
        if iso.is_empty() || iso.len() + 2 > d.n_k() {
            break;
        }
        dropped.extend(iso.iter().map(|&i| d.k[i]));
        d = d.without_k(&iso)?;
    }
    dropped.sort_by(f64::total_cmp);
    Ok((d, dropped))
}

/// Collapse of the overlapping curves followed by normalization on the
/// configured (or detected) localized reference K values. Without any
/// saturated K the gauge stays at zero mean shift.
pub fn normalized_collapse(
    data: &ScalingDataset,
    cfg: &AnalysisConfig,
) -> Result<(CollapseResult, Vec<f64>)> {
    let (data, _) = overlapping_curves(data)?;
    let data = &data;
    let r = collapse(data)?;
    let refs: Vec<f64> = if cfg.localized_k.is_empty() {
        saturated_k(data)
    } else {
        cfg.localized_k
            .iter()
            .copied()
            .filter(|k| data.k.contains(k))
            .collect()
    };
    if refs.is_empty() {
        return Ok((r, refs));
    }
    Ok((normalize_xi(&r, data, &refs)?, refs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepAnalysis {
    pub collapse_reduced_chi2: f64,
    pub collapse_residual_variance: f64,
    pub collapse_converged: bool,
    pub reference_k: Vec<f64>,
    /// K values left out of the collapse for lack of overlap.
    pub isolated_k: Vec<f64>,
    pub k: Vec<f64>,
    pub ln_xi: Vec<f64>,
    pub ln_xi_err: Vec<f64>,
    pub cutoff: Option<CutoffFit>,
    pub cutoff_error: Option<String>,
    pub nu_bootstrap: Option<Interval>,
    pub crossings: Option<CrossingReport>,
    pub slope: Option<SlopeMethodResult>,
}

/// Four well separated record times inside `data`.
pub fn crossing_times(data: &ScalingDataset) -> Vec<f64> {
    let (a, b) = (data.t[0].ln(), data.t[data.n_t() - 1].ln());
    (0..4)
        .map(|i| (a + (b - a) * i as f64 / 3.0).exp())
        .collect()
}

fn cutoff_nu(data: &ScalingDataset, cfg: &AnalysisConfig) -> Result<f64> {
    let (c, _) = normalized_collapse(data, cfg)?;
    Ok(fit_critical_cutoff(&c.xi_curve(), &CutoffOptions::default())?.nu)
}

/// Collapse, normalization, cutoff fit (with a bootstrap interval on `nu`
/// when `bootstrap` is set), crossing points and the slope method around
/// the fitted critical point.
pub fn analyze_sweep(
    data: &ScalingDataset,
    cfg: &AnalysisConfig,
    bootstrap: bool,
) -> Result<SweepAnalysis> {
    let data = data.restrict(
        f64::NEG_INFINITY,
        f64::INFINITY,
        cfg.collapse_t_min,
        f64::INFINITY,
    )?;
    let (c, refs) = normalized_collapse(&data, cfg)?;
    let (_, isolated_k) = overlapping_curves(&data)?;
    let cut = fit_critical_cutoff(&c.xi_curve(), &CutoffOptions::default());
    let nu_bootstrap = match (&cut, bootstrap) {
        (Ok(_), true) => {
            let opts = BootstrapOptions {
                n_resamples: cfg.bootstrap_resamples,
                seed: cfg.bootstrap_seed,
                ..Default::default()
            };
            Some(bootstrap_ci(&data, &opts, |d| Ok(vec![cutoff_nu(d, cfg)?]))?.intervals[0].clone())
        }
        _ => None,
    };
    let crossings = crossing_points(&data, &crossing_times(&data)).ok();
    let center = match (&cut, &crossings) {
        (Ok(f), _) => Some(f.kc),
        (Err(_), Some(cr)) => Some(cr.mean_k),
        _ => None,
    };
    let slope = center
        .and_then(|kc| slope_method(&data, (kc - cfg.slope_window, kc + cfg.slope_window)).ok());
    let (cutoff, cutoff_error) = match cut {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(SweepAnalysis {
        collapse_reduced_chi2: c.reduced_chi2,
        collapse_residual_variance: c.residual_variance,
        collapse_converged: c.converged,
        reference_k: refs,
        isolated_k,
        k: c.k.clone(),
        ln_xi: c.ln_xi.clone(),
        ln_xi_err: c.ln_xi_err.clone(),
        cutoff,
        cutoff_error,
        nu_bootstrap,
        crossings,
        slope,
    })
}

/// Keeps the `n` K values closest to `center`.
pub fn nearest_k(data: &ScalingDataset, center: f64, n: usize) -> Result<ScalingDataset> {
    if n == 0 || n > data.n_k() {
        return Err(Error::InsufficientData(format!(
            "cannot keep {n} of {} K values",
            data.n_k()
        )));
    }
    let mut idx: Vec<usize> = (0..data.n_k()).collect();
    idx.sort_by(|&a, &b| {
        (data.k[a] - center)
            .abs()
            .total_cmp(&(data.k[b] - center).abs())
    });
    let keep = &idx[..n];
    let lo = keep
        .iter()
        .map(|&i| data.k[i])
        .fold(f64::INFINITY, f64::min);
    let hi = keep
        .iter()
        .map(|&i| data.k[i])
        .fold(f64::NEG_INFINITY, f64::max);
    data.restrict(lo, hi, f64::NEG_INFINITY, f64::INFINITY)
}
