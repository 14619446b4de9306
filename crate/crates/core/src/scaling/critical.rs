use serde::{Deserialize, Serialize};

use super::dataset::ScalingDataset;
use crate::error::{invalid, Error, Result};
use crate::optimize::{levenberg_marquardt, LmOptions};
use crate::stats::{line_fit, weighted_lstsq};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CutoffOptions {
    /// Hold the exponent fixed (model-discrimination runs).
    pub fixed_nu: Option<f64>,
}

/// `1 / xi = alpha |K - Kc|^nu + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffFit {
    pub kc: f64,
    pub kc_err: f64,
    pub nu: f64,
    pub nu_err: f64,
    pub alpha: f64,
    pub alpha_err: f64,
    pub beta: f64,
    pub beta_err: f64,
    pub chi2: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    /// Cutoff consistent with zero while the largest xi sits next to Kc.
    pub degenerate: bool,
}

fn cutoff_model(k: f64, kc: f64, nu: f64, alpha: f64, beta: f64) -> f64 {
    alpha * (k - kc).abs().powf(nu) + beta
}

/// Weighted fit of the cutoff divergence over both branches jointly, with
/// multi-start over `Kc` in the central half of the K range and
/// `nu in {1.0, 1.3, 1.6, 2.0}`.
pub fn fit_critical_cutoff(points: &[(f64, f64, f64)], opts: &CutoffOptions) -> Result<CutoffFit> {
    let n = points.len();
    let n_par = if opts.fixed_nu.is_some() { 3 } else { 4 };
    if n <= n_par {
        return Err(Error::InsufficientData(format!(
            "{n} points for {n_par} parameters"
        )));
    }
    if points.iter().any(|p| !(p.1 > 0.0 && p.2 > 0.0)) {
        return Err(invalid("xi and its error must be positive"));
    }
    let k: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| 1.0 / p.1).collect();
    let s: Vec<f64> = points.iter().map(|p| p.2 / (p.1 * p.1)).collect();
    let (kmin, kmax) = k
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(*v), b.max(*v))
        });
    let imax = (0..n)
        .max_by(|&a, &b| points[a].1.total_cmp(&points[b].1))
        .unwrap();
    if imax == 0 || imax == n - 1 {
        return Err(invalid("K grid does not straddle the xi maximum"));
    }

    let unpack = |p: &[f64]| -> (f64, f64, f64, f64) {
        match opts.fixed_nu {
            Some(nu) => (p[0], nu, p[1], p[2]),
            None => (p[0], p[1], p[2], p[3]),
        }
    };
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        let (kc, nu, alpha, beta) = unpack(p);
        if !(nu > 0.0) || !kc.is_finite() {
            return None;
        }
        Some(
            (0..n)
                .map(|i| (cutoff_model(k[i], kc, nu, alpha, beta) - y[i]) / s[i])
                .collect(),
        )
    };

    let nus: Vec<f64> = match opts.fixed_nu {
        Some(v) => vec![v],
        None => vec![1.0, 1.3, 1.6, 2.0],
    };
    let mut best: Option<crate::optimize::LmResult> = None;
    for a in 0..5 {
        let kc0 = kmin + (kmax - kmin) * (0.25 + 0.125 * a as f64);
        for &nu0 in &nus {
            // alpha, beta are linear given (Kc, nu)
            let rows: Vec<Vec<f64>> = k
                .iter()
                .map(|&ki| vec![(ki - kc0).abs().powf(nu0), 1.0])
                .collect();
            let Ok(lin) = weighted_lstsq(&rows, &y, Some(&s)) else {
                continue;
            };
            let p0 = match opts.fixed_nu {
                Some(_) => vec![kc0, lin.coefficients[0], lin.coefficients[1]],
                None => vec![kc0, nu0, lin.coefficients[0], lin.coefficients[1]],
            };
            if let Ok(r) = levenberg_marquardt(residuals, &p0, &LmOptions::default()) {
                if best.as_ref().map_or(true, |b| r.chi2 < b.chi2) {
                    best = Some(r);
                }
            }
        }
    }
    let r =
        best.ok_or_else(|| Error::NonConvergence("cutoff fit failed from every start".into()))?;
    let (kc, nu, alpha, beta) = unpack(&r.params);
    let errs: Vec<f64> = (0..r.params.len()).map(|i| r.std_err(i)).collect();
    let (kc_err, nu_err, alpha_err, beta_err) = match opts.fixed_nu {
        Some(_) => (errs[0], 0.0, errs[1], errs[2]),
        None => (errs[0], errs[1], errs[2], errs[3]),
    };
    let nearest = (0..n)
        .min_by(|&a, &b| (k[a] - kc).abs().total_cmp(&(k[b] - kc).abs()))
        .unwrap();
    let dof = n - n_par;
    Ok(CutoffFit {
        kc,
        kc_err,
        nu,
        nu_err,
        alpha,
        alpha_err,
        beta,
        beta_err,
        chi2: r.chi2,
        dof,
        reduced_chi2: r.chi2 / dof as f64,
        degenerate: beta.abs() <= 2.0 * beta_err && nearest == imax,
    })
}

/// Slope-method estimate of `nu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeMethodResult {
    pub nu: f64,
    pub nu_err: f64,
    /// Slope of `ln (ln Λ)'` against `ln t`, equal to `1 / (3 nu)`.
    pub log_slope: f64,
    pub log_slope_err: f64,
    /// `(t, d ln Λ / dK, error)` at each time.
    pub derivatives: Vec<(f64, f64, f64)>,
    /// Crossing K of the regression lines of consecutive times.
    pub crossings: Vec<f64>,
    /// Some crossing falls outside the K window.
    pub drift_warning: bool,
}

/// For each time, a weighted linear regression of `ln Λ` against `K` inside
/// `window`; then `ln` of those slopes against `ln t`.
pub fn slope_method(data: &ScalingDataset, window: (f64, f64)) -> Result<SlopeMethodResult> {
    let ki: Vec<usize> = (0..data.n_k())
        .filter(|&i| data.k[i] >= window.0 && data.k[i] <= window.1)
        .collect();
    if ki.len() < 2 {
        return Err(Error::InsufficientData(
            "fewer than two K values in the window".into(),
        ));
    }
    if data.t.last().unwrap() / data.t[0] < 100.0 * (1.0 - 1e-9) {
        return Err(Error::InsufficientData(
            "times must span at least two decades".into(),
        ));
    }
    let mut lines = Vec::with_capacity(data.n_t());
    let mut derivs = Vec::with_capacity(data.n_t());
    for j in 0..data.n_t() {
        let x: Vec<f64> = ki.iter().map(|&i| data.k[i]).collect();
        let y: Vec<f64> = ki.iter().map(|&i| data.ln_lambda[i][j]).collect();
        let s: Vec<f64> = ki.iter().map(|&i| data.sigma[i][j]).collect();
        let f = if ki.len() == 2 {
            let d = (y[1] - y[0]) / (x[1] - x[0]);
            let e = (s[0] * s[0] + s[1] * s[1]).sqrt() / (x[1] - x[0]);
            crate::stats::LineFit {
                slope: d,
                intercept: y[0] - d * x[0],
                slope_err: e,
                intercept_err: 0.0,
                chi2: 0.0,
                dof: 0,
            }
        } else {
            line_fit(&x, &y, Some(&s))?
        };
        if !(f.slope > 0.0) {
            return Err(invalid(format!(
                "non-positive d ln Λ / dK at t = {}",
                data.t[j]
            )));
        }
        derivs.push((data.t[j], f.slope, f.slope_err));
        lines.push(f);
    }
    let lx: Vec<f64> = derivs.iter().map(|d| d.0.ln()).collect();
    let ly: Vec<f64> = derivs.iter().map(|d| d.1.ln()).collect();
    let ls: Vec<f64> = derivs.iter().map(|d| d.2 / d.1).collect();
    let fit = line_fit(&lx, &ly, Some(&ls))?;
    let scale = fit.reduced_chi2().max(1.0).sqrt();
    let a = fit.slope;
    let a_err = fit.slope_err * scale;
    let crossings: Vec<f64> = lines
        .windows(2)
        .map(|w| (w[0].intercept - w[1].intercept) / (w[1].slope - w[0].slope))
        .collect();
    let drift_warning = crossings
        .iter()
        .any(|c| !(*c >= window.0 && *c <= window.1));
    Ok(SlopeMethodResult {
        nu: 1.0 / (3.0 * a),
        nu_err: a_err / (3.0 * a * a),
        log_slope: a,
        log_slope_err: a_err,
        derivatives: derivs,
        crossings,
        drift_warning,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub t1: f64,
    pub t2: f64,
    pub k: f64,
    pub ln_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub crossings: Vec<Crossing>,
    /// Largest pairwise distance between crossing K values.
    pub k_spread: f64,
    pub mean_k: f64,
    pub mean_ln_lambda: f64,
}

/// Pairwise intersections of the `ln Λ`-vs-K curves at the dataset times
/// closest to `times`, located by linear interpolation along K. When a pair
/// changes sign more than once the root closest to the middle of the K range
/// is used.
pub fn crossing_points(data: &ScalingDataset, times: &[f64]) -> Result<CrossingReport> {
    let cols: Vec<usize> = times
        .iter()
        .map(|t| {
            (0..data.n_t())
                .min_by(|&a, &b| {
                    (data.t[a].ln() - t.ln())
                        .abs()
                        .total_cmp(&(data.t[b].ln() - t.ln()).abs())
                })
                .unwrap()
        })
        .collect();
    let mid = 0.5 * (data.k[0] + data.k[data.n_k() - 1]);
    let mut crossings = Vec::new();
    for a in 0..cols.len() {
        for b in a + 1..cols.len() {
            let (ja, jb) = (cols[a], cols[b]);
            if ja == jb {
                continue;
            }
            let mut best: Option<Crossing> = None;
            for i in 0..data.n_k() - 1 {
                let d0 = data.ln_lambda[i][ja] - data.ln_lambda[i][jb];
                let d1 = data.ln_lambda[i + 1][ja] - data.ln_lambda[i + 1][jb];
                if d0 == 0.0 || d0 * d1 < 0.0 {
                    let f = if d0 == 0.0 { 0.0 } else { d0 / (d0 - d1) };
                    let k = data.k[i] + f * (data.k[i + 1] - data.k[i]);
                    let y = data.ln_lambda[i][ja]
                        + f * (data.ln_lambda[i + 1][ja] - data.ln_lambda[i][ja]);
                    let c = Crossing {
                        t1: data.t[ja],
                        t2: data.t[jb],
                        k,
                        ln_lambda: y,
                    };
                    if best
                        .as_ref()
                        .map_or(true, |bc| (k - mid).abs() < (bc.k - mid).abs())
                    {
                        best = Some(c);
                    }
                }
            }
            if let Some(c) = best {
                crossings.push(c);
            }
        }
    }
    if crossings.is_empty() {
        return Err(Error::NonOverlap("no pair of curves intersects".into()));
    }
    let ks: Vec<f64> = crossings.iter().map(|c| c.k).collect();
    let spread = ks.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ks.iter().cloned().fold(f64::INFINITY, f64::min);
    let n = crossings.len() as f64;
    Ok(CrossingReport {
        mean_k: ks.iter().sum::<f64>() / n,
        mean_ln_lambda: crossings.iter().map(|c| c.ln_lambda).sum::<f64>() / n,
        k_spread: spread,
        crossings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WegnerReport {
    pub k1: f64,
    pub deviation: f64,
    pub bound: f64,
    pub consistent: bool,
}

/// Compares a critical anomalous-diffusion exponent with 2/3.
pub fn wegner_consistency(k1: f64) -> WegnerReport {
    let deviation = (k1 - 2.0 / 3.0).abs();
    WegnerReport {
        k1,
        deviation,
        bound: 0.01,
        consistent: deviation <= 0.01,
    }
}
