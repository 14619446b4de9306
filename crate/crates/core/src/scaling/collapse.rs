use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::ScalingDataset;
use super::spline::{quantile_breaks, CubicSpline};
use crate::error::{invalid, Error, Result};
use crate::stats::line_fit;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseOptions {
    /// Stop when no shift moves by more than this fraction of the shift range.
    pub tol: f64,
    pub max_iter: usize,
    /// Breakpoint count; `None` uses `max(8, ceil(N / 10))`.
    pub n_breaks: Option<usize>,
}

impl Default for CollapseOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200_000,
            n_breaks: None,
        }
    }
}

/// Per-K shifts `ln xi(K)` and the common curve `x = h(ln Λ)` with
/// `x = ln(xi t^(-1/3))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseResult {
    pub k: Vec<f64>,
    pub ln_xi: Vec<f64>,
    pub ln_xi_err: Vec<f64>,
    pub curve: CubicSpline,
    /// χ² with the effective variance of `x` propagated from `σ(ln Λ)`.
    pub chi2: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    /// Weighted mean squared horizontal residual.
    pub residual_variance: f64,
    /// Fixed-weight objective after every half-step; non-increasing.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl CollapseResult {
    /// `(K, xi, sigma_xi)` triples for the cutoff fit.
    pub fn xi_curve(&self) -> Vec<(f64, f64, f64)> {
        self.k
            .iter()
            .zip(self.ln_xi.iter().zip(&self.ln_xi_err))
            .map(|(&k, (&l, &e))| (k, l.exp(), l.exp() * e))
            .collect()
    }

    /// `(x, ln Λ)` samples of the common curve.
    pub fn curve_samples(&self, n: usize) -> Vec<(f64, f64)> {
        let (a, b) = self.curve.domain();
        (0..n)
            .map(|i| {
                let y = a + (b - a) * i as f64 / (n.max(2) - 1) as f64;
                (self.curve.eval(y), y)
            })
            .collect()
    }

    /// Moves the gauge: all shifts and the curve by `c`.
    pub fn with_gauge_shift(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.ln_xi.iter_mut().for_each(|v| *v += c);
        out.curve.shift(c);
        out
    }

    /// Horizontal residual variance of `data` under this collapse.
    pub fn residual_variance_on(&self, data: &ScalingDataset) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..data.n_k() {
            for j in 0..data.n_t() {
                let w = 1.0 / data.sigma[i][j].powi(2);
                let x = self.ln_xi[i] - data.t[j].ln() / 3.0;
                num += w * (x - self.curve.eval(data.ln_lambda[i][j])).powi(2);
                den += w;
            }
        }
        num / den
    }
}

/// Indices of curves whose `ln Λ` values share fewer than two levels with
/// the range of every other curve.
pub fn isolated_curves(data: &ScalingDataset) -> Vec<usize> {
    let n = data.n_k();
    let ranges: Vec<(f64, f64)> = data
        .ln_lambda
        .iter()
        .map(|r| {
            r.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                    (a.min(*v), b.max(*v))
                })
        })
        .collect();
    (0..n)
        .filter(|&i| {
            !(0..n).filter(|&j| j != i).any(|j| {
                data.ln_lambda[i]
                    .iter()
                    .filter(|v| **v >= ranges[j].0 && **v <= ranges[j].1)
                    .count()
                    >= 2
            })
        })
        .collect()
}

fn check_overlap(data: &ScalingDataset) -> Result<()> {
    if data.n_k() < 2 {
        return Err(Error::NonOverlap(
            "a single curve has nothing to collapse onto".into(),
        ));
    }
    match isolated_curves(data).first() {
        Some(&i) => Err(Error::NonOverlap(format!(
            "K = {} shares fewer than two ln Λ levels with every other curve",
            data.k[i]
        ))),
        None => Ok(()),
    }
}

/// Position `-ln t / 3` of curve `i` at level `y`, by linear interpolation
/// over its points sorted by ln Λ.
fn level_position(data: &ScalingDataset, i: usize, y: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = (0..data.n_t())
        .map(|j| (data.ln_lambda[i][j], -data.t[j].ln() / 3.0))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if y < pts[0].0 || y > pts.last().unwrap().0 {
        return None;
    }
    for w in pts.windows(2) {
        if y >= w[0].0 && y <= w[1].0 {
            let d = w[1].0 - w[0].0;
            return Some(if d == 0.0 {
                w[0].1
            } else {
                w[0].1 + (y - w[0].0) / d * (w[1].1 - w[0].1)
            });
        }
    }
    None
}

/// Chains neighbouring curves (ordered by mean ln Λ) through their overlap.
fn initial_shifts(data: &ScalingDataset) -> Vec<f64> {
    let n = data.n_k();
    let mean: Vec<f64> = data
        .ln_lambda
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mean[a].total_cmp(&mean[b]));
    let mut s = vec![0.0; n];
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut diffs = Vec::new();
        for &y in &data.ln_lambda[b] {
            if let (Some(ua), Some(ub)) = (level_position(data, a, y), level_position(data, b, y)) {
                diffs.push(ua - ub);
            }
        }
        s[b] = s[a]
            + if diffs.is_empty() {
                0.0
            } else {
                diffs.iter().sum::<f64>() / diffs.len() as f64
            };
    }
    let c = s.iter().sum::<f64>() / n as f64;
    s.iter_mut().for_each(|v| *v -= c);
    s
}

/// Alternates a fixed-weight spline fit of `x = h(ln Λ)` with closed-form
/// weighted re-estimation of each shift. The mean shift is pinned to zero.
pub fn collapse(data: &ScalingDataset) -> Result<CollapseResult> {
    collapse_with(data, &CollapseOptions::default())
}

pub fn collapse_with(data: &ScalingDataset, opts: &CollapseOptions) -> Result<CollapseResult> {
    check_overlap(data)?;
    if data.n_k() < 5 || data.n_t() < 5 {
        return Err(Error::InsufficientData(
            "collapse needs at least 5 K values and 5 times".into(),
        ));
    }
    let nk = data.n_k();
    let nt = data.n_t();
    let npts = nk * nt;
    let y: Vec<f64> = data.ln_lambda.iter().flatten().copied().collect();
    let sig: Vec<f64> = data.sigma.iter().flatten().copied().collect();
    let w: Vec<f64> = sig.iter().map(|s| 1.0 / (s * s)).collect();
    let lt: Vec<f64> = data.t.iter().map(|t| t.ln() / 3.0).collect();

    let n_breaks = opts
        .n_breaks
        .unwrap_or_else(|| 8usize.max((npts as f64 / 10.0).ceil() as usize));
    let mut breaks = quantile_breaks(&y, n_breaks);
    // Weighted design and its pseudo-inverse; reduce the breakpoints if the
    // data leave some basis function unsupported.
    let (mut curve, pinv, design) = loop {
        if breaks.len() < 2 {
            return Err(Error::InsufficientData("degenerate ln Λ range".into()));
        }
        let sp = CubicSpline::with_breaks(&breaks);
        let nb = sp.n_basis();
        let rows: Vec<Vec<f64>> = y.iter().map(|&v| sp.basis_row(v)).collect();
        let design = DMatrix::from_fn(npts, nb, |r, c| rows[r][c]);
        let weighted = DMatrix::from_fn(npts, nb, |r, c| design[(r, c)] / sig[r]);
        let svd = weighted.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() > 1e-10 * smax {
            let pinv = svd
                .pseudo_inverse(0.0)
                .map_err(|e| Error::RankDeficient(e.to_string()))?;
            break (sp, pinv, design);
        }
        let thinned: Vec<f64> = breaks
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 2 == 0 || *i == breaks.len() - 1)
            .map(|(_, v)| *v)
            .collect();
        if thinned.len() == breaks.len() {
            return Err(Error::RankDeficient("collapse spline".into()));
        }
        breaks = thinned;
    };

    let mut s = initial_shifts(data);
    let objective = |s: &[f64], h: &DVector<f64>| -> f64 {
        (0..npts)
            .map(|r| w[r] * (s[r / nt] - lt[r % nt] - h[r]).powi(2))
            .sum()
    };
    let mut history = Vec::new();
    let mut coef = DVector::zeros(curve.n_basis());
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        // (a) common curve through the shifted points
        let rhs = DVector::from_fn(npts, |r, _| (s[r / nt] - lt[r % nt]) / sig[r]);
        coef = &pinv * rhs;
        let mut h = &design * &coef;
        history.push(objective(&s, &h));
        // (b) shifts against the curve
        let mut new_s = vec![0.0; nk];
        for i in 0..nk {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..nt {
                let r = i * nt + j;
                num += w[r] * (lt[j] + h[r]);
                den += w[r];
            }
            new_s[i] = num / den;
        }
        history.push(objective(&new_s, &h));
        let c = new_s.iter().sum::<f64>() / nk as f64;
        new_s.iter_mut().for_each(|v| *v -= c);
        coef.iter_mut().for_each(|v| *v -= c);
        h.iter_mut().for_each(|v| *v -= c);
        let range = new_s.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - new_s.iter().cloned().fold(f64::INFINITY, f64::min);
        let change = new_s
            .iter()
            .zip(&s)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        s = new_s;
        if change <= opts.tol * range.max(1.0) {
            converged = true;
            break;
        }
    }
    curve.coefs = coef.iter().copied().collect();

    // Effective variance of x from σ(ln Λ): second-order delta method.
    let mut chi2 = 0.0;
    let mut inv_var_sum = vec![0.0; nk];
    let (mut num, mut den) = (0.0, 0.0);
    for r in 0..npts {
        let i = r / nt;
        let d1 = curve.deriv(y[r]);
        let d2 = curve.deriv2(y[r]);
        let var = (d1 * sig[r]).powi(2) + 0.5 * (d2 * sig[r] * sig[r]).powi(2);
        let resid = s[i] - lt[r % nt] - curve.eval(y[r]);
        chi2 += resid * resid / var;
        inv_var_sum[i] += 1.0 / var;
        num += w[r] * resid * resid;
        den += w[r];
    }
    let n_par = curve.n_basis() + nk - 1;
    let dof = npts.saturating_sub(n_par);
    Ok(CollapseResult {
        k: data.k.clone(),
        ln_xi: s,
        ln_xi_err: inv_var_sum.iter().map(|v| 1.0 / v.sqrt()).collect(),
        curve,
        chi2,
        dof,
        reduced_chi2: if dof > 0 { chi2 / dof as f64 } else { f64::NAN },
        residual_variance: num / den,
        objective_history: history,
        iterations,
        converged,
    })
}

/// Late-time log-slope of `Λ` accepted as saturated (localized).
pub const LOCALIZED_SLOPE: f64 = -2.0 / 3.0;
pub const LOCALIZED_SLOPE_TOL: f64 = 0.05;

/// Fixes the global shift so that the localized branch follows
/// `Λ = 2 (xi t^(-1/3))^2`, i.e. `xi` equals the localization length, using
/// the late-time points (last third of the times) of the reference K values.
pub fn normalize_xi(
    result: &CollapseResult,
    data: &ScalingDataset,
    localized_k: &[f64],
) -> Result<CollapseResult> {
    if localized_k.is_empty() {
        return Err(invalid("no reference K values"));
    }
    let late0 = data.n_t() - (data.n_t() / 3).max(3).min(data.n_t());
    let (mut num, mut den) = (0.0, 0.0);
    for &kref in localized_k {
        let i = data
            .k
            .iter()
            .position(|k| (k - kref).abs() <= 1e-9 * (1.0 + kref.abs()))
            .ok_or_else(|| invalid(format!("reference K = {kref} not in the dataset")))?;
        let x: Vec<f64> = data.t[late0..].iter().map(|t| t.ln()).collect();
        let yv: Vec<f64> = data.ln_lambda[i][late0..].to_vec();
        let sg: Vec<f64> = data.sigma[i][late0..].to_vec();
        let slope = line_fit(&x, &yv, Some(&sg))?.slope;
        if (slope - LOCALIZED_SLOPE).abs() > LOCALIZED_SLOPE_TOL {
            return Err(invalid(format!(
                "K = {kref} is not saturated: late log-slope of Λ is {slope:.3}"
            )));
        }
        let ri = result
            .k
            .iter()
            .position(|k| (k - kref).abs() <= 1e-9 * (1.0 + kref.abs()))
            .ok_or_else(|| invalid("collapse and dataset K values differ"))?;
        for j in late0..data.n_t() {
            let wgt = 1.0 / (0.5 * data.sigma[i][j]).powi(2);
            let target = 0.5 * (data.ln_lambda[i][j] - 2f64.ln());
            let current = result.ln_xi[ri] - data.t[j].ln() / 3.0;
            num += wgt * (target - current);
            den += wgt;
        }
    }
    Ok(result.with_gauge_shift(num / den))
}
