use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::ScalingDataset;
use crate::error::{invalid, Error, Result};
use crate::optimize::{levenberg_marquardt, LmOptions};

/// Expansion orders of the finite-time scaling function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingOrders {
    /// Powers of the relevant variable.
    pub n_r: usize,
    /// Powers of the irrelevant variable.
    pub n_i: usize,
    /// Powers of `w` inside the relevant variable.
    pub m_r: usize,
}

impl Default for ScalingOrders {
    fn default() -> Self {
        Self {
            n_r: 3,
            n_i: 1,
            m_r: 2,
        }
    }
}

impl ScalingOrders {
    fn n_linear(&self) -> usize {
        (self.n_r + 1) * (self.n_i + 1)
    }

    fn n_nonlinear(&self) -> usize {
        2 + usize::from(self.n_i > 0) + self.m_r.saturating_sub(1)
    }

    pub fn n_params(&self) -> usize {
        self.n_linear() + self.n_nonlinear()
    }

    fn validate(&self) -> Result<()> {
        if self.n_r == 0 || self.m_r == 0 {
            return Err(invalid("n_R and m_R must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalCi {
    pub kc: Interval,
    pub nu: Interval,
    pub ln_lambda_c: Interval,
    pub y: Option<Interval>,
    pub n_resamples: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalFit {
    pub orders: ScalingOrders,
    pub kc: f64,
    pub kc_err: f64,
    pub nu: f64,
    pub nu_err: f64,
    pub ln_lambda_c: f64,
    pub ln_lambda_c_err: f64,
    /// Irrelevant exponent; absent when `n_I = 0`.
    pub y: Option<f64>,
    pub y_err: Option<f64>,
    /// `b_1 ..= b_{m_R}` with `b_1 = 1`.
    pub b: Vec<f64>,
    /// `f[n][j]` multiplies `u_r^n u_i^j`.
    pub f: Vec<Vec<f64>>,
    pub chi2: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    pub k_window: (f64, f64),
    pub t_window: (f64, f64),
    pub ci: Option<CriticalCi>,
}

/// Nonlinear parameters `[Kc, nu, (y), b_2..]`.
fn unpack<'a>(orders: &ScalingOrders, theta: &'a [f64]) -> (f64, f64, Option<f64>, &'a [f64]) {
    let (y, rest) = if orders.n_i > 0 {
        (Some(theta[2]), &theta[3..])
    } else {
        (None, &theta[2..])
    };
    (theta[0], theta[1], y, rest)
}

fn variables(k: f64, t: f64, kc: f64, nu: f64, y: Option<f64>, b_hi: &[f64]) -> (f64, f64) {
    let w = (k - kc) / kc;
    let mut poly = w;
    let mut wk = w;
    for b in b_hi {
        wk *= w;
        poly += b * wk;
    }
    let ur = poly * t.powf(1.0 / (3.0 * nu));
    let ui = y.map_or(0.0, |y| t.powf(-y / 3.0));
    (ur, ui)
}

fn basis_row(orders: &ScalingOrders, ur: f64, ui: f64, out: &mut [f64]) {
    let mut c = 0;
    let mut urn = 1.0;
    for _ in 0..=orders.n_r {
        let mut uij = 1.0;
        for _ in 0..=orders.n_i {
            out[c] = urn * uij;
            uij *= ui;
            c += 1;
        }
        urn *= ur;
    }
}

struct Problem<'a> {
    data: &'a ScalingDataset,
    orders: ScalingOrders,
}

impl Problem<'_> {
    fn valid(&self, theta: &[f64]) -> bool {
        let (kc, nu, y, b) = unpack(&self.orders, theta);
        kc > 0.0
            && nu > 0.05
            && nu < 20.0
            && y.map_or(true, |y| y > 0.0 && y < 30.0)
            && b.iter().all(|v| v.is_finite())
    }

    fn design(&self, theta: &[f64]) -> DMatrix<f64> {
        let (kc, nu, y, b) = unpack(&self.orders, theta);
        let nl = self.orders.n_linear();
        let d = self.data;
        let mut a = DMatrix::zeros(d.n_points(), nl);
        let mut row = vec![0.0; nl];
        for i in 0..d.n_k() {
            for j in 0..d.n_t() {
                let (ur, ui) = variables(d.k[i], d.t[j], kc, nu, y, b);
                basis_row(&self.orders, ur, ui, &mut row);
                let r = i * d.n_t() + j;
                let s = d.sigma[i][j];
                for c in 0..nl {
                    a[(r, c)] = row[c] / s;
                }
            }
        }
        a
    }

    fn rhs(&self) -> DVector<f64> {
        let d = self.data;
        DVector::from_iterator(
            d.n_points(),
            (0..d.n_k()).flat_map(|i| (0..d.n_t()).map(move |j| d.ln_lambda[i][j] / d.sigma[i][j])),
        )
    }

    /// Best linear coefficients for fixed nonlinear ones and the weighted
    /// residuals.
    fn project(&self, theta: &[f64], rhs: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        if !self.valid(theta) {
            return None;
        }
        let a = self.design(theta);
        if a.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let coef = a.clone().svd(true, true).solve(rhs, 1e-13).ok()?;
        let r = &a * &coef - rhs;
        Some((coef, r))
    }

    fn full_residuals(&self, p: &[f64], rhs: &DVector<f64>) -> Option<Vec<f64>> {
        let nn = self.orders.n_nonlinear();
        if !self.valid(&p[..nn]) {
            return None;
        }
        let a = self.design(&p[..nn]);
        let f = DVector::from_column_slice(&p[nn..]);
        let r = a * f - rhs;
        r.iter()
            .all(|v| v.is_finite())
            .then(|| r.iter().copied().collect())
    }
}

fn check_window(data: &ScalingDataset, orders: &ScalingOrders) -> Result<()> {
    orders.validate()?;
    if data.n_points() <= orders.n_params() {
        return Err(Error::RankDeficient(format!(
            "{} parameters for {} data points",
            orders.n_params(),
            data.n_points()
        )));
    }
    if data.t[data.n_t() - 1] / data.t[0] < 100.0 * (1.0 - 1e-9) {
        return Err(Error::InsufficientData(
            "full fit needs t_max / t_min >= 100".into(),
        ));
    }
    if data.n_k() < 3 {
        return Err(Error::InsufficientData(
            "full fit needs at least three K values".into(),
        ));
    }
    Ok(())
}

fn starts(data: &ScalingDataset, orders: &ScalingOrders) -> Vec<Vec<f64>> {
    let (kmin, kmax) = (data.k[0], data.k[data.n_k() - 1]);
    let ys: &[f64] = if orders.n_i > 0 {
        &[0.3, 0.7, 1.5]
    } else {
        &[f64::NAN]
    };
    let mut out = Vec::new();
    for a in 0..5 {
        let kc = kmin + (kmax - kmin) * (0.25 + 0.125 * a as f64);
        for nu in [1.0, 1.3, 1.6, 2.0] {
            for &y in ys {
                let mut th = vec![kc, nu];
                if orders.n_i > 0 {
                    th.push(y);
                }
                th.extend(std::iter::repeat(0.0).take(orders.m_r - 1));
                out.push(th);
            }
        }
    }
    out
}

fn fit_from(
    data: &ScalingDataset,
    orders: ScalingOrders,
    starts: &[Vec<f64>],
) -> Result<CriticalFit> {
    check_window(data, &orders)?;
    let prob = Problem { data, orders };
    let rhs = prob.rhs();
    let vp = |th: &[f64]| {
        prob.project(th, &rhs)
            .map(|(_, r)| r.iter().copied().collect::<Vec<f64>>())
    };
    let results: Vec<Option<crate::optimize::LmResult>> = starts
        .par_iter()
        .map(|s| levenberg_marquardt(vp, s, &LmOptions::default()).ok())
        .collect();
    let best = results
        .into_iter()
        .flatten()
        .filter(|r| r.chi2.is_finite())
        .min_by(|a, b| a.chi2.total_cmp(&b.chi2))
        .ok_or_else(|| Error::NonConvergence("full scaling fit failed from every start".into()))?;
    let (coef, _) = prob
        .project(&best.params, &rhs)
        .ok_or_else(|| Error::NonConvergence("projection failed".into()))?;

    // Polish jointly so the covariance includes the linear coefficients.
    let mut p0 = best.params.clone();
    p0.extend(coef.iter());
    let full = levenberg_marquardt(|p| prob.full_residuals(p, &rhs), &p0, &LmOptions::default())?;
    let nn = orders.n_nonlinear();
    let p = &full.params;
    let err = |i: usize| full.std_err(i);
    let (kc, nu, y, b_hi) = unpack(&orders, &p[..nn]);
    let mut b = vec![1.0];
    b.extend_from_slice(b_hi);
    let lin = &p[nn..];
    let f: Vec<Vec<f64>> = (0..=orders.n_r)
        .map(|n| lin[n * (orders.n_i + 1)..(n + 1) * (orders.n_i + 1)].to_vec())
        .collect();
    let dof = data.n_points() - orders.n_params();
    Ok(CriticalFit {
        orders,
        kc,
        kc_err: err(0),
        nu,
        nu_err: err(1),
        ln_lambda_c: f[0][0],
        ln_lambda_c_err: err(nn),
        y,
        y_err: y.map(|_| err(2)),
        b,
        f,
        chi2: full.chi2,
        dof,
        reduced_chi2: full.chi2 / dof as f64,
        k_window: (data.k[0], data.k[data.n_k() - 1]),
        t_window: (data.t[0], data.t[data.n_t() - 1]),
        ci: None,
    })
}

/// Weighted least-squares fit of `ln Λ(K, t)` to a double expansion in the
/// relevant variable `u_r = (w + b_2 w^2 + ..) t^(1/(3 nu))`,
/// `w = (K - Kc) / Kc`, and the irrelevant variable `u_i = t^(-y/3)`.
///
/// The linear coefficients are eliminated by projection inside a multi-start
/// damped Gauss-Newton search over the nonlinear ones; a final joint
/// refinement provides the covariance.
pub fn fit_full_scaling(data: &ScalingDataset, orders: ScalingOrders) -> Result<CriticalFit> {
    check_window(data, &orders)?;
    fit_from(data, orders, &starts(data, &orders))
}

/// Single-start refit from a previous solution (bootstrap resamples).
pub fn refit_full_scaling(data: &ScalingDataset, previous: &CriticalFit) -> Result<CriticalFit> {
    fit_from(data, previous.orders, &[previous.theta()])
}

impl CriticalFit {
    fn theta(&self) -> Vec<f64> {
        let mut th = vec![self.kc, self.nu];
        if let Some(y) = self.y {
            th.push(y);
        }
        th.extend_from_slice(&self.b[1..]);
        th
    }

    /// `(u_r, u_i)` at `(K, t)`.
    pub fn scaling_variables(&self, k: f64, t: f64) -> (f64, f64) {
        variables(k, t, self.kc, self.nu, self.y, &self.b[1..])
    }

    pub fn predict(&self, k: f64, t: f64) -> f64 {
        let (ur, ui) = self.scaling_variables(k, t);
        let mut row = vec![0.0; self.orders.n_linear()];
        basis_row(&self.orders, ur, ui, &mut row);
        row.iter()
            .zip(self.f.iter().flatten())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Data with the irrelevant-variable terms removed, `ln Λ_s[i][j]`.
    pub fn corrected(&self, data: &ScalingDataset) -> Vec<Vec<f64>> {
        (0..data.n_k())
            .map(|i| {
                (0..data.n_t())
                    .map(|j| {
                        let (ur, ui) = self.scaling_variables(data.k[i], data.t[j]);
                        let mut irr = 0.0;
                        for (n, row) in self.f.iter().enumerate() {
                            for (jj, c) in row.iter().enumerate().skip(1) {
                                irr += c * ur.powi(n as i32) * ui.powi(jj as i32);
                            }
                        }
                        data.ln_lambda[i][j] - irr
                    })
                    .collect()
            })
            .collect()
    }

    /// χ² of this model on another dataset.
    pub fn chi2_on(&self, data: &ScalingDataset) -> f64 {
        let mut c = 0.0;
        for i in 0..data.n_k() {
            for j in 0..data.n_t() {
                let r =
                    (self.predict(data.k[i], data.t[j]) - data.ln_lambda[i][j]) / data.sigma[i][j];
                c += r * r;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderVariant {
    pub orders: ScalingOrders,
    pub nu: Option<f64>,
    pub nu_err: Option<f64>,
    pub reduced_chi2: Option<f64>,
    pub error: Option<String>,
}

/// Refits with each order changed by one in turn; stability of `nu` across
/// these is the reported robustness diagnostic.
pub fn order_robustness(data: &ScalingDataset, base: ScalingOrders) -> Vec<OrderVariant> {
    let mut variants = vec![base];
    for (dn, di, dm) in [
        (1i64, 0i64, 0i64),
        (-1, 0, 0),
        (0, 1, 0),
        (0, -1, 0),
        (0, 0, 1),
        (0, 0, -1),
    ] {
        let n = base.n_r as i64 + dn;
        let i = base.n_i as i64 + di;
        let m = base.m_r as i64 + dm;
        if n >= 1 && i >= 0 && m >= 1 {
            variants.push(ScalingOrders {
                n_r: n as usize,
                n_i: i as usize,
                m_r: m as usize,
            });
        }
    }
    variants
        .into_iter()
        .map(|o| match fit_full_scaling(data, o) {
            Ok(f) => OrderVariant {
                orders: o,
                nu: Some(f.nu),
                nu_err: Some(f.nu_err),
                reduced_chi2: Some(f.reduced_chi2),
                error: None,
            },
            Err(e) => OrderVariant {
                orders: o,
                nu: None,
                nu_err: None,
                reduced_chi2: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

/// Synthetic `ln Λ` generated from the fit model itself.
pub fn synthetic_full_dataset(
    truth: &CriticalFit,
    k: &[f64],
    t: &[f64],
    sigma: f64,
    seed: u64,
) -> Result<ScalingDataset> {
    let ln: Vec<Vec<f64>> = k
        .iter()
        .map(|&kk| t.iter().map(|&tt| truth.predict(kk, tt)).collect())
        .collect();
    let clean = ScalingDataset::new(
        k.to_vec(),
        t.to_vec(),
        ln,
        vec![vec![sigma; t.len()]; k.len()],
    )?;
    Ok(clean.perturbed(seed, 1.0))
}
