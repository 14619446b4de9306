//! Damped Gauss-Newton (Levenberg-Marquardt) least squares with
//! central-difference Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative finite-difference step.
    pub rel_step: f64,
    /// Stop when an accepted step changes χ² by less than this fraction.
    pub chi2_tol: f64,
    /// Stop when no parameter moves by more than this (relative) amount.
    pub param_tol: f64,
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_step: 1e-6,
            chi2_tol: 1e-10,
            param_tol: 1e-8,
            lambda0: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    pub chi2: f64,
    /// `(J^T J)^-1` at the solution, for residuals already divided by their
    /// standard errors.
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
    pub n_residuals: usize,
}

impl LmResult {
    pub fn std_err(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }
}

fn chi2_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Central-difference Jacobian of `f` at `p`; `None` if any probe point is
/// outside the model domain.
pub fn numeric_jacobian<F>(f: &F, p: &[f64], rel_step: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut cols = Vec::with_capacity(p.len());
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = if p[j] != 0.0 {
            rel_step * p[j].abs()
        } else {
            rel_step
        };
        q[j] = p[j] + h;
        let up = f(&q)?;
        q[j] = p[j] - h;
        let down = f(&q)?;
        q[j] = p[j];
        cols.push(
            up.iter()
                .zip(&down)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<f64>>(),
        );
    }
    let n = cols.first().map_or(0, |c| c.len());
    Some(DMatrix::from_fn(n, p.len(), |i, j| cols[j][i]))
}

/// Minimizes `sum r_i(p)^2`. `residuals` returns `None` outside the model's
/// domain; such trial points are rejected like uphill steps.
pub fn levenberg_marquardt<F>(residuals: F, p0: &[f64], opts: &LmOptions) -> Result<LmResult>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut p = p0.to_vec();
    let mut r = residuals(&p)
        .ok_or_else(|| Error::NonConvergence("initial point outside the model domain".into()))?;
    let mut chi2 = chi2_of(&r);
    if !chi2.is_finite() {
        return Err(Error::NonConvergence("non-finite initial χ²".into()));
    }
    let mut lambda = opts.lambda0;
    let np = p.len();
    for iter in 0..opts.max_iter {
        let jac = numeric_jacobian(&residuals, &p, opts.rel_step)
            .ok_or_else(|| Error::NonConvergence("Jacobian probe left the model domain".into()))?;
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let step = match a.clone().cholesky() {
                Some(c) => c.solve(&(-&g)),
                None => match a.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(rt) = residuals(&trial) {
                let c = chi2_of(&rt);
                if c.is_finite() && c <= chi2 {
                    let rel_chi = (chi2 - c) / chi2.max(1e-300);
                    let rel_par = step
                        .iter()
                        .zip(&p)
                        .map(|(s, v)| s.abs() / (v.abs() + 1e-8))
                        .fold(0.0, f64::max);
                    p = trial;
                    r = rt;
                    chi2 = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel_chi < opts.chi2_tol || rel_par < opts.param_tol {
                        return finish(&residuals, p, r, chi2, iter + 1, opts);
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill direction at machine precision: at a minimum.
            return finish(&residuals, p, r, chi2, iter + 1, opts);
        }
    }
    Err(Error::NonConvergence(format!(
        "no convergence in {} iterations",
        opts.max_iter
    )))
}

fn finish<F>(
    residuals: &F,
    p: Vec<f64>,
    r: Vec<f64>,
    chi2: f64,
    iterations: usize,
    opts: &LmOptions,
) -> Result<LmResult>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let np = p.len();
    let covariance = numeric_jacobian(residuals, &p, opts.rel_step)
        .and_then(|j| (j.transpose() * j).try_inverse())
        .unwrap_or_else(|| DMatrix::from_element(np, np, f64::NAN));
    Ok(LmResult {
        params: p,
        chi2,
        covariance,
        iterations,
        n_residuals: r.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.5 * (-0.7 * v).exp() + 0.3).collect();
        let f = |p: &[f64]| {
            Some(
                x.iter()
                    .zip(&y)
                    .map(|(xi, yi)| p[0] * (-p[1] * xi).exp() + p[2] - yi)
                    .collect(),
            )
        };
        let r = levenberg_marquardt(f, &[1.0, 0.2, 0.0], &LmOptions::default()).unwrap();
        assert!((r.params[0] - 2.5).abs() < 1e-6);
        assert!((r.params[1] - 0.7).abs() < 1e-6);
        assert!((r.params[2] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn rosenbrock() {
        let f = |p: &[f64]| Some(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]);
        let r = levenberg_marquardt(f, &[-1.2, 1.0], &LmOptions::default()).unwrap();
        assert!((r.params[0] - 1.0).abs() < 1e-5 && (r.params[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn domain_violation_at_start() {
        let f = |_: &[f64]| None;
        assert!(levenberg_marquardt(f, &[1.0], &LmOptions::default()).is_err());
    }
}
