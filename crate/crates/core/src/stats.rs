//! Small statistics toolbox: weighted least squares, sample moments,
//! quantiles and the one-sample Kolmogorov-Smirnov test.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample mean and standard error of the mean.
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Mean and standard error from running sums over `n` samples.
pub fn mean_sem_from_sums(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let nf = n as f64;
    let mean = sum / nf;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Linearly interpolated quantile of already sorted data, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Weighted linear least-squares solution.
#[derive(Debug, Clone)]
pub struct LstsqFit {
    pub coefficients: Vec<f64>,
    /// Covariance of the coefficients assuming the supplied errors are exact.
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub dof: usize,
}

impl LstsqFit {
    pub fn std_err(&self, i: usize) -> f64 {
        self.covariance[(i, i)].sqrt()
    }

    pub fn reduced_chi2(&self) -> f64 {
        if self.dof == 0 {
            f64::NAN
        } else {
            self.chi2 / self.dof as f64
        }
    }
}

/// Solves `min sum_i ((y_i - sum_j A_ij c_j) / sigma_i)^2` for the row-major
/// design `rows`. `sigma = None` means unit errors.
pub fn weighted_lstsq(rows: &[Vec<f64>], y: &[f64], sigma: Option<&[f64]>) -> Result<LstsqFit> {
    let n = rows.len();
    if n == 0 || n != y.len() {
        return Err(Error::InsufficientData(
            "empty or mismatched least-squares system".into(),
        ));
    }
    let p = rows[0].len();
    if n < p {
        return Err(Error::RankDeficient(format!(
            "{n} equations for {p} unknowns"
        )));
    }
    let mut a = DMatrix::<f64>::zeros(n, p);
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        let w = match sigma {
            Some(s) => {
                if !(s[i] > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "non-positive error {}",
                        s[i]
                    )));
                }
                1.0 / s[i]
            }
            None => 1.0,
        };
        for j in 0..p {
            a[(i, j)] = rows[i][j] * w;
        }
        b[i] = y[i] * w;
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 || svd.singular_values.min() <= smax * 1e-13 {
        return Err(Error::RankDeficient("design matrix is singular".into()));
    }
    let coef = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    let resid = &a * &coef - &b;
    let ata = a.transpose() * &a;
    let covariance = ata
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("normal matrix not invertible".into()))?;
    Ok(LstsqFit {
        coefficients: coef.iter().copied().collect(),
        covariance,
        chi2: resid.norm_squared(),
        dof: n - p,
    })
}

/// Straight-line fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_err: f64,
    pub intercept_err: f64,
    pub chi2: f64,
    pub dof: usize,
}

impl LineFit {
    pub fn reduced_chi2(&self) -> f64 {
        if self.dof == 0 {
            f64::NAN
        } else {
            self.chi2 / self.dof as f64
        }
    }
}

pub fn line_fit(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<LineFit> {
    if x.len() < 2 {
        return Err(Error::InsufficientData(
            "a line needs at least two points".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = x.iter().map(|&xi| vec![1.0, xi]).collect();
    let fit = weighted_lstsq(&rows, y, sigma)?;
    Ok(LineFit {
        intercept: fit.coefficients[0],
        slope: fit.coefficients[1],
        intercept_err: fit.std_err(0),
        slope_err: fit.std_err(1),
        chi2: fit.chi2,
        dof: fit.dof,
    })
}

/// Kolmogorov-Smirnov statistic and asymptotic p-value of `samples` against
/// the continuous distribution function `cdf`.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f);
    }
    let sqrt_n = n.sqrt();
    (d, kolmogorov_q((sqrt_n + 0.12 + 0.11 / sqrt_n) * d))
}

/// Complementary Kolmogorov distribution `Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
