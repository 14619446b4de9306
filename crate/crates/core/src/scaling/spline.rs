use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, weighted_lstsq};

/// Clamped cubic B-spline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicSpline {
    /// Extended knot vector (boundary knots repeated four times).
    pub knots: Vec<f64>,
    pub coefs: Vec<f64>,
}

const DEGREE: usize = 3;

impl CubicSpline {
    /// Spline with breakpoints `breaks` (sorted, distinct) and zero coefficients.
    pub fn with_breaks(breaks: &[f64]) -> Self {
        let mut knots = vec![breaks[0]; DEGREE];
        knots.extend_from_slice(breaks);
        knots.extend(std::iter::repeat(*breaks.last().unwrap()).take(DEGREE));
        let n = breaks.len() + DEGREE - 1;
        Self {
            knots,
            coefs: vec![0.0; n],
        }
    }

    pub fn n_basis(&self) -> usize {
        self.coefs.len()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    fn span(&self, x: f64) -> usize {
        let n = self.n_basis();
        // Last span is closed on the right.
        if x >= self.knots[n] {
            return n - 1;
        }
        let mut lo = DEGREE;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// The four nonzero basis values at `x` and the index of the first.
    pub fn basis(&self, x: f64) -> (usize, [f64; 4]) {
        let (a, b) = self.domain();
        let x = x.clamp(a, b);
        let i = self.span(x);
        let t = &self.knots;
        let mut n = [0.0; 4];
        let mut left = [0.0; 4];
        let mut right = [0.0; 4];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - t[i + 1 - j];
            right[j] = t[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let tmp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        (i - DEGREE, n)
    }

    /// Full row of basis values at `x`.
    pub fn basis_row(&self, x: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.n_basis()];
        let (first, b) = self.basis(x);
        row[first..first + 4].copy_from_slice(&b);
        row
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (first, b) = self.basis(x);
        (0..4).map(|k| b[k] * self.coefs[first + k]).sum()
    }

    /// First derivative by central differences of the piecewise polynomial;
    /// exact for cubics up to rounding.
    pub fn deriv(&self, x: f64) -> f64 {
        let (a, b) = self.domain();
        let h = 1e-5 * (b - a).max(1e-12);
        let lo = (x - h).max(a);
        let hi = (x + h).min(b);
        (self.eval(hi) - self.eval(lo)) / (hi - lo)
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        let (a, b) = self.domain();
        let h = 1e-3 * (b - a).max(1e-12);
        let c = x.clamp(a + h, b - h);
        (self.eval(c + h) - 2.0 * self.eval(c) + self.eval(c - h)) / (h * h)
    }

    /// Adds a constant; B-splines form a partition of unity.
    pub fn shift(&mut self, c: f64) {
        self.coefs.iter_mut().for_each(|v| *v += c);
    }
}

/// Breakpoints at equally spaced quantiles of `x`, duplicates removed.
pub fn quantile_breaks(x: &[f64], n_breaks: usize) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = (0..n_breaks)
        .map(|i| quantile_sorted(&s, i as f64 / (n_breaks - 1) as f64))
        .collect();
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    out
}

/// Weighted least-squares cubic spline through `(x, y)`.
pub fn fit_spline(x: &[f64], y: &[f64], sigma: &[f64], n_breaks: usize) -> Result<CubicSpline> {
    let mut breaks = quantile_breaks(x, n_breaks.max(2));
    loop {
        if breaks.len() < 2 {
            return Err(Error::InsufficientData(
                "spline needs a non-degenerate abscissa".into(),
            ));
        }
        let mut sp = CubicSpline::with_breaks(&breaks);
        let rows: Vec<Vec<f64>> = x.iter().map(|&v| sp.basis_row(v)).collect();
        match weighted_lstsq(&rows, y, Some(sigma)) {
            Ok(fit) => {
                sp.coefs = fit.coefficients;
                return Ok(sp);
            }
            Err(Error::RankDeficient(_)) => {
                // Thin the breakpoints and retry.
                let keep: Vec<f64> = breaks
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % 2 == 0 || *i == breaks.len() - 1)
                    .map(|(_, v)| *v)
                    .collect();
                if keep.len() == breaks.len() {
                    return Err(Error::RankDeficient("spline design".into()));
                }
                breaks = keep;
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity() {
        let sp = CubicSpline::with_breaks(&[0.0, 0.3, 1.0, 1.5, 3.0]);
        for i in 0..=100 {
            let x = 3.0 * i as f64 / 100.0;
            let (_, b) = sp.basis(x);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn reproduces_cubic() {
        let x: Vec<f64> = (0..200).map(|i| -2.0 + 4.0 * i as f64 / 199.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v * v - 2.0 * v + 1.0).collect();
        let sp = fit_spline(&x, &y, &vec![1.0; x.len()], 8).unwrap();
        for v in [-1.7, -0.2, 0.9, 1.99] {
            assert!((sp.eval(v) - (v * v * v - 2.0 * v + 1.0)).abs() < 1e-9);
            assert!((sp.deriv(v) - (3.0 * v * v - 2.0)).abs() < 1e-6);
            assert!((sp.deriv2(v) - 6.0 * v).abs() < 1e-3);
        }
    }
}
