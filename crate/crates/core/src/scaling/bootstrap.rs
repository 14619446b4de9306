use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::ScalingDataset;
use super::full::{refit_full_scaling, CriticalCi, CriticalFit, Interval};
use crate::error::{invalid, Error, Result};
use crate::stats::quantile_sorted;

pub const MIN_RESAMPLES: usize = 200;
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub n_resamples: usize,
    pub seed: u64,
    /// Multiplies σ when perturbing; 0 reproduces the data exactly.
    pub noise_scale: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            n_resamples: MIN_RESAMPLES,
            seed: 0,
            noise_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Central 68.2% interval per parameter.
    pub intervals: Vec<Interval>,
    pub medians: Vec<f64>,
    pub n_resamples: usize,
    pub failures: usize,
}

impl BootstrapResult {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.n_resamples as f64
    }
}

/// Monte-Carlo bootstrap: every cell of resample `i` is moved by Gaussian
/// noise of width `sigma` drawn from seed `seed ^ i`, and `fit` is applied.
/// `fit` returns the parameter vector of interest.
pub fn bootstrap_ci<F>(
    data: &ScalingDataset,
    opts: &BootstrapOptions,
    fit: F,
) -> Result<BootstrapResult>
where
    F: Fn(&ScalingDataset) -> Result<Vec<f64>> + Sync,
{
    if opts.n_resamples < MIN_RESAMPLES {
        return Err(invalid(format!(
            "at least {MIN_RESAMPLES} resamples are required"
        )));
    }
    let runs: Vec<Option<Vec<f64>>> = (0..opts.n_resamples as u64)
        .into_par_iter()
        .map(|i| fit(&data.perturbed(opts.seed ^ i, opts.noise_scale)).ok())
        .collect();
    let ok: Vec<Vec<f64>> = runs.into_iter().flatten().collect();
    let failures = opts.n_resamples - ok.len();
    if failures as f64 > MAX_FAILURE_FRACTION * opts.n_resamples as f64 {
        return Err(Error::BootstrapFailure {
            failed: failures,
            total: opts.n_resamples,
        });
    }
    let n_par = ok[0].len();
    let mut intervals = Vec::with_capacity(n_par);
    let mut medians = Vec::with_capacity(n_par);
    for p in 0..n_par {
        let mut v: Vec<f64> = ok.iter().map(|r| r[p]).collect();
        v.sort_by(f64::total_cmp);
        intervals.push(Interval {
            lower: quantile_sorted(&v, 0.159),
            upper: quantile_sorted(&v, 0.841),
        });
        medians.push(quantile_sorted(&v, 0.5));
    }
    Ok(BootstrapResult {
        intervals,
        medians,
        n_resamples: opts.n_resamples,
        failures,
    })
}

/// Bootstrap intervals for a full scaling fit; resamples are warm-started
/// from `fit`.
pub fn bootstrap_full_fit(
    data: &ScalingDataset,
    fit: &CriticalFit,
    opts: &BootstrapOptions,
) -> Result<CriticalFit> {
    let res = bootstrap_ci(data, opts, |d| {
        let f = refit_full_scaling(d, fit)?;
        let mut v = vec![f.kc, f.nu, f.ln_lambda_c];
        v.extend(f.y);
        Ok(v)
    })?;
    let mut out = fit.clone();
    out.ci = Some(CriticalCi {
        kc: res.intervals[0].clone(),
        nu: res.intervals[1].clone(),
        ln_lambda_c: res.intervals[2].clone(),
        y: res.intervals.get(3).cloned(),
        n_resamples: res.n_resamples,
        failures: res.failures,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::line_fit;

    fn linear_data(sigma: f64) -> ScalingDataset {
        let k: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let t: Vec<f64> = (0..5).map(|j| 1.0 + j as f64).collect();
        let ln = k
            .iter()
            .map(|&kk| t.iter().map(|_| 0.5 + 2.0 * kk).collect())
            .collect();
        ScalingDataset::new(k, t, ln, vec![vec![sigma; 5]; 6]).unwrap()
    }

    fn slope(d: &ScalingDataset) -> Result<Vec<f64>> {
        let x: Vec<f64> =
            d.k.iter()
                .flat_map(|&k| d.t.iter().map(move |_| k))
                .collect();
        let y: Vec<f64> = d.ln_lambda.iter().flatten().copied().collect();
        let f = line_fit(&x, &y, None)?;
        Ok(vec![f.slope, f.intercept])
    }

    #[test]
    fn zero_noise_gives_zero_width() {
        let opts = BootstrapOptions {
            noise_scale: 0.0,
            ..Default::default()
        };
        let r = bootstrap_ci(&linear_data(0.1), &opts, slope).unwrap();
        for iv in &r.intervals {
            assert!((iv.upper - iv.lower).abs() < 1e-12);
        }
    }

    #[test]
    fn width_scales_with_sigma() {
        let opts = BootstrapOptions {
            n_resamples: 400,
            ..Default::default()
        };
        let a = bootstrap_ci(&linear_data(0.1), &opts, slope).unwrap();
        let b = bootstrap_ci(&linear_data(0.2), &opts, slope).unwrap();
        let wa = a.intervals[0].upper - a.intervals[0].lower;
        let wb = b.intervals[0].upper - b.intervals[0].lower;
        // Same seeds: the perturbations are exactly doubled.
        assert!((wb / wa - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_few_resamples() {
        let opts = BootstrapOptions {
            n_resamples: 50,
            ..Default::default()
        };
        assert!(bootstrap_ci(&linear_data(0.1), &opts, slope).is_err());
    }

    #[test]
    fn aborts_on_failures() {
        let r = bootstrap_ci(&linear_data(0.1), &BootstrapOptions::default(), |_| {
            Err(Error::NonConvergence("x".into()))
        });
        assert!(matches!(
            r,
            Err(Error::BootstrapFailure {
                failed: 200,
                total: 200
            })
        ));
    }
}
