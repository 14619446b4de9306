//! Ensemble observables and the fits built on them: zero-velocity population,
//! exponential localization, anomalous diffusion and the scaling variable Λ.

use serde::{Deserialize, Serialize};

use crate::classical::{classical_diffusion_constant, ClassicalEnsembleSpec};
use crate::error::{invalid, Error, Result};
use crate::model::RotorParams;
use crate::stats::{line_fit, weighted_lstsq};

/// Origin of an [`EnsembleSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    #[default]
    Quantum,
    Classical,
}

/// Probability mass over equal-width momentum bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumDistribution {
    pub bin_width: f64,
    /// Center of bin 0.
    pub first_center: f64,
    /// Probability mass per bin.
    pub mass: Vec<f64>,
    /// Standard error of each bin mass, when known.
    pub mass_sem: Option<Vec<f64>>,
}

impl MomentumDistribution {
    pub fn center(&self, i: usize) -> f64 {
        self.first_center + i as f64 * self.bin_width
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.mass.len()).map(|i| self.center(i)).collect()
    }

    pub fn density(&self, i: usize) -> f64 {
        self.mass[i] / self.bin_width
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Bins a density by integrating it over each bin with Simpson's rule.
    pub fn from_density(
        density: impl Fn(f64) -> f64,
        bin_width: f64,
        first_center: f64,
        n_bins: usize,
    ) -> Self {
        let mass = (0..n_bins)
            .map(|i| {
                let c = first_center + i as f64 * bin_width;
                simpson(&density, c - 0.5 * bin_width, c + 0.5 * bin_width, 64)
            })
            .collect();
        Self {
            bin_width,
            first_center,
            mass,
            mass_sem: None,
        }
    }

    /// Mean and excess kurtosis of the binned distribution (bin centers).
    pub fn moments(&self) -> (f64, f64, f64) {
        let total = self.total_mass();
        let mean = self
            .mass
            .iter()
            .enumerate()
            .map(|(i, m)| m * self.center(i))
            .sum::<f64>()
            / total;
        let (mut m2, mut m4) = (0.0, 0.0);
        for (i, m) in self.mass.iter().enumerate() {
            let d = self.center(i) - mean;
            m2 += m * d * d;
            m4 += m * d.powi(4);
        }
        m2 /= total;
        m4 /= total;
        (mean, m2, m4 / (m2 * m2) - 3.0)
    }
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Ensemble averages at a sequence of record times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSeries {
    pub params: RotorParams,
    pub times: Vec<u64>,
    pub p2_mean: Vec<f64>,
    pub p2_sem: Vec<f64>,
    pub pi0: Option<Vec<f64>>,
    pub pi0_sem: Option<Vec<f64>>,
    pub distributions: Vec<(u64, MomentumDistribution)>,
    pub n_traj: usize,
    /// Trajectories that remained grid-saturated.
    pub saturated_trajectories: Vec<usize>,
    pub max_grid_n: usize,
    pub source: Source,
}

impl EnsembleSeries {
    pub fn is_saturated(&self) -> bool {
        !self.saturated_trajectories.is_empty()
    }

    pub fn distribution_at(&self, t: u64) -> Option<&MomentumDistribution> {
        self.distributions
            .iter()
            .find(|(tt, _)| *tt == t)
            .map(|(_, d)| d)
    }

    /// Indices of record times inside `[t_lo, t_hi]`.
    fn window_indices(&self, t_lo: u64, t_hi: u64) -> Vec<usize> {
        self.times
            .iter()
            .enumerate()
            .filter(|(_, t)| **t >= t_lo && **t <= t_hi)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Default half-width of the zero-velocity window, in 𝔭 units.
pub const PI0_WINDOW: f64 = 0.5;

/// Density estimate at `𝔭 = 0`: probability in `|𝔭| <= w` divided by `2w`.
/// Bins straddling the window edge contribute their overlapping fraction.
pub fn pi0(distribution: &MomentumDistribution, window_halfwidth: f64) -> Result<f64> {
    if !(window_halfwidth > 0.0) {
        return Err(invalid("window half-width must be positive"));
    }
    if 2.0 * window_halfwidth < distribution.bin_width * (1.0 - 1e-12) {
        return Err(invalid(format!(
            "window {} narrower than one bin of width {}",
            2.0 * window_halfwidth,
            distribution.bin_width
        )));
    }
    let h = 0.5 * distribution.bin_width;
    let mut mass = 0.0;
    for (i, m) in distribution.mass.iter().enumerate() {
        let c = distribution.center(i);
        let overlap = ((c + h).min(window_halfwidth) - (c - h).max(-window_halfwidth)).max(0.0);
        mass += m * overlap / distribution.bin_width;
    }
    Ok(mass / (2.0 * window_halfwidth))
}

/// Fit-report record shared by every fitting operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub kind: String,
    pub window: (f64, f64),
    pub estimate: f64,
    pub std_err: f64,
    pub reduced_chi2: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationFit {
    pub ell: f64,
    pub ell_err: f64,
    pub fit_window: (f64, f64),
    pub reduced_chi2: f64,
}

impl LocalizationFit {
    pub fn report(&self) -> FitReport {
        FitReport {
            kind: "exponential-localization".into(),
            window: self.fit_window,
            estimate: self.ell,
            std_err: self.ell_err,
            reduced_chi2: self.reduced_chi2,
            flags: Vec::new(),
        }
    }
}

/// Options for [`fit_exponential_localization`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationFitOptions {
    /// Inner edge of the fit window, as distance from the mean 𝔭.
    pub p_min: f64,
    /// Bins count as signal while their density exceeds this multiple of the
    /// noise floor.
    pub floor_factor: f64,
    /// Relative density error assumed when the distribution carries no errors.
    pub relative_error: f64,
    /// Largest acceptable reduced χ².
    pub max_reduced_chi2: f64,
}

impl Default for LocalizationFitOptions {
    fn default() -> Self {
        Self {
            p_min: 2.0,
            floor_factor: 10.0,
            relative_error: 0.01,
            max_reduced_chi2: 5.0,
        }
    }
}

/// Weighted linear fit of `ln density` against `|𝔭|`; `ell = -1 / slope`.
pub fn fit_exponential_localization(
    distribution: &MomentumDistribution,
) -> Result<LocalizationFit> {
    fit_exponential_localization_with(distribution, &LocalizationFitOptions::default())
}

pub fn fit_exponential_localization_with(
    distribution: &MomentumDistribution,
    opts: &LocalizationFitOptions,
) -> Result<LocalizationFit> {
    let n = distribution.mass.len();
    let peak = (0..n).map(|i| distribution.density(i)).fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::InsufficientData("empty distribution".into()));
    }
    let sem = distribution.mass_sem.as_deref();
    let center = distribution.moments().0;
    // Noise floor of bin i: its standard error when known, numerical
    // round-off otherwise.
    let round_off = 1e-13 * peak;
    let signal = |i: usize| {
        let d = distribution.density(i);
        let floor = match sem {
            Some(s) => (s[i] / distribution.bin_width).max(round_off),
            None => round_off,
        };
        d > opts.floor_factor * floor
    };

    // Distances are taken from the mean, where the ensemble is centred.
    // Tail edge: first distance beyond p_min where either side drops to the floor.
    let mut p_tail = f64::INFINITY;
    for i in 0..n {
        let c = (distribution.center(i) - center).abs();
        if c >= opts.p_min && !signal(i) {
            p_tail = p_tail.min(c);
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut sig = Vec::new();
    for i in 0..n {
        let c = (distribution.center(i) - center).abs();
        let d = distribution.density(i);
        if c >= opts.p_min && c < p_tail && signal(i) {
            xs.push(c);
            ys.push(d.ln());
            let rel = match sem {
                Some(s) => (s[i] / distribution.mass[i]).max(1e-12),
                None => opts.relative_error,
            };
            sig.push(rel);
        }
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable bins in the tail",
            xs.len()
        )));
    }
    let fit = line_fit(&xs, &ys, Some(&sig))?;
    let reduced = fit.reduced_chi2();
    let window = (opts.p_min, xs.iter().copied().fold(0.0, f64::max));
    if !(fit.slope < 0.0) || reduced > opts.max_reduced_chi2 {
        return Err(Error::NonExponential {
            reduced_chi2: reduced,
        });
    }
    let ell = -1.0 / fit.slope;
    Ok(LocalizationFit {
        ell,
        ell_err: fit.slope_err / (fit.slope * fit.slope),
        fit_window: window,
        reduced_chi2: reduced,
    })
}

/// Gaussianity test of a binned distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianCheck {
    pub variance: f64,
    pub excess_kurtosis: f64,
    pub accepted: bool,
}

/// Accepts a distribution as Gaussian when `|excess kurtosis| < tolerance`.
pub fn gaussian_check(distribution: &MomentumDistribution, tolerance: f64) -> GaussianCheck {
    let (_, var, kurt) = distribution.moments();
    GaussianCheck {
        variance: var,
        excess_kurtosis: kurt,
        accepted: kurt.abs() < tolerance,
    }
}

/// One point of a Λ series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub t: u64,
    pub lambda: f64,
    pub sigma: f64,
}

/// `Λ(t) = <𝔭^2> t^(-2/3)` with propagated error.
pub fn lambda_series(series: &EnsembleSeries) -> Result<Vec<LambdaPoint>> {
    series
        .times
        .iter()
        .zip(series.p2_mean.iter().zip(&series.p2_sem))
        .map(|(&t, (&p2, &e))| {
            if t == 0 {
                return Err(invalid("Λ needs t > 0"));
            }
            let f = (t as f64).powf(-2.0 / 3.0);
            Ok(LambdaPoint {
                t,
                lambda: p2 * f,
                sigma: e * f,
            })
        })
        .collect()
}

/// `Λ(t) = 1 / (Π0^2 t^(2/3))`, the variant built from the zero-velocity
/// population.
pub fn lambda_series_pi0(series: &EnsembleSeries) -> Result<Vec<LambdaPoint>> {
    let pi0 = series
        .pi0
        .as_ref()
        .ok_or_else(|| Error::InsufficientData("series has no Π0 record".into()))?;
    let zero = vec![0.0; pi0.len()];
    let sem = series.pi0_sem.as_ref().unwrap_or(&zero);
    series
        .times
        .iter()
        .zip(pi0.iter().zip(sem))
        .map(|(&t, (&p, &e))| {
            if t == 0 {
                return Err(invalid("Λ needs t > 0"));
            }
            let lambda = 1.0 / (p * p * (t as f64).powf(2.0 / 3.0));
            Ok(LambdaPoint {
                t,
                lambda,
                sigma: 2.0 * lambda * e / p,
            })
        })
        .collect()
}

/// Inverse of [`lambda_series`]: `<𝔭^2> = Λ t^(2/3)`.
pub fn p2_from_lambda(points: &[LambdaPoint]) -> Vec<f64> {
    points
        .iter()
        .map(|p| p.lambda / (p.t as f64).powf(-2.0 / 3.0))
        .collect()
}

/// Earliest time used by anomalous-diffusion fits unless overridden.
pub const DEFAULT_FIT_T_MIN: u64 = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalousDiffusionFit {
    pub exponent: f64,
    pub exponent_err: f64,
    /// `ln` of the prefactor in `<𝔭^2> = A t^k`.
    pub log_prefactor: f64,
    pub reduced_chi2: f64,
    pub window: (u64, u64),
    /// Quadratic coefficient of a second-order fit in `ln t` and its error.
    pub curvature: f64,
    pub curvature_err: f64,
    /// Set when `|curvature| > 3 curvature_err`: data are off-critical.
    pub curvature_warning: bool,
}

impl AnomalousDiffusionFit {
    pub fn report(&self) -> FitReport {
        let mut flags = Vec::new();
        if self.curvature_warning {
            flags.push("curvature".into());
        }
        FitReport {
            kind: "anomalous-diffusion".into(),
            window: (self.window.0 as f64, self.window.1 as f64),
            estimate: self.exponent,
            std_err: self.exponent_err,
            reduced_chi2: self.reduced_chi2,
            flags,
        }
    }
}

fn log_window(
    series: &EnsembleSeries,
    window: (u64, u64),
    min_decades: f64,
) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> {
    let (lo, hi) = window;
    if lo == 0 || hi <= lo {
        return Err(invalid(format!("bad fit window [{lo}, {hi}]")));
    }
    let idx = series.window_indices(lo, hi);
    if idx.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} points in window",
            idx.len()
        )));
    }
    let t_first = series.times[idx[0]] as f64;
    let t_last = series.times[*idx.last().unwrap()] as f64;
    if (t_last / t_first).log10() < min_decades - 1e-9 {
        return Err(Error::InsufficientData(format!(
            "window spans {:.2} decades, need {min_decades}",
            (t_last / t_first).log10()
        )));
    }
    let x: Vec<f64> = idx.iter().map(|&i| (series.times[i] as f64).ln()).collect();
    let y: Vec<f64> = idx.iter().map(|&i| series.p2_mean[i].ln()).collect();
    let sig: Vec<f64> = idx
        .iter()
        .map(|&i| series.p2_sem[i] / series.p2_mean[i])
        .collect();
    let sig = sig.iter().all(|s| *s > 0.0).then_some(sig);
    Ok((x, y, sig))
}

/// Log-log regression of `<𝔭^2>` against `t` over `window`, which must span
/// at least 1.5 decades.
pub fn fit_anomalous_diffusion(
    series: &EnsembleSeries,
    window: (u64, u64),
) -> Result<AnomalousDiffusionFit> {
    fit_power_law(series, window, 1.5)
}

/// Same regression without the window-length requirement; used for short
/// late-time slope estimates.
pub fn fit_power_law(
    series: &EnsembleSeries,
    window: (u64, u64),
    min_decades: f64,
) -> Result<AnomalousDiffusionFit> {
    let (x, y, sig) = log_window(series, window, min_decades)?;
    let fit = line_fit(&x, &y, sig.as_deref())?;
    let (curvature, curvature_err) = if x.len() >= 4 {
        let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![1.0, v, v * v]).collect();
        let q = weighted_lstsq(&rows, &y, sig.as_deref())?;
        // Inflate by the scatter when errors are absent or underestimated.
        let scale = q.reduced_chi2().max(1.0).sqrt();
        (q.coefficients[2], q.std_err(2) * scale)
    } else {
        (0.0, f64::INFINITY)
    };
    let scale = if sig.is_none() {
        fit.reduced_chi2().sqrt()
    } else {
        1.0
    };
    Ok(AnomalousDiffusionFit {
        exponent: fit.slope,
        exponent_err: fit.slope_err * scale,
        log_prefactor: fit.intercept,
        reduced_chi2: fit.reduced_chi2(),
        window,
        curvature,
        curvature_err,
        curvature_warning: curvature.abs() > 3.0 * curvature_err,
    })
}

/// Fit of the offset form `<𝔭^2> = A + B t^(2/3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetPowerFit {
    pub a: f64,
    pub a_err: f64,
    pub b: f64,
    pub b_err: f64,
    pub reduced_chi2: f64,
}

pub fn fit_offset_anomalous(series: &EnsembleSeries, window: (u64, u64)) -> Result<OffsetPowerFit> {
    let idx = series.window_indices(window.0, window.1);
    if idx.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} points in window",
            idx.len()
        )));
    }
    let rows: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| vec![1.0, (series.times[i] as f64).powf(2.0 / 3.0)])
        .collect();
    let y: Vec<f64> = idx.iter().map(|&i| series.p2_mean[i]).collect();
    let sig: Vec<f64> = idx.iter().map(|&i| series.p2_sem[i]).collect();
    let sig = sig.iter().all(|s| *s > 0.0).then_some(sig);
    let fit = weighted_lstsq(&rows, &y, sig.as_deref())?;
    Ok(OffsetPowerFit {
        a: fit.coefficients[0],
        a_err: fit.std_err(0),
        b: fit.coefficients[1],
        b_err: fit.std_err(1),
        reduced_chi2: fit.reduced_chi2(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationTime {
    pub tau: f64,
    pub tau_err: f64,
    pub kam_limited: bool,
}

/// `tau_loc = D / 2`, with `D` a classical Monte-Carlo estimate in 𝔭² per
/// kick.
pub fn localization_time_estimate(
    params: &RotorParams,
    spec: &ClassicalEnsembleSpec,
    t_max: u64,
) -> Result<LocalizationTime> {
    let d = classical_diffusion_constant(params, spec, t_max)?;
    Ok(localization_time_from_diffusion(
        d.d,
        d.d_err,
        d.kam_limited,
    ))
}

pub fn localization_time_from_diffusion(d: f64, d_err: f64, kam_limited: bool) -> LocalizationTime {
    LocalizationTime {
        tau: 0.5 * d,
        tau_err: 0.5 * d_err,
        kam_limited,
    }
}
