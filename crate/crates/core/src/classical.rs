//! Classical Standard Map and its three-frequency extension.
//!
//! Momenta are in map units (`p = kbar 𝔭`) and are never wrapped; angles are
//! reduced to `[0, 2 pi)` after every step. Ensemble statistics are reported
//! in 𝔭 units so they compare directly with the quantum runs.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{kick_strength, RotorParams};
use crate::observables::{EnsembleSeries, MomentumDistribution, Source};
use crate::quantum::{trajectory_rng, PhaseSampling, RecordPlan};
use crate::stats::{line_fit, mean_sem_from_sums};

const CHUNK: usize = 4096;
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;
/// Growth exponents below this mark a KAM-limited (non-diffusive) regime.
pub const KAM_EXPONENT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassicalState {
    pub x: f64,
    pub p: f64,
    pub x2: f64,
    pub x3: f64,
    pub p2: f64,
    pub p3: f64,
}

#[inline]
fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// `x' = x + p mod 2 pi`, `p' = p + K sin x'`.
pub fn standard_map_step(s: ClassicalState, k: f64) -> ClassicalState {
    let x = wrap(s.x + s.p);
    ClassicalState {
        x,
        p: s.p + k * x.sin(),
        ..s
    }
}

/// Jacobian of [`standard_map_step`] in `(x, p)`.
pub fn standard_map_jacobian(s: ClassicalState, k: f64) -> [[f64; 2]; 2] {
    let c = k * (s.x + s.p).cos();
    [[1.0, 1.0], [c, 1.0 + c]]
}

/// One kick of the three-frequency map. The rotor momentum receives
/// `K(t) sin x'`; the auxiliary momenta receive the matching forces from the
/// modulation, and the auxiliary angles advance by `omega2`, `omega3`.
pub fn quasiperiodic_classical_step(
    s: ClassicalState,
    params: &RotorParams,
    t: u64,
) -> ClassicalState {
    let x = wrap(s.x + s.p);
    let (sx, cx) = x.sin_cos();
    let (s2, c2) = s.x2.sin_cos();
    let (s3, c3) = s.x3.sin_cos();
    let ke = params.k * params.epsilon;
    ClassicalState {
        x,
        p: s.p + kick_strength(params, t) * sx,
        x2: wrap(s.x2 + params.omega2),
        x3: wrap(s.x3 + params.omega3),
        p2: s.p2 + ke * cx * s2 * c3,
        p3: s.p3 + ke * cx * c2 * s3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalEnsembleSpec {
    pub n_traj: usize,
    pub seed: u64,
    /// FWHM of the initial momentum distribution in 𝔭 units.
    pub fwhm: f64,
    pub phase_sampling: PhaseSampling,
}

impl Default for ClassicalEnsembleSpec {
    fn default() -> Self {
        Self {
            n_traj: 10_000,
            seed: 1,
            fwhm: 4.0,
            phase_sampling: PhaseSampling::Uniform,
        }
    }
}

impl ClassicalEnsembleSpec {
    fn validate(&self) -> Result<()> {
        if self.n_traj < 2 {
            return Err(invalid(
                "classical ensembles need at least two trajectories",
            ));
        }
        if !(self.fwhm >= 0.0 && self.fwhm.is_finite()) {
            return Err(invalid("initial FWHM must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Initial state of trajectory `index`: uniform angle, Gaussian momentum.
pub fn initial_classical_state(
    params: &RotorParams,
    spec: &ClassicalEnsembleSpec,
    index: usize,
) -> (ClassicalState, RotorParams) {
    let mut rng = trajectory_rng(spec.seed, index as u64);
    let x = TAU * rng.gen::<f64>();
    let sigma = spec.fwhm / FWHM_PER_SIGMA * params.kbar;
    let p = if sigma > 0.0 {
        Normal::new(0.0, sigma)
            .expect("positive width")
            .sample(&mut rng)
    } else {
        0.0
    };
    let mut local = *params;
    if spec.phase_sampling == PhaseSampling::Uniform {
        local.phi2 = 2.0 * PI * rng.gen::<f64>();
        local.phi3 = 2.0 * PI * rng.gen::<f64>();
    }
    let s = ClassicalState {
        x,
        p,
        x2: wrap(local.phi2),
        x3: wrap(local.phi3),
        p2: 0.0,
        p3: 0.0,
    };
    (s, local)
}

/// Classical ensemble statistics at the record times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalSeries {
    pub series: EnsembleSeries,
    /// Excess kurtosis of the rotor momentum at each record time.
    pub excess_kurtosis: Vec<f64>,
    /// `<𝔭2^2>`, `<𝔭3^2>` of the auxiliary momenta (in units of kbar).
    pub aux_p2_mean: [Vec<f64>; 2],
}

struct Record {
    moments: Vec<[f64; 6]>,
    dist: Vec<f64>,
}

/// Runs `spec.n_traj` trajectories of the three-frequency map (the Standard
/// Map when `epsilon = 0`).
pub fn run_classical_ensemble(
    params: &RotorParams,
    spec: &ClassicalEnsembleSpec,
    t_max: u64,
    plan: &RecordPlan,
) -> Result<ClassicalSeries> {
    params.validate()?;
    spec.validate()?;
    if plan.times.is_empty() || plan.times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(
            "record times must be non-empty and strictly increasing",
        ));
    }
    if *plan.times.last().unwrap() > t_max {
        return Err(invalid("t_max is smaller than the last record time"));
    }
    let nt = plan.times.len();
    let kbar = params.kbar;
    // Σ 𝔭, 𝔭², 𝔭³, 𝔭⁴, 𝔭2², 𝔭3² per record time
    let mut sums = vec![[0.0f64; 6]; nt];
    let mut sq = vec![0.0f64; nt];
    let mut hist: Vec<std::collections::BTreeMap<i64, f64>> =
        vec![Default::default(); plan.distribution_times.len()];

    let mut start = 0;
    while start < spec.n_traj {
        let end = (start + CHUNK).min(spec.n_traj);
        let records: Vec<Record> = (start..end)
            .into_par_iter()
            .map(|i| {
                let (mut s, local) = initial_classical_state(params, spec, i);
                let mut t = 0u64;
                let mut moments = Vec::with_capacity(nt);
                let mut dist = Vec::with_capacity(plan.distribution_times.len());
                for &tr in &plan.times {
                    while t < tr {
                        s = quasiperiodic_classical_step(s, &local, t);
                        t += 1;
                    }
                    let q = s.p / kbar;
                    let q2 = q * q;
                    moments.push([
                        q,
                        q2,
                        q2 * q,
                        q2 * q2,
                        (s.p2 / kbar).powi(2),
                        (s.p3 / kbar).powi(2),
                    ]);
                    if plan.distribution_times.binary_search(&tr).is_ok() {
                        dist.push(q);
                    }
                }
                Record { moments, dist }
            })
            .collect();
        for r in records {
            for (k, m) in r.moments.iter().enumerate() {
                for c in 0..6 {
                    sums[k][c] += m[c];
                }
                sq[k] += m[1] * m[1];
            }
            for (h, q) in hist.iter_mut().zip(&r.dist) {
                *h.entry(q.round() as i64).or_insert(0.0) += 1.0;
            }
        }
        start = end;
    }

    let n = spec.n_traj as f64;
    let mut p2_mean = Vec::with_capacity(nt);
    let mut p2_sem = Vec::with_capacity(nt);
    let mut kurt = Vec::with_capacity(nt);
    let mut aux = [Vec::with_capacity(nt), Vec::with_capacity(nt)];
    for k in 0..nt {
        let (m, e) = mean_sem_from_sums(sums[k][1], sq[k], spec.n_traj);
        p2_mean.push(m);
        p2_sem.push(e);
        let mu = sums[k][0] / n;
        let r2 = sums[k][1] / n;
        let r3 = sums[k][2] / n;
        let r4 = sums[k][3] / n;
        let c2 = r2 - mu * mu;
        let c4 = r4 - 4.0 * mu * r3 + 6.0 * mu * mu * r2 - 3.0 * mu.powi(4);
        kurt.push(c4 / (c2 * c2) - 3.0);
        aux[0].push(sums[k][4] / n);
        aux[1].push(sums[k][5] / n);
    }
    let distributions = plan
        .distribution_times
        .iter()
        .zip(hist)
        .map(|(t, h)| {
            let lo = *h.keys().next().unwrap_or(&0);
            let hi = *h.keys().last().unwrap_or(&0);
            let mut mass = vec![0.0; (hi - lo + 1) as usize];
            for (b, c) in h {
                mass[(b - lo) as usize] = c / n;
            }
            let sem = mass
                .iter()
                .map(|m: &f64| (m * (1.0 - m) / n).sqrt())
                .collect();
            (
                *t,
                MomentumDistribution {
                    bin_width: 1.0,
                    first_center: lo as f64,
                    mass,
                    mass_sem: Some(sem),
                },
            )
        })
        .collect();
    Ok(ClassicalSeries {
        series: EnsembleSeries {
            params: *params,
            times: plan.times.clone(),
            p2_mean,
            p2_sem,
            pi0: None,
            pi0_sem: None,
            distributions,
            n_traj: spec.n_traj,
            saturated_trajectories: Vec::new(),
            max_grid_n: 0,
            source: Source::Classical,
        },
        excess_kurtosis: kurt,
        aux_p2_mean: aux,
    })
}

/// Classical diffusion constant in 𝔭² per kick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    pub d: f64,
    pub d_err: f64,
    /// Per-axis constants `(D1, D2, D3)` and their standard errors.
    pub per_axis: [f64; 3],
    pub per_axis_err: [f64; 3],
    /// Log-log growth exponent of `<𝔭^2>(t) - <𝔭^2>(0)` over the fit window.
    pub exponent: f64,
    /// Set when `exponent < 0.9`: KAM-limited, K below the chaos threshold.
    pub kam_limited: bool,
}

/// Least-squares slope of `<𝔭^2>` against `t` over `[t_max / 2, t_max]`,
/// averaged over trajectories, with the trajectory-to-trajectory standard
/// error.
pub fn classical_diffusion_constant(
    params: &RotorParams,
    spec: &ClassicalEnsembleSpec,
    t_max: u64,
) -> Result<DiffusionEstimate> {
    params.validate()?;
    spec.validate()?;
    if t_max < 100 {
        return Err(invalid("diffusion constant needs t_max >= 100"));
    }
    let t0 = t_max / 2;
    let tbar = (t0 + t_max) as f64 / 2.0;
    let stt: f64 = (t0..=t_max).map(|t| (t as f64 - tbar).powi(2)).sum();
    const N_EXP: usize = 16;
    let exp_times: Vec<u64> = (0..N_EXP)
        .map(|i| t0 + (i as u64 * (t_max - t0)) / (N_EXP as u64 - 1))
        .collect();
    let kbar2 = params.kbar * params.kbar;

    let mut slope_sum = [0.0f64; 3];
    let mut slope_sq = [0.0f64; 3];
    let mut incr_sum = vec![0.0f64; N_EXP];
    let mut start = 0;
    while start < spec.n_traj {
        let end = (start + CHUNK).min(spec.n_traj);
        let recs: Vec<([f64; 3], Vec<f64>)> = (start..end)
            .into_par_iter()
            .map(|i| {
                let (mut s, local) = initial_classical_state(params, spec, i);
                let q0 = s.p * s.p / kbar2;
                let mut sy = [0.0f64; 3];
                let mut sty = [0.0f64; 3];
                let mut incr = Vec::with_capacity(N_EXP);
                let mut next = 0;
                for t in 0..=t_max {
                    if t > 0 {
                        s = quasiperiodic_classical_step(s, &local, t - 1);
                    }
                    if t >= t0 {
                        let y = [s.p * s.p / kbar2, s.p2 * s.p2 / kbar2, s.p3 * s.p3 / kbar2];
                        for a in 0..3 {
                            sy[a] += y[a];
                            sty[a] += t as f64 * y[a];
                        }
                        while next < N_EXP && exp_times[next] == t {
                            incr.push(y[0] - q0);
                            next += 1;
                        }
                    }
                }
                let slopes = [0, 1, 2].map(|a| (sty[a] - tbar * sy[a]) / stt);
                (slopes, incr)
            })
            .collect();
        for (slopes, incr) in recs {
            for a in 0..3 {
                slope_sum[a] += slopes[a];
                slope_sq[a] += slopes[a] * slopes[a];
            }
            for (acc, v) in incr_sum.iter_mut().zip(&incr) {
                *acc += v;
            }
        }
        start = end;
    }
    let mut per_axis = [0.0; 3];
    let mut per_axis_err = [0.0; 3];
    for a in 0..3 {
        let (m, e) = mean_sem_from_sums(slope_sum[a], slope_sq[a], spec.n_traj);
        per_axis[a] = m;
        per_axis_err[a] = e;
    }
    let n = spec.n_traj as f64;
    let pts: Vec<(f64, f64)> = exp_times
        .iter()
        .zip(&incr_sum)
        .filter(|(_, v)| **v > 0.0)
        .map(|(t, v)| ((*t as f64).ln(), (v / n).ln()))
        .collect();
    let exponent = if pts.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        line_fit(&x, &y, None)?.slope
    } else {
        0.0
    };
    Ok(DiffusionEstimate {
        d: per_axis[0],
        d_err: per_axis_err[0],
        per_axis,
        per_axis_err,
        exponent,
        kam_limited: exponent < KAM_EXPONENT_THRESHOLD,
    })
}

/// Quasilinear estimate `K^2 / (2 kbar^2)` in 𝔭² per kick.
pub fn quasilinear_diffusion(k: f64, kbar: f64) -> f64 {
    k * k / (2.0 * kbar * kbar)
}
