//! Split-step evolution of the kicked rotor in a quasi-momentum sector.
//!
//! A state lives on the momentum lattice `𝔭 = m + beta`, `m` in `[-n/2, n/2)`,
//! stored in natural order (index `j = m + n/2`). One kick period applies the
//! kick phase `exp(-i K(t) cos x / kbar)` in position space and then the free
//! phase `exp(-i kbar (m + beta)^2 / 2)` in momentum space.
//!
//! Ensembles are processed in fixed-size chunks of trajectories; every
//! trajectory draws its randomness from a generator keyed by `(seed, index)`
//! and partial sums are merged in index order, so results do not depend on
//! the number of worker threads.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{kick_strength, RotorParams};
use crate::observables::{EnsembleSeries, MomentumDistribution, Source};
use crate::stats::mean_sem_from_sums;

/// Sites with `|m| > SATURATION_FRACTION * n / 2` form the grid tail.
pub const SATURATION_FRACTION: f64 = 0.9;
/// Tail mass above which a state is flagged as grid-saturated.
pub const SATURATION_TAIL: f64 = 1e-8;
/// Outer band and mass that trigger an in-place grid enlargement during an
/// ensemble run, well before the saturation invariant is at risk.
const GROWTH_FRACTION: f64 = 0.75;
const GROWTH_TAIL: f64 = 1e-14;
/// Trajectories per deterministic reduction chunk.
pub const CHUNK_SIZE: usize = 32;
/// Largest grid accepted by the dense-matrix oracle.
pub const DENSE_ORACLE_MAX_N: usize = 256;

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumGrid {
    n: usize,
    beta: f64,
}

impl MomentumGrid {
    pub fn new(n: usize, beta: f64) -> Result<Self> {
        if n < 64 || !n.is_power_of_two() {
            return Err(invalid(format!(
                "grid size must be a power of two >= 64, got {n}"
            )));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(invalid(format!(
                "quasi-momentum must lie in [0, 1), got {beta}"
            )));
        }
        Ok(Self { n, beta })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Integer momentum of storage index `j`.
    #[inline]
    pub fn m(&self, j: usize) -> i64 {
        j as i64 - (self.n / 2) as i64
    }

    pub fn index(&self, m: i64) -> Option<usize> {
        let j = m + (self.n / 2) as i64;
        (0..self.n as i64).contains(&j).then_some(j as usize)
    }

    /// Momentum `𝔭 = m + beta` of storage index `j`.
    #[inline]
    pub fn momentum(&self, j: usize) -> f64 {
        self.m(j) as f64 + self.beta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub amplitudes: Vec<Complex64>,
    pub grid: MomentumGrid,
    /// Number of kicks applied so far.
    pub t: u64,
}

impl WaveState {
    pub fn plane_wave(grid: MomentumGrid, m0: i64) -> Result<Self> {
        let j = grid
            .index(m0)
            .ok_or_else(|| invalid(format!("momentum {m0} outside the grid")))?;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); grid.n];
        amplitudes[j] = Complex64::new(1.0, 0.0);
        Ok(Self {
            amplitudes,
            grid,
            t: 0,
        })
    }

    pub fn from_amplitudes(grid: MomentumGrid, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != grid.n {
            return Err(invalid(format!(
                "{} amplitudes for a grid of {} sites",
                amplitudes.len(),
                grid.n
            )));
        }
        Ok(Self {
            amplitudes,
            grid,
            t: 0,
        })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<𝔭^2>` of the state.
    pub fn p2_mean(&self) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(j, a)| a.norm_sqr() * self.grid.momentum(j).powi(2))
            .sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Probability carried by sites with `|m| > fraction * n / 2`.
    pub fn tail_mass(&self, fraction: f64) -> f64 {
        let limit = fraction * (self.grid.n / 2) as f64;
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(j, _)| (self.grid.m(*j) as f64).abs() > limit)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    pub fn is_saturated(&self) -> bool {
        self.tail_mass(SATURATION_FRACTION) >= SATURATION_TAIL
    }

    /// Embeds the state in a grid twice as large, padding with zeros.
    pub fn enlarged(&self) -> WaveState {
        let n = self.grid.n;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 2 * n];
        amplitudes[n / 2..n / 2 + n].copy_from_slice(&self.amplitudes);
        WaveState {
            amplitudes,
            grid: MomentumGrid {
                n: 2 * n,
                beta: self.grid.beta,
            },
            t: self.t,
        }
    }

    /// Moves the quasi-momentum to `beta_new` (any real), relabelling sites so
    /// that each amplitude keeps its momentum `m + beta`; the stored beta is
    /// reduced to `[0, 1)`.
    fn shift_beta(&mut self, beta_new: f64) {
        let whole = beta_new.floor();
        let shift = whole as i64;
        let mut beta = beta_new - whole;
        if beta >= 1.0 {
            beta = 0.0;
        }
        self.grid.beta = beta;
        if shift == 0 {
            return;
        }
        // m + beta_new = (m + shift) + beta, so amplitude at m moves to m + shift.
        let n = self.grid.n;
        let s = shift.rem_euclid(n as i64) as usize;
        self.amplitudes.rotate_right(s);
    }
}

/// Free-evolution phase `exp(-i kbar (m + beta)^2 / 2)` over the grid.
pub fn free_phases(grid: &MomentumGrid, kbar: f64) -> Vec<Complex64> {
    (0..grid.n)
        .map(|j| {
            let p = grid.momentum(j);
            Complex64::from_polar(1.0, -0.5 * kbar * p * p)
        })
        .collect()
}

/// Kick phase `exp(-i K(t) cos x_k / kbar)` at the grid points `x_k = 2 pi k / n`.
pub fn kick_phases(n: usize, params: &RotorParams, t: u64) -> Vec<Complex64> {
    let a = kick_strength(params, t) / params.kbar;
    (0..n)
        .map(|k| Complex64::from_polar(1.0, -a * (2.0 * PI * k as f64 / n as f64).cos()))
        .collect()
}

/// FFT-based one-period propagator for a fixed grid size.
pub struct Propagator {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    cos_x: Vec<f64>,
    kick: Vec<Complex64>,
    free: Vec<Complex64>,
    free_key: Option<(u64, u64)>,
}

impl Propagator {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let cos_x = (0..n)
            .map(|k| (2.0 * PI * k as f64 / n as f64).cos())
            .collect();
        Self {
            n,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            cos_x,
            kick: vec![Complex64::new(0.0, 0.0); n],
            free: Vec::new(),
            free_key: None,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn refresh_free(&mut self, grid: &MomentumGrid, kbar: f64) {
        let key = (grid.beta.to_bits(), kbar.to_bits());
        if self.free_key != Some(key) {
            self.free = free_phases(grid, kbar);
            self.free_key = Some(key);
        }
    }

    /// Advances `state` by one kick period. Returns `true` when the state is
    /// grid-saturated afterwards.
    pub fn step(&mut self, state: &mut WaveState, params: &RotorParams) -> bool {
        assert_eq!(
            state.grid.n, self.n,
            "propagator and state grid sizes differ"
        );
        let n = self.n;
        self.refresh_free(&state.grid, params.kbar);

        // Natural ordering puts a factor (-1)^k on the position samples; it
        // commutes with the diagonal kick and cancels on the way back.
        self.inverse
            .process_with_scratch(&mut state.amplitudes, &mut self.scratch);

        let a = kick_strength(params, state.t) / params.kbar;
        let inv_n = 1.0 / n as f64;
        // cos x_k = cos x_{n-k}
        for k in 0..=n / 2 {
            let (s, c) = (-a * self.cos_x[k]).sin_cos();
            self.kick[k] = Complex64::new(c * inv_n, s * inv_n);
        }
        for k in n / 2 + 1..n {
            self.kick[k] = self.kick[n - k];
        }
        for (amp, ph) in state.amplitudes.iter_mut().zip(&self.kick) {
            *amp *= ph;
        }

        self.forward
            .process_with_scratch(&mut state.amplitudes, &mut self.scratch);
        for (amp, ph) in state.amplitudes.iter_mut().zip(&self.free) {
            *amp *= ph;
        }
        state.t += 1;
        state.is_saturated()
    }
}

/// Single-step convenience wrapper; allocates a propagator per call.
pub fn step(state: &WaveState, params: &RotorParams) -> (WaveState, bool) {
    let mut next = state.clone();
    let saturated = Propagator::new(state.grid.n).step(&mut next, params);
    (next, saturated)
}

/// With probability `eta_se` redraws the quasi-momentum uniformly in `[0, 1)`;
/// the site populations are left untouched. Returns whether an event happened.
pub fn apply_spontaneous_emission<R: Rng + ?Sized>(
    state: &mut WaveState,
    eta_se: f64,
    rng: &mut R,
) -> bool {
    if eta_se <= 0.0 {
        return false;
    }
    if rng.gen::<f64>() < eta_se {
        state.grid.beta = rng.gen::<f64>();
        true
    } else {
        false
    }
}

/// Drifts the quasi-momentum by `-eta_g / kbar` (one kick period of gravity).
/// When beta leaves `[0, 1)` the sites are relabelled so every amplitude keeps
/// its physical momentum.
pub fn apply_gravity_drift(state: &mut WaveState, eta_g: f64, kbar: f64) {
    if eta_g == 0.0 {
        return;
    }
    let beta = state.grid.beta - eta_g / kbar;
    state.shift_beta(beta);
}

/// Explicit one-period unitary `U[m][m']` (row-major, natural ordering) built
/// from the same phases as [`Propagator`] by direct summation.
pub fn one_kick_unitary(params: &RotorParams, grid: &MomentumGrid, t: u64) -> Vec<Complex64> {
    let n = grid.n;
    let kick = kick_phases(n, params, t);
    let free = free_phases(grid, params.kbar);
    let xs: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
    let mut u = vec![Complex64::new(0.0, 0.0); n * n];
    for row in 0..n {
        let m = grid.m(row) as f64;
        for col in 0..n {
            let mp = grid.m(col) as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += kick[k] * Complex64::from_polar(1.0, (mp - m) * xs[k]);
            }
            u[row * n + col] = free[row] * acc / n as f64;
        }
    }
    u
}

/// Verification oracle: evolves `psi0` by `t` kicks with dense matrix-vector
/// products. Limited to `n <= 256`.
pub fn dense_oracle_evolve(params: &RotorParams, psi0: &WaveState, t: u64) -> Result<WaveState> {
    let n = psi0.grid.n;
    if n > DENSE_ORACLE_MAX_N {
        return Err(invalid(format!(
            "dense oracle limited to n <= {DENSE_ORACLE_MAX_N}, got {n}"
        )));
    }
    let mut state = psi0.clone();
    for _ in 0..t {
        let u = one_kick_unitary(params, &state.grid, state.t);
        let next: Vec<Complex64> = (0..n)
            .map(|row| {
                u[row * n..(row + 1) * n]
                    .iter()
                    .zip(&state.amplitudes)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        state.amplitudes = next;
        state.t += 1;
    }
    Ok(state)
}

/// Initial momentum distribution of each trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    /// Single site `m = 0` in the drawn quasi-momentum sector.
    PlaneWave,
    /// Gaussian population profile of full width at half maximum `fwhm` (𝔭
    /// units) with independent random phases on each site, so that the
    /// ensemble reproduces an incoherent thermal mixture.
    Thermal { fwhm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum BetaSampling {
    Uniform,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseSampling {
    /// Use `phi2`, `phi3` from the rotor parameters.
    Fixed,
    /// Fresh uniform phases per trajectory.
    Uniform,
}

/// Momentum-grid sizing. Without an explicit initial size the grid starts
/// just large enough for the initial state and doubles whenever the outer
/// quarter of the lattice picks up probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridPolicy {
    pub initial_n: Option<usize>,
    pub max_n: usize,
    pub adaptive: bool,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self {
            initial_n: None,
            max_n: 1 << 16,
            adaptive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpec {
    pub n_traj: usize,
    pub seed: u64,
    pub initial: InitialCondition,
    pub beta_sampling: BetaSampling,
    pub phase_sampling: PhaseSampling,
    pub grid: GridPolicy,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n_traj: 100,
            seed: 1,
            initial: InitialCondition::PlaneWave,
            beta_sampling: BetaSampling::Uniform,
            phase_sampling: PhaseSampling::Uniform,
            grid: GridPolicy::default(),
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(invalid("n_traj must be at least 1"));
        }
        if let InitialCondition::Thermal { fwhm } = self.initial {
            if !(fwhm.is_finite() && fwhm > 0.0) {
                return Err(invalid("thermal FWHM must be positive"));
            }
        }
        if let BetaSampling::Fixed(b) = self.beta_sampling {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid("fixed beta must lie in [0, 1)"));
            }
        }
        let g = &self.grid;
        if g.max_n < 64 || !g.max_n.is_power_of_two() {
            return Err(invalid("max grid size must be a power of two >= 64"));
        }
        if let Some(n) = g.initial_n {
            if n < 64 || !n.is_power_of_two() || n > g.max_n {
                return Err(invalid(format!("initial grid size {n} invalid")));
            }
        }
        Ok(())
    }
}

/// Deterministic generator of trajectory `index` for ensemble `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Record times and the subset at which momentum distributions are kept.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecordPlan {
    pub times: Vec<u64>,
    pub distribution_times: Vec<u64>,
}

impl RecordPlan {
    pub fn new(times: Vec<u64>) -> Self {
        Self {
            times,
            distribution_times: Vec::new(),
        }
    }

    pub fn with_distributions(mut self, times: Vec<u64>) -> Self {
        self.distribution_times = times;
        self
    }

    fn validate(&self, t_max: u64) -> Result<()> {
        if self.times.is_empty() {
            return Err(invalid("no record times"));
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("record times must be strictly increasing"));
        }
        if *self.times.last().unwrap() > t_max {
            return Err(invalid("t_max is smaller than the last record time"));
        }
        for t in &self.distribution_times {
            if self.times.binary_search(t).is_err() {
                return Err(invalid(format!(
                    "distribution time {t} is not a record time"
                )));
            }
        }
        Ok(())
    }
}

/// Running sums of a binned momentum distribution over integer 𝔭 bins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BinnedSums {
    /// Bin value (integer 𝔭) of the first entry.
    pub offset: i64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl BinnedSums {
    fn add(&mut self, first_bin: i64, probs: &[f64]) {
        if self.sum.is_empty() {
            self.offset = first_bin;
        }
        let lo = self.offset.min(first_bin);
        let hi = (self.offset + self.sum.len() as i64).max(first_bin + probs.len() as i64);
        if lo < self.offset || hi > self.offset + self.sum.len() as i64 {
            let mut sum = vec![0.0; (hi - lo) as usize];
            let mut sq = vec![0.0; (hi - lo) as usize];
            let start = (self.offset - lo) as usize;
            sum[start..start + self.sum.len()].copy_from_slice(&self.sum);
            sq[start..start + self.sum_sq.len()].copy_from_slice(&self.sum_sq);
            self.sum = sum;
            self.sum_sq = sq;
            self.offset = lo;
        }
        let start = (first_bin - self.offset) as usize;
        for (i, p) in probs.iter().enumerate() {
            self.sum[start + i] += p;
            self.sum_sq[start + i] += p * p;
        }
    }

    fn to_distribution(&self, n_traj: usize) -> MomentumDistribution {
        let mut mass = Vec::with_capacity(self.sum.len());
        let mut sem = Vec::with_capacity(self.sum.len());
        for (s, q) in self.sum.iter().zip(&self.sum_sq) {
            let (m, e) = mean_sem_from_sums(*s, *q, n_traj);
            mass.push(m);
            sem.push(e);
        }
        MomentumDistribution {
            bin_width: 1.0,
            first_center: self.offset as f64,
            mass,
            mass_sem: Some(sem),
        }
    }
}

/// Merged per-trajectory sums; serializable so that long runs can be
/// checkpointed and resumed without changing the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleAccumulator {
    pub next_traj: usize,
    pub p2_sum: Vec<f64>,
    pub p2_sum_sq: Vec<f64>,
    pub pi0_sum: Vec<f64>,
    pub pi0_sum_sq: Vec<f64>,
    pub distributions: Vec<BinnedSums>,
    /// Trajectories still saturated at the largest allowed grid.
    pub saturated: Vec<usize>,
    pub max_grid_n: usize,
}

impl EnsembleAccumulator {
    fn new(plan: &RecordPlan) -> Self {
        let nt = plan.times.len();
        Self {
            next_traj: 0,
            p2_sum: vec![0.0; nt],
            p2_sum_sq: vec![0.0; nt],
            pi0_sum: vec![0.0; nt],
            pi0_sum_sq: vec![0.0; nt],
            distributions: vec![BinnedSums::default(); plan.distribution_times.len()],
            saturated: Vec::new(),
            max_grid_n: 0,
        }
    }
}

struct TrajectoryRecord {
    p2: Vec<f64>,
    pi0: Vec<f64>,
    distributions: Vec<(i64, Vec<f64>)>,
    saturated: bool,
    grid_n: usize,
}

/// Ensemble evolution that can be advanced chunk by chunk.
pub struct EnsembleRun {
    params: RotorParams,
    spec: EnsembleSpec,
    t_max: u64,
    plan: RecordPlan,
    acc: EnsembleAccumulator,
}

impl EnsembleRun {
    pub fn new(
        params: RotorParams,
        spec: EnsembleSpec,
        t_max: u64,
        plan: RecordPlan,
    ) -> Result<Self> {
        params.validate()?;
        spec.validate()?;
        plan.validate(t_max)?;
        let acc = EnsembleAccumulator::new(&plan);
        Ok(Self {
            params,
            spec,
            t_max,
            plan,
            acc,
        })
    }

    /// Continues from a checkpointed accumulator.
    pub fn resume(
        params: RotorParams,
        spec: EnsembleSpec,
        t_max: u64,
        plan: RecordPlan,
        acc: EnsembleAccumulator,
    ) -> Result<Self> {
        let mut run = Self::new(params, spec, t_max, plan)?;
        if acc.p2_sum.len() != run.plan.times.len()
            || acc.distributions.len() != run.plan.distribution_times.len()
            || acc.next_traj > run.spec.n_traj
        {
            return Err(invalid("checkpoint does not match the run configuration"));
        }
        run.acc = acc;
        Ok(run)
    }

    pub fn accumulator(&self) -> &EnsembleAccumulator {
        &self.acc
    }

    pub fn is_done(&self) -> bool {
        self.acc.next_traj >= self.spec.n_traj
    }

    /// Evolves the next chunk of trajectories. Returns `false` once all
    /// trajectories have been processed.
    pub fn run_chunk(&mut self) -> bool {
        if self.is_done() {
            return false;
        }
        let start = self.acc.next_traj;
        let end = (start + CHUNK_SIZE).min(self.spec.n_traj);
        let records: Vec<TrajectoryRecord> = (start..end)
            .into_par_iter()
            .map(|i| run_trajectory(&self.params, &self.spec, self.t_max, &self.plan, i))
            .collect();
        for (offset, rec) in records.into_iter().enumerate() {
            let acc = &mut self.acc;
            for (k, (p2, pi0)) in rec.p2.iter().zip(&rec.pi0).enumerate() {
                acc.p2_sum[k] += p2;
                acc.p2_sum_sq[k] += p2 * p2;
                acc.pi0_sum[k] += pi0;
                acc.pi0_sum_sq[k] += pi0 * pi0;
            }
            for (sums, (first, probs)) in acc.distributions.iter_mut().zip(&rec.distributions) {
                sums.add(*first, probs);
            }
            if rec.saturated {
                acc.saturated.push(start + offset);
            }
            acc.max_grid_n = acc.max_grid_n.max(rec.grid_n);
        }
        self.acc.next_traj = end;
        !self.is_done()
    }

    pub fn finish(mut self) -> EnsembleSeries {
        while self.run_chunk() {}
        let n = self.spec.n_traj;
        let nt = self.plan.times.len();
        let mut p2_mean = Vec::with_capacity(nt);
        let mut p2_sem = Vec::with_capacity(nt);
        let mut pi0 = Vec::with_capacity(nt);
        let mut pi0_sem = Vec::with_capacity(nt);
        for k in 0..nt {
            let (m, e) = mean_sem_from_sums(self.acc.p2_sum[k], self.acc.p2_sum_sq[k], n);
            p2_mean.push(m);
            p2_sem.push(e);
            let (m, e) = mean_sem_from_sums(self.acc.pi0_sum[k], self.acc.pi0_sum_sq[k], n);
            pi0.push(m);
            pi0_sem.push(e);
        }
        let distributions = self
            .plan
            .distribution_times
            .iter()
            .zip(&self.acc.distributions)
            .map(|(t, sums)| (*t, sums.to_distribution(n)))
            .collect();
        EnsembleSeries {
            params: self.params,
            times: self.plan.times.clone(),
            p2_mean,
            p2_sem,
            pi0: Some(pi0),
            pi0_sem: Some(pi0_sem),
            distributions,
            n_traj: n,
            saturated_trajectories: self.acc.saturated.clone(),
            max_grid_n: self.acc.max_grid_n,
            source: Source::Quantum,
        }
    }
}

/// Evolves `spec.n_traj` independent trajectories and returns ensemble
/// averages at the record times.
pub fn evolve_ensemble(
    params: &RotorParams,
    spec: &EnsembleSpec,
    t_max: u64,
    plan: &RecordPlan,
) -> Result<EnsembleSeries> {
    Ok(EnsembleRun::new(*params, spec.clone(), t_max, plan.clone())?.finish())
}

/// Per-trajectory random draws, in a fixed order.
struct TrajectoryDraws {
    params: RotorParams,
    initial_phases: Vec<f64>,
    beta: f64,
}

fn draw_trajectory(
    params: &RotorParams,
    spec: &EnsembleSpec,
    rng: &mut ChaCha8Rng,
) -> TrajectoryDraws {
    let beta = match spec.beta_sampling {
        BetaSampling::Uniform => rng.gen::<f64>(),
        BetaSampling::Fixed(b) => b,
    };
    let mut p = *params;
    if spec.phase_sampling == PhaseSampling::Uniform {
        p.phi2 = 2.0 * PI * rng.gen::<f64>();
        p.phi3 = 2.0 * PI * rng.gen::<f64>();
    }
    let initial_phases = match spec.initial {
        InitialCondition::PlaneWave => Vec::new(),
        InitialCondition::Thermal { fwhm } => {
            let half = thermal_half_width(fwhm);
            (0..2 * half + 1)
                .map(|_| 2.0 * PI * rng.gen::<f64>())
                .collect()
        }
    };
    TrajectoryDraws {
        params: p,
        initial_phases,
        beta,
    }
}

fn thermal_half_width(fwhm: f64) -> i64 {
    (8.0 * fwhm / FWHM_PER_SIGMA).ceil() as i64 + 1
}

fn initial_state(spec: &EnsembleSpec, draws: &TrajectoryDraws, n: usize) -> WaveState {
    let grid = MomentumGrid {
        n,
        beta: draws.beta,
    };
    match spec.initial {
        InitialCondition::PlaneWave => WaveState::plane_wave(grid, 0).expect("grid holds m = 0"),
        InitialCondition::Thermal { fwhm } => {
            let sigma = fwhm / FWHM_PER_SIGMA;
            let half = thermal_half_width(fwhm);
            let mut amplitudes = vec![Complex64::new(0.0, 0.0); n];
            let mut norm = 0.0;
            for (i, m) in (-half..=half).enumerate() {
                if let Some(j) = grid.index(m) {
                    let p = m as f64 + draws.beta;
                    let weight = (-p * p / (2.0 * sigma * sigma)).exp();
                    amplitudes[j] = Complex64::from_polar(weight.sqrt(), draws.initial_phases[i]);
                    norm += weight;
                }
            }
            let scale = 1.0 / norm.sqrt();
            amplitudes.iter_mut().for_each(|a| *a *= scale);
            WaveState {
                amplitudes,
                grid,
                t: 0,
            }
        }
    }
}

fn initial_grid_size(spec: &EnsembleSpec) -> usize {
    if let Some(n) = spec.grid.initial_n {
        return n;
    }
    let extent = match spec.initial {
        InitialCondition::PlaneWave => 1,
        InitialCondition::Thermal { fwhm } => thermal_half_width(fwhm),
    };
    // Keep the initial support inside the inner half of the lattice.
    let mut n = 128usize;
    while (n as f64) * GROWTH_FRACTION / 2.0 < 2.0 * extent as f64 + 16.0 {
        n *= 2;
    }
    n.min(spec.grid.max_n)
}

fn run_trajectory(
    params: &RotorParams,
    spec: &EnsembleSpec,
    t_max: u64,
    plan: &RecordPlan,
    index: usize,
) -> TrajectoryRecord {
    let mut n = initial_grid_size(spec);
    loop {
        let (record, retry) = attempt_trajectory(params, spec, t_max, plan, index, n);
        if retry && n < spec.grid.max_n {
            n *= 2;
            continue;
        }
        return record;
    }
}

/// One attempt at grid size `n`. The second value asks for a restart on a
/// larger grid after a hard saturation.
fn attempt_trajectory(
    params: &RotorParams,
    spec: &EnsembleSpec,
    t_max: u64,
    plan: &RecordPlan,
    index: usize,
    n: usize,
) -> (TrajectoryRecord, bool) {
    let mut rng = trajectory_rng(spec.seed, index as u64);
    let draws = draw_trajectory(params, spec, &mut rng);
    let p = draws.params;
    let mut state = initial_state(spec, &draws, n);
    let mut prop = Propagator::new(n);
    let mut record = TrajectoryRecord {
        p2: Vec::with_capacity(plan.times.len()),
        pi0: Vec::with_capacity(plan.times.len()),
        distributions: Vec::with_capacity(plan.distribution_times.len()),
        saturated: false,
        grid_n: n,
    };
    let mut next_dist = 0;
    let mut saturated = false;
    for &t_rec in &plan.times {
        while state.t < t_rec {
            let hit = prop.step(&mut state, &p);
            apply_spontaneous_emission(&mut state, p.eta_se, &mut rng);
            apply_gravity_drift(&mut state, p.eta_g, p.kbar);
            if hit {
                if state.grid.n < spec.grid.max_n {
                    return (record, true);
                }
                saturated = true;
            }
            if spec.grid.adaptive
                && state.grid.n < spec.grid.max_n
                && state.tail_mass(GROWTH_FRACTION) > GROWTH_TAIL
            {
                state = state.enlarged();
                prop = Propagator::new(state.grid.n);
            }
        }
        record_observables(&state, &mut record);
        if plan.distribution_times.get(next_dist) == Some(&t_rec) {
            record.distributions.push(binned(&state));
            next_dist += 1;
        }
    }
    debug_assert!(state.t <= t_max);
    record.saturated = saturated;
    record.grid_n = state.grid.n;
    (record, false)
}

fn record_observables(state: &WaveState, record: &mut TrajectoryRecord) {
    let grid = &state.grid;
    let shift = if grid.beta >= 0.5 { 1 } else { 0 };
    let mut p2 = 0.0;
    let mut pi0 = 0.0;
    for (j, a) in state.amplitudes.iter().enumerate() {
        let w = a.norm_sqr();
        let p = grid.momentum(j);
        p2 += w * p * p;
        if grid.m(j) + shift == 0 {
            pi0 += w;
        }
    }
    record.p2.push(p2);
    record.pi0.push(pi0);
}

/// Site populations assigned to the nearest integer momentum.
fn binned(state: &WaveState) -> (i64, Vec<f64>) {
    let shift = if state.grid.beta >= 0.5 { 1 } else { 0 };
    (state.grid.m(0) + shift, state.probabilities())
}

/// Rough number of floating-point-heavy site updates for a run, used for cost
/// estimates: trajectories x kicks x typical grid size.
pub fn estimated_site_updates(params: &RotorParams, spec: &EnsembleSpec, t_max: u64) -> f64 {
    let d = params.k * params.k * (1.0 + 0.5 * params.epsilon * params.epsilon)
        / (2.0 * params.kbar * params.kbar);
    let spread = (d * t_max as f64).sqrt();
    let n = (2.0 * (6.0 * spread + 16.0) / GROWTH_FRACTION)
        .max(128.0)
        .min(spec.grid.max_n as f64);
    spec.n_traj as f64 * t_max as f64 * n * (n.log2() + 4.0)
}
