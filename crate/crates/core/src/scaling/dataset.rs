use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::observables::EnsembleSeries;

/// `ln Λ(K, t)` on a complete `(K, t)` rectangle with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingDataset {
    pub k: Vec<f64>,
    pub t: Vec<f64>,
    /// `ln_lambda[i][j]` at `(k[i], t[j])`.
    pub ln_lambda: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

impl ScalingDataset {
    pub fn new(
        k: Vec<f64>,
        t: Vec<f64>,
        ln_lambda: Vec<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if k.is_empty() || t.is_empty() {
            return Err(Error::InsufficientData("empty dataset".into()));
        }
        if k.windows(2).any(|w| !(w[0] < w[1])) || t.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("K and t values must be strictly increasing"));
        }
        if t[0] <= 0.0 {
            return Err(invalid("times must be positive"));
        }
        if ln_lambda.len() != k.len() || sigma.len() != k.len() {
            return Err(invalid("row count differs from the number of K values"));
        }
        for (row, srow) in ln_lambda.iter().zip(&sigma) {
            if row.len() != t.len() || srow.len() != t.len() {
                return Err(invalid("missing cells: every K needs every t"));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(invalid("non-finite ln Λ"));
            }
            if srow.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(invalid("σ must be positive"));
            }
        }
        Ok(Self {
            k,
            t,
            ln_lambda,
            sigma,
        })
    }

    /// Builds `ln Λ = ln(<𝔭^2> t^(-2/3))` from one series per K, keeping the
    /// record times in `[t_min, t_max]` that every series shares.
    pub fn from_series(series: &[EnsembleSeries], t_min: f64, t_max: f64) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::InsufficientData("no series".into()));
        }
        let mut sorted: Vec<&EnsembleSeries> = series.iter().collect();
        sorted.sort_by(|a, b| a.params.k.total_cmp(&b.params.k));
        let mut times: Vec<u64> = sorted[0]
            .times
            .iter()
            .copied()
            .filter(|&t| t as f64 >= t_min && t as f64 <= t_max && t > 0)
            .collect();
        for s in &sorted[1..] {
            times.retain(|t| s.times.binary_search(t).is_ok());
        }
        let mut ln = Vec::new();
        let mut sg = Vec::new();
        for s in &sorted {
            let mut row = Vec::with_capacity(times.len());
            let mut srow = Vec::with_capacity(times.len());
            for t in &times {
                let j = s.times.binary_search(t).unwrap();
                let p2 = s.p2_mean[j];
                row.push((p2 * (*t as f64).powf(-2.0 / 3.0)).ln());
                srow.push(s.p2_sem[j] / p2);
            }
            ln.push(row);
            sg.push(srow);
        }
        Self::new(
            sorted.iter().map(|s| s.params.k).collect(),
            times.iter().map(|t| *t as f64).collect(),
            ln,
            sg,
        )
    }

    pub fn n_k(&self) -> usize {
        self.k.len()
    }

    pub fn n_t(&self) -> usize {
        self.t.len()
    }

    pub fn n_points(&self) -> usize {
        self.k.len() * self.t.len()
    }

    /// Sub-rectangle with `K` in `[k_lo, k_hi]` and `t` in `[t_lo, t_hi]`.
    pub fn restrict(&self, k_lo: f64, k_hi: f64, t_lo: f64, t_hi: f64) -> Result<Self> {
        let ki: Vec<usize> = (0..self.n_k())
            .filter(|&i| self.k[i] >= k_lo && self.k[i] <= k_hi)
            .collect();
        let tj: Vec<usize> = (0..self.n_t())
            .filter(|&j| self.t[j] >= t_lo && self.t[j] <= t_hi)
            .collect();
        self.select(&ki, &tj)
    }

    /// Copy without the curves at the given K indices.
    pub fn without_k(&self, drop: &[usize]) -> Result<Self> {
        let ki: Vec<usize> = (0..self.n_k()).filter(|i| !drop.contains(i)).collect();
        let tj: Vec<usize> = (0..self.n_t()).collect();
        self.select(&ki, &tj)
    }

    fn select(&self, ki: &[usize], tj: &[usize]) -> Result<Self> {
        Self::new(
            ki.iter().map(|&i| self.k[i]).collect(),
            tj.iter().map(|&j| self.t[j]).collect(),
            ki.iter()
                .map(|&i| tj.iter().map(|&j| self.ln_lambda[i][j]).collect())
                .collect(),
            ki.iter()
                .map(|&i| tj.iter().map(|&j| self.sigma[i][j]).collect())
                .collect(),
        )
    }

    /// Copy with every cell moved by independent Gaussian noise of width
    /// `scale * sigma`.
    pub fn perturbed(&self, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for (row, srow) in out.ln_lambda.iter_mut().zip(&self.sigma) {
            for (v, s) in row.iter_mut().zip(srow) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += scale * s * z;
            }
        }
        out
    }

    pub fn with_sigma_scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.sigma.iter_mut().flatten().for_each(|s| *s *= factor);
        out
    }
}
