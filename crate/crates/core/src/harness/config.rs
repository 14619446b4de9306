use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{RotorParams, SweepPath};
use crate::quantum::EnsembleSpec;
use crate::scaling::ScalingOrders;

/// Logarithmically spaced record times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSchedule {
    pub t_first: u64,
    pub t_max: u64,
    pub points_per_decade: usize,
    /// Times at which momentum distributions are stored.
    pub distribution_times: Vec<u64>,
}

impl Default for TimeSchedule {
    fn default() -> Self {
        Self {
            t_first: 1,
            t_max: 10_000,
            points_per_decade: 10,
            distribution_times: Vec::new(),
        }
    }
}

impl TimeSchedule {
    pub fn new(t_first: u64, t_max: u64, points_per_decade: usize) -> Self {
        Self {
            t_first,
            t_max,
            points_per_decade,
            distribution_times: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_first == 0 || self.t_first > self.t_max {
            return Err(invalid("need 1 <= t_first <= t_max"));
        }
        if self.points_per_decade == 0 {
            return Err(invalid("points_per_decade must be positive"));
        }
        if self
            .distribution_times
            .iter()
            .any(|&t| t == 0 || t > self.t_max)
        {
            return Err(invalid("distribution times must lie in [1, t_max]"));
        }
        Ok(())
    }

    /// Rounded, deduplicated log grid from `t_first` to `t_max` inclusive.
    pub fn times(&self) -> Vec<u64> {
        let decades = (self.t_max as f64 / self.t_first as f64).log10();
        let n = (decades * self.points_per_decade as f64).round() as usize;
        let mut t: Vec<u64> = (0..=n)
            .map(|i| {
                let f = if n == 0 { 0.0 } else { i as f64 / n as f64 };
                (self.t_first as f64 * 10f64.powf(decades * f)).round() as u64
            })
            .collect();
        t.push(self.t_max);
        for &d in &self.distribution_times {
            t.push(d);
        }
        t.sort_unstable();
        t.dedup();
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Earliest time used by the collapse.
    pub collapse_t_min: f64,
    /// Earliest time used by the full scaling fit.
    pub full_t_min: f64,
    pub orders: ScalingOrders,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    /// Reference K values for the normalization of xi; empty selects every K
    /// whose late-time Λ slope passes the saturation test.
    pub localized_k: Vec<f64>,
    /// Half-width of the K window of the slope method, centred on the
    /// crossing estimate.
    pub slope_window: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            collapse_t_min: 30.0,
            full_t_min: 1e3,
            orders: ScalingOrders::default(),
            bootstrap_resamples: 200,
            bootstrap_seed: 0,
            localized_k: Vec::new(),
            slope_window: 0.35,
        }
    }
}

/// Everything a run needs; the TOML form is the user-facing config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: RotorParams,
    pub ensemble: EnsembleSpec,
    pub schedule: TimeSchedule,
    pub sweep: Option<SweepPath>,
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.ensemble.validate()?;
        self.schedule.validate()?;
        if let Some(s) = &self.sweep {
            if s.n_points == 0 {
                return Err(invalid("sweep needs at least one point"));
            }
            for (k, e) in s.points() {
                RotorParams {
                    k,
                    epsilon: e,
                    ..self.params
                }
                .validate()?;
            }
        }
        Ok(())
    }

    /// Rotor parameters of every sweep point (or the single configured point).
    pub fn points(&self) -> Vec<RotorParams> {
        match &self.sweep {
            Some(s) => s
                .points()
                .into_iter()
                .map(|(k, e)| RotorParams {
                    k,
                    epsilon: e,
                    ..self.params
                })
                .collect(),
            None => vec![self.params],
        }
    }
}

/// Worker threads: `QKR_WORKERS` if set, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("QKR_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
