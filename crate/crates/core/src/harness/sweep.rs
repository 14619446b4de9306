use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{with_workers, worker_count, RunConfig};
use super::io::{
    run_id, write_atomic, write_dataset_csv, write_distributions_csv, write_series_csv, RunManifest,
};
use crate::error::{Error, Result};
use crate::model::RotorParams;
use crate::observables::EnsembleSeries;
use crate::quantum::{EnsembleAccumulator, EnsembleRun, RecordPlan};
use crate::scaling::ScalingDataset;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepOptions {
    /// Stop (as if interrupted) after this many trajectory chunks in total.
    pub stop_after_chunks: Option<usize>,
    /// Worker threads; `None` uses [`worker_count`].
    pub workers: Option<usize>,
    /// Print one progress line per finished point to stderr.
    pub progress: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedPoint {
    pub k: f64,
    pub epsilon: f64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub run_id: String,
    pub series: Vec<EnsembleSeries>,
    /// Dataset over the successful points and every record time.
    pub dataset: Option<ScalingDataset>,
    pub failed: Vec<FailedPoint>,
    pub outputs: Vec<PathBuf>,
}

impl SweepOutcome {
    /// `Err(PartialSweep)` when some point failed.
    pub fn check(&self) -> Result<()> {
        if self.failed.is_empty() {
            Ok(())
        } else {
            Err(Error::PartialSweep {
                failed: self.failed.len(),
                total: self.failed.len() + self.series.len(),
            })
        }
    }
}

#[derive(Debug, Clone)]
pub enum SweepStatus {
    Complete(SweepOutcome),
    /// Stopped early; rerunning with the same directory resumes.
    Interrupted {
        points_done: usize,
    },
}

#[derive(Serialize, Deserialize)]
struct Finished {
    run_id: String,
    series: EnsembleSeries,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    run_id: String,
    params: RotorParams,
    acc: EnsembleAccumulator,
}

fn point_path(dir: &Path, i: usize, what: &str) -> PathBuf {
    dir.join("points").join(format!("point_{i:03}.{what}.json"))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Parse(e.to_string()))
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Runs the ensemble at every point of the configured sweep (or the single
/// configured point), checkpointing after every chunk of trajectories under
/// `dir/points`. Rerunning on the same directory resumes where it stopped.
///
/// Writes `series.csv`, `distributions.csv` (if any), `dataset.csv` and
/// `manifest.toml` into `dir`.
pub fn run_sweep(config: &RunConfig, dir: &Path, opts: &SweepOptions) -> Result<SweepStatus> {
    config.validate()?;
    let workers = opts.workers.unwrap_or_else(worker_count);
    with_workers(workers, || sweep_inner(config, dir, opts))?
}

fn sweep_inner(config: &RunConfig, dir: &Path, opts: &SweepOptions) -> Result<SweepStatus> {
    let id = run_id(config);
    let mut manifest = RunManifest::start(config);
    let plan = RecordPlan::new(config.schedule.times())
        .with_distributions(config.schedule.distribution_times.clone());
    let t_max = config.schedule.t_max;
    let points = config.points();
    let mut budget = opts.stop_after_chunks;
    let mut series = Vec::new();
    let mut failed = Vec::new();

    for (i, params) in points.iter().enumerate() {
        let done_path = point_path(dir, i, "series");
        if done_path.exists() {
            let f: Finished = from_json(&done_path)?;
            if f.run_id == id && f.series.params == *params {
                series.push(f.series);
                continue;
            }
        }
        let ckpt_path = point_path(dir, i, "checkpoint");
        let run = match ckpt_path.exists() {
            true => {
                let c: Checkpoint = from_json(&ckpt_path)?;
                if c.run_id == id && c.params == *params {
                    EnsembleRun::resume(
                        *params,
                        config.ensemble.clone(),
                        t_max,
                        plan.clone(),
                        c.acc,
                    )
                } else {
                    EnsembleRun::new(*params, config.ensemble.clone(), t_max, plan.clone())
                }
            }
            false => EnsembleRun::new(*params, config.ensemble.clone(), t_max, plan.clone()),
        };
        let mut run = match run {
            Ok(r) => r,
            Err(e) => {
                failed.push(FailedPoint {
                    k: params.k,
                    epsilon: params.epsilon,
                    error: e.to_string(),
                });
                continue;
            }
        };
        while !run.is_done() {
            if let Some(b) = budget.as_mut() {
                if *b == 0 {
                    return Ok(SweepStatus::Interrupted {
                        points_done: series.len(),
                    });
                }
                *b -= 1;
            }
            run.run_chunk();
            let c = Checkpoint {
                run_id: id.clone(),
                params: *params,
                acc: run.accumulator().clone(),
            };
            write_atomic(&ckpt_path, &to_json(&c)?)?;
        }
        let f = Finished {
            run_id: id.clone(),
            series: run.finish(),
        };
        write_atomic(&done_path, &to_json(&f)?)?;
        let s = f.series;
        let _ = std::fs::remove_file(&ckpt_path);
        if opts.progress {
            eprintln!(
                "point {}/{}: K = {:.4}, epsilon = {:.4}, <p^2>(t_max) = {:.4}",
                i + 1,
                points.len(),
                params.k,
                params.epsilon,
                s.p2_mean.last().copied().unwrap_or(f64::NAN)
            );
        }
        series.push(s);
    }

    let mut outputs = Vec::new();
    let series_path = dir.join("series.csv");
    write_series_csv(&series_path, &id, &series)?;
    outputs.push(series_path);
    if series.iter().any(|s| !s.distributions.is_empty()) {
        let p = dir.join("distributions.csv");
        write_distributions_csv(&p, &id, &series)?;
        outputs.push(p);
    }
    // A single trajectory has no standard error, hence no dataset.
    let dataset = ScalingDataset::from_series(&series, 1.0, t_max as f64).ok();
    if let Some(d) = &dataset {
        let p = dir.join("dataset.csv");
        write_dataset_csv(&p, d)?;
        outputs.push(p);
    }
    if !failed.is_empty() {
        let p = dir.join("failed.toml");
        #[derive(Serialize)]
        struct Failed<'a> {
            failed: &'a [FailedPoint],
        }
        super::io::write_report(&p, &Failed { failed: &failed })?;
        outputs.push(p);
    }
    manifest.finish(&outputs, dir)?;
    Ok(SweepStatus::Complete(SweepOutcome {
        run_id: id,
        series,
        dataset,
        failed,
        outputs,
    }))
}

/// Runs to completion (no interruption budget).
pub fn run_sweep_complete(
    config: &RunConfig,
    dir: &Path,
    opts: &SweepOptions,
) -> Result<SweepOutcome> {
    let opts = SweepOptions {
        stop_after_chunks: None,
        ..*opts
    };
    match run_sweep(config, dir, &opts)? {
        SweepStatus::Complete(o) => Ok(o),
        SweepStatus::Interrupted { .. } => unreachable!("no chunk budget"),
    }
}
