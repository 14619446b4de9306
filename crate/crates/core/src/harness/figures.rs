use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::analysis::{analyze_sweep, crossing_times, nearest_k, normalized_collapse};
use super::config::{with_workers, worker_count, AnalysisConfig, RunConfig, TimeSchedule};
use super::io::{write_report, write_table};
use super::sweep::{run_sweep_complete, SweepOptions};
use crate::classical::{
    classical_diffusion_constant, run_classical_ensemble, ClassicalEnsembleSpec,
};
use crate::error::{invalid, Error, Result};
use crate::model::{caesium_gravity_drift, RotorParams, SweepPath};
use crate::observables::{
    fit_anomalous_diffusion, fit_exponential_localization, fit_offset_anomalous, fit_power_law,
    gaussian_check, EnsembleSeries,
};
use crate::quantum::{estimated_site_updates, EnsembleSpec, InitialCondition, RecordPlan};
use crate::scaling::{
    crossing_points, fit_full_scaling, order_robustness, slope_method, wegner_consistency,
    ScalingDataset,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Seconds; smoke-test sizes.
    Quick,
    /// Desktop sizes used by the acceptance suite.
    Desk,
    /// Long-running sizes (t up to 1e6, 1000 trajectories).
    Paper,
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Scale::Quick),
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(invalid(format!("unknown scale `{s}` (quick, desk, paper)"))),
        }
    }
}

pub const FIGURES: &[&str] = &[
    "fig1", "fig2", "fig3", "fig4", "fig5", "fig7", "fig9", "fig10a", "fig10b", "fig11", "fig12",
    "fig13", "fig15",
];

/// Site updates per second of one worker, for cost estimates.
pub const SITE_UPDATES_PER_SECOND: f64 = 1.2e9;

/// Inverse golden mean.
pub fn golden_eta() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

fn ensemble(n_traj: usize, seed: u64) -> EnsembleSpec {
    EnsembleSpec {
        n_traj,
        seed,
        ..EnsembleSpec::default()
    }
}

/// The K-epsilon sweep along the experimental line, kbar = 2.85.
pub fn main_sweep_config(scale: Scale) -> RunConfig {
    let (n_points, n_traj, t_max) = match scale {
        Scale::Quick => (8, 16, 300),
        Scale::Desk => (20, 200, 10_000),
        Scale::Paper => (20, 1000, 1_000_000),
    };
    RunConfig {
        params: RotorParams::quasiperiodic(4.0, 0.1, 2.85),
        ensemble: ensemble(n_traj, 2024),
        schedule: TimeSchedule::new(1, t_max, 10),
        sweep: Some(SweepPath {
            n_points,
            ..SweepPath::default()
        }),
        analysis: AnalysisConfig::default(),
    }
}

/// Seven K values around the critical point on the same line, longer times.
pub fn slope_sweep_config(scale: Scale) -> RunConfig {
    let (n_traj, t_max) = match scale {
        Scale::Quick => (16, 3000),
        Scale::Desk => (200, 40_000),
        Scale::Paper => (1000, 1_000_000),
    };
    let line = SweepPath::default();
    RunConfig {
        params: RotorParams::quasiperiodic(6.1, line.epsilon_at(6.1), 2.85),
        ensemble: ensemble(n_traj, 4049),
        schedule: TimeSchedule::new(1, t_max, 10),
        sweep: Some(SweepPath {
            k_start: 6.1,
            k_end: 6.7,
            eps_start: line.epsilon_at(6.1),
            eps_end: line.epsilon_at(6.7),
            n_points: 7,
        }),
        analysis: AnalysisConfig::default(),
    }
}

/// One point on the experimental line for the anomalous-diffusion figure.
pub fn critical_point_config(k: f64, scale: Scale) -> RunConfig {
    let (n_traj, t_max) = match scale {
        Scale::Quick => (16, 1000),
        Scale::Desk => (200, 10_000),
        Scale::Paper => (1000, 1_000_000),
    };
    let line = SweepPath::default();
    RunConfig {
        params: RotorParams::quasiperiodic(k, line.epsilon_at(k), 2.85),
        ensemble: ensemble(n_traj, 77),
        schedule: TimeSchedule::new(1, t_max, 10),
        sweep: None,
        analysis: AnalysisConfig::default(),
    }
}

/// Fourth parameter set: kbar = 3.5399, omega = kbar / eta, kbar / eta^2.
pub fn set_d_config(scale: Scale) -> RunConfig {
    let (n_points, n_traj, t_first, t_max) = match scale {
        Scale::Quick => (5, 16, 3, 300),
        Scale::Desk => (9, 200, 100, 10_000),
        Scale::Paper => (9, 1000, 1000, 1_000_000),
    };
    let kbar = 3.5399;
    let eta = golden_eta();
    let params = RotorParams {
        k: 7.9,
        kbar,
        epsilon: 0.425,
        omega2: kbar / eta,
        omega3: kbar / (eta * eta),
        ..RotorParams::default()
    };
    let mut analysis = AnalysisConfig::default();
    analysis.full_t_min = t_first as f64;
    RunConfig {
        params,
        ensemble: ensemble(n_traj, 8090),
        schedule: TimeSchedule::new(t_first, t_max, 8),
        sweep: Some(SweepPath {
            k_start: 7.9,
            k_end: 8.3,
            eps_start: 0.425,
            eps_end: 0.485,
            n_points,
        }),
        analysis,
    }
}

fn run_cost(c: &RunConfig) -> f64 {
    c.points()
        .iter()
        .map(|p| estimated_site_updates(p, &c.ensemble, c.schedule.t_max))
        .sum()
}

/// Rough single-worker wall time (s) of the quantum runs behind a figure.
pub fn cost_estimate(id: &str, scale: Scale) -> Result<f64> {
    let updates = match id {
        "fig1" | "fig3" => 0.0,
        "fig2" | "fig4" | "fig5" => 1e9,
        "fig7" => [5.0, 6.4, 8.0]
            .iter()
            .map(|&k| run_cost(&critical_point_config(k, scale)))
            .sum(),
        "fig9" | "fig10a" | "fig10b" | "fig11" => run_cost(&main_sweep_config(scale)),
        "fig12" => run_cost(&slope_sweep_config(scale)),
        "fig13" | "fig15" => run_cost(&set_d_config(scale)),
        other => return Err(Error::UnknownFigure(other.to_string())),
    };
    Ok(updates / SITE_UPDATES_PER_SECOND)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FigureOptions {
    /// Required for `Scale::Paper`.
    pub allow_paper: bool,
    pub workers: Option<usize>,
    pub progress: bool,
}

#[derive(Debug, Clone)]
pub struct FigureOutput {
    pub id: String,
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Runs the minimal pipeline behind figure `id` and writes its plotted
/// quantities (delimited text) and a fit report into `out/<id>`. Sweeps are
/// cached under `out/runs`, so figures sharing a sweep reuse it.
pub fn reproduce_figure(
    id: &str,
    scale: Scale,
    out: &Path,
    opts: &FigureOptions,
) -> Result<FigureOutput> {
    if !FIGURES.contains(&id) {
        return Err(Error::UnknownFigure(id.to_string()));
    }
    if scale == Scale::Paper && !opts.allow_paper {
        return Err(invalid(format!(
            "paper scale for {id} needs explicit confirmation (estimated {:.1} CPU hours)",
            cost_estimate(id, scale)? / 3600.0
        )));
    }
    let workers = opts.workers.unwrap_or_else(worker_count);
    let dir = out.join(id);
    std::fs::create_dir_all(&dir)?;
    let ctx = Ctx {
        scale,
        runs: out.join("runs"),
        dir: dir.clone(),
        sweep: SweepOptions {
            workers: Some(workers),
            progress: opts.progress,
            ..Default::default()
        },
    };
    let files = with_workers(workers, || match id {
        "fig1" => fig1(&ctx),
        "fig2" => fig2(&ctx),
        "fig3" => fig3(&ctx),
        "fig4" => fig4(&ctx),
        "fig5" => fig5(&ctx),
        "fig7" => fig7(&ctx),
        "fig9" => fig9(&ctx),
        "fig10a" => fig10a(&ctx),
        "fig10b" => fig10b(&ctx),
        "fig11" => fig11(&ctx),
        "fig12" => fig12(&ctx),
        _ => fig13(&ctx),
    })??;
    Ok(FigureOutput {
        id: id.to_string(),
        dir,
        files,
    })
}

struct Ctx {
    scale: Scale,
    runs: PathBuf,
    dir: PathBuf,
    sweep: SweepOptions,
}

impl Ctx {
    fn pick<T>(&self, quick: T, desk: T, paper: T) -> T {
        match self.scale {
            Scale::Quick => quick,
            Scale::Desk => desk,
            Scale::Paper => paper,
        }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn scale_name(&self) -> &'static str {
        self.pick("quick", "desk", "paper")
    }

    /// Runs (or reuses) a cached sweep.
    fn sweep(&self, name: &str, config: &RunConfig) -> Result<Vec<EnsembleSeries>> {
        let dir = self.runs.join(format!("{name}-{}", self.scale_name()));
        let o = run_sweep_complete(config, &dir, &self.sweep)?;
        o.check()?;
        Ok(o.series)
    }
}

fn series_rows(series: &[EnsembleSeries]) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for s in series {
        for (i, &t) in s.times.iter().enumerate() {
            let pi0 = s.pi0.as_ref().map_or(f64::NAN, |v| v[i]);
            rows.push(vec![
                s.params.k,
                s.params.epsilon,
                t as f64,
                s.p2_mean[i],
                s.p2_sem[i],
                pi0,
            ]);
        }
    }
    rows
}

const SERIES_COLUMNS: [&str; 6] = ["K", "epsilon", "t", "p2_mean", "p2_sem", "pi0"];

#[derive(Serialize)]
struct Fig1Report {
    k: f64,
    epsilon: f64,
    kbar: f64,
    t: u64,
    n_traj: usize,
    variance: f64,
    excess_kurtosis: f64,
    gaussian: bool,
    aux_p2_mean: [f64; 2],
    diffusion_per_axis: [f64; 3],
}

fn fig1(c: &Ctx) -> Result<Vec<PathBuf>> {
    let params = RotorParams::quasiperiodic(10.0, 0.8, 2.85);
    let t = c.pick(200, 1000, 1000);
    let spec = ClassicalEnsembleSpec {
        n_traj: c.pick(5_000, 100_000, 1_000_000),
        ..Default::default()
    };
    let cs = run_classical_ensemble(
        &params,
        &spec,
        t,
        &RecordPlan::new(vec![t]).with_distributions(vec![t]),
    )?;
    let d = &cs.series.distributions[0].1;
    let (_, var, kurt) = d.moments();
    let g = gaussian_check(d, 0.1);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
    let rows: Vec<Vec<f64>> = (0..d.mass.len())
        .map(|i| {
            let p = d.center(i);
            vec![p, d.density(i), norm * (-p * p / (2.0 * var)).exp()]
        })
        .collect();
    let f1 = c.file("distribution.csv");
    write_table(&f1, &["p", "density", "gaussian"], &rows)?;
    let diff = classical_diffusion_constant(
        &params,
        &ClassicalEnsembleSpec {
            n_traj: spec.n_traj.min(20_000),
            ..spec
        },
        t.max(100),
    )?;
    let f2 = c.file("report.toml");
    write_report(
        &f2,
        &Fig1Report {
            k: params.k,
            epsilon: params.epsilon,
            kbar: params.kbar,
            t,
            n_traj: spec.n_traj,
            variance: var,
            excess_kurtosis: kurt,
            gaussian: g.accepted,
            aux_p2_mean: [cs.aux_p2_mean[0][0], cs.aux_p2_mean[1][0]],
            diffusion_per_axis: diff.per_axis,
        },
    )?;
    Ok(vec![f1, f2])
}

/// First record time at which `p2` reaches `factor` times `reference`.
fn crossing_time(times: &[u64], p2: &[f64], reference: f64, factor: f64) -> Option<f64> {
    let target = factor * reference;
    for i in 1..times.len() {
        if p2[i] >= target && p2[i - 1] < target {
            let f = (target - p2[i - 1]) / (p2[i] - p2[i - 1]);
            return Some(times[i - 1] as f64 + f * (times[i] - times[i - 1]) as f64);
        }
    }
    None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GravityReport {
    pub alpha_deg: Vec<f64>,
    pub eta_g: Vec<f64>,
    /// Plateau of the untilted run (mean over the last half of the times).
    pub plateau: f64,
    /// First time each tilted curve reaches twice the plateau (NaN if never).
    pub doubling_time: Vec<f64>,
}

/// `<𝔭^2>(t)` of thermal ensembles at K = 5, kbar = 2.85 for several tilts,
/// and the time at which each reaches twice the untilted plateau.
pub fn gravity_runs(
    n_traj: usize,
    t_max: u64,
    alphas_deg: &[f64],
) -> Result<(Vec<EnsembleSeries>, GravityReport)> {
    let times: Vec<u64> = TimeSchedule::new(1, t_max, 20).times();
    let spec = EnsembleSpec {
        n_traj,
        seed: 11,
        initial: InitialCondition::Thermal { fwhm: 4.0 },
        ..EnsembleSpec::default()
    };
    let mut out = Vec::new();
    let mut etas = Vec::new();
    for &a in alphas_deg {
        let eta_g = caesium_gravity_drift(2.85, a.to_radians());
        let params = RotorParams {
            eta_g,
            ..RotorParams::periodic(5.0, 2.85)
        };
        out.push(crate::quantum::evolve_ensemble(
            &params,
            &spec,
            t_max,
            &RecordPlan::new(times.clone()),
        )?);
        etas.push(eta_g);
    }
    let base = out
        .iter()
        .position(|s| s.params.eta_g == 0.0)
        .ok_or_else(|| invalid("gravity runs need the untilted reference (alpha = 0)"))?;
    let b = &out[base];
    let half = b.times.len() / 2;
    let plateau = b.p2_mean[half..].iter().sum::<f64>() / (b.times.len() - half) as f64;
    let doubling = out
        .iter()
        .map(|s| match s.params.eta_g {
            0.0 => f64::NAN,
            _ => crossing_time(&s.times, &s.p2_mean, plateau, 2.0).unwrap_or(f64::NAN),
        })
        .collect();
    Ok((
        out,
        GravityReport {
            alpha_deg: alphas_deg.to_vec(),
            eta_g: etas,
            plateau,
            doubling_time: doubling,
        },
    ))
}

fn fig2(c: &Ctx) -> Result<Vec<PathBuf>> {
    let (series, report) = gravity_runs(
        c.pick(24, 200, 1000),
        c.pick(300, 1000, 3000),
        &[0.0, 0.1, 0.4, 1.0],
    )?;
    let mut rows = Vec::new();
    for (s, a) in series.iter().zip(&report.alpha_deg) {
        for (i, &t) in s.times.iter().enumerate() {
            rows.push(vec![*a, t as f64, s.p2_mean[i], s.p2_sem[i]]);
        }
    }
    let f1 = c.file("p2_vs_t.csv");
    write_table(&f1, &["alpha_deg", "t", "p2_mean", "p2_sem"], &rows)?;
    let f2 = c.file("report.toml");
    write_report(&f2, &report)?;
    Ok(vec![f1, f2])
}

#[derive(Serialize)]
struct SlopeEntry {
    k: f64,
    epsilon: f64,
    exponent: f64,
    exponent_err: f64,
}

#[derive(Serialize)]
struct Fig3Report {
    n_traj: usize,
    t_max: u64,
    fits: Vec<SlopeEntry>,
}

fn fig3(c: &Ctx) -> Result<Vec<PathBuf>> {
    let t_max = 1000;
    let spec = ClassicalEnsembleSpec {
        n_traj: c.pick(2000, 100_000, 100_000),
        ..Default::default()
    };
    let times = TimeSchedule::new(1, t_max, 10).times();
    let path = SweepPath {
        n_points: c.pick(4, 10, 20),
        ..SweepPath::default()
    };
    let mut series = Vec::new();
    let mut fits = Vec::new();
    for (k, e) in path.points() {
        let p = RotorParams::quasiperiodic(k, e, 2.85);
        let s = run_classical_ensemble(&p, &spec, t_max, &RecordPlan::new(times.clone()))?.series;
        let f = fit_power_law(&s, (100, t_max), 1.0)?;
        fits.push(SlopeEntry {
            k,
            epsilon: e,
            exponent: f.exponent,
            exponent_err: f.exponent_err,
        });
        series.push(s);
    }
    let f1 = c.file("p2_vs_t.csv");
    write_table(&f1, &SERIES_COLUMNS, &series_rows(&series))?;
    let f2 = c.file("report.toml");
    write_report(
        &f2,
        &Fig3Report {
            n_traj: spec.n_traj,
            t_max,
            fits,
        },
    )?;
    Ok(vec![f1, f2])
}

#[derive(Serialize)]
struct DistributionEntry {
    k: f64,
    epsilon: f64,
    localization_length: Option<f64>,
    localization_length_err: Option<f64>,
    exponential_error: Option<String>,
    excess_kurtosis: f64,
    gaussian: bool,
}

/// Localized (K = 5) or diffusive (K = 9) point at kbar = 2.89 with the
/// momentum distribution recorded at `t`.
pub fn distribution_config(k: f64, epsilon: f64, t: u64, scale: Scale) -> RunConfig {
    let mut cfg = critical_point_config(k, scale);
    cfg.params = RotorParams::quasiperiodic(k, epsilon, 2.89);
    cfg.ensemble.n_traj = match scale {
        Scale::Quick => 32,
        Scale::Desk => 500,
        Scale::Paper => 2000,
    };
    cfg.schedule = TimeSchedule {
        t_first: 1,
        t_max: t,
        points_per_decade: 20,
        distribution_times: vec![t],
    };
    cfg
}

fn distribution_runs(c: &Ctx, t: u64) -> Result<Vec<EnsembleSeries>> {
    let mut out = Vec::new();
    for (k, e) in [(5.0, 0.24), (9.0, 0.8)] {
        let cfg = distribution_config(k, e, t, c.scale);
        out.extend(c.sweep(&format!("dist-k{k}"), &cfg)?);
    }
    Ok(out)
}

fn fig4(c: &Ctx) -> Result<Vec<PathBuf>> {
    let series = distribution_runs(c, 150)?;
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for s in &series {
        let (_, d) = &s.distributions[0];
        for i in 0..d.mass.len() {
            rows.push(vec![
                s.params.k,
                s.params.epsilon,
                d.center(i),
                d.density(i),
            ]);
        }
        let ex = fit_exponential_localization(d);
        let (_, _, kurt) = d.moments();
        entries.push(DistributionEntry {
            k: s.params.k,
            epsilon: s.params.epsilon,
            localization_length: ex.as_ref().ok().map(|f| f.ell),
            localization_length_err: ex.as_ref().ok().map(|f| f.ell_err),
            exponential_error: ex.err().map(|e| e.to_string()),
            excess_kurtosis: kurt,
            gaussian: gaussian_check(d, 0.5).accepted,
        });
    }
    let f1 = c.file("distributions.csv");
    write_table(&f1, &["K", "epsilon", "p", "density"], &rows)?;
    #[derive(Serialize)]
    struct R {
        t: u64,
        distributions: Vec<DistributionEntry>,
    }
    let f2 = c.file("report.toml");
    write_report(
        &f2,
        &R {
            t: 150,
            distributions: entries,
        },
    )?;
    Ok(vec![f1, f2])
}

fn fig5(c: &Ctx) -> Result<Vec<PathBuf>> {
    let n = c.pick(32, 500, 2000);
    let t_max = c.pick(150, 1000, 1000);
    let mut series = Vec::new();
    for (k, e) in [(4.0, 0.1), (9.0, 0.8)] {
        let mut cfg = critical_point_config(k, c.scale);
        cfg.params = RotorParams::quasiperiodic(k, e, 2.89);
        cfg.ensemble.n_traj = n;
        cfg.schedule = TimeSchedule::new(1, t_max, 20);
        series.extend(c.sweep(&format!("pi0-k{k}"), &cfg)?);
    }
    let mut rows = Vec::new();
    for s in &series {
        let pi0 = s.pi0.as_ref().expect("quantum series carry pi0");
        for (i, &t) in s.times.iter().enumerate() {
            rows.push(vec![
                s.params.k,
                s.params.epsilon,
                t as f64,
                s.p2_mean[i],
                pi0[i].powi(-2),
            ]);
        }
    }
    let f1 = c.file("kinetic_energy.csv");
    write_table(&f1, &["K", "epsilon", "t", "p2_mean", "pi0_inv_sq"], &rows)?;
    #[derive(Serialize)]
    struct R {
        fits: Vec<SlopeEntry>,
    }
    let fits = series
        .iter()
        .filter_map(|s| {
            let tm = *s.times.last().unwrap();
            fit_power_law(s, (tm / 10, tm), 1.0)
                .ok()
                .map(|f| SlopeEntry {
                    k: s.params.k,
                    epsilon: s.params.epsilon,
                    exponent: f.exponent,
                    exponent_err: f.exponent_err,
                })
        })
        .collect();
    let f2 = c.file("report.toml");
    write_report(&f2, &R { fits })?;
    Ok(vec![f1, f2])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalDiffusionReport {
    pub k: Vec<f64>,
    pub exponent: f64,
    pub exponent_err: f64,
    pub curvature_warning: bool,
    pub offset_a: Option<f64>,
    pub offset_b: Option<f64>,
    /// Log-slope of `<𝔭^2>` over the last decade, per K.
    pub late_slopes: Vec<f64>,
    pub wegner_deviation: f64,
    pub wegner_consistent: bool,
}

/// Series at K = 5, 6.4, 8 and the anomalous-diffusion analysis.
pub fn critical_diffusion(
    series: &[EnsembleSeries],
    window: (u64, u64),
) -> Result<CriticalDiffusionReport> {
    let crit = series
        .iter()
        .min_by(|a, b| {
            (a.params.k - 6.4)
                .abs()
                .total_cmp(&(b.params.k - 6.4).abs())
        })
        .ok_or_else(|| Error::InsufficientData("no series".into()))?;
    let fit = fit_anomalous_diffusion(crit, window)?;
    let off = fit_offset_anomalous(crit, window).ok();
    let late: Vec<f64> = series
        .iter()
        .map(|s| {
            let tm = *s.times.last().unwrap();
            fit_power_law(s, (tm / 10, tm), 1.0).map_or(f64::NAN, |f| f.exponent)
        })
        .collect();
    let w = wegner_consistency(fit.exponent);
    Ok(CriticalDiffusionReport {
        k: series.iter().map(|s| s.params.k).collect(),
        exponent: fit.exponent,
        exponent_err: fit.exponent_err,
        curvature_warning: fit.curvature_warning,
        offset_a: off.map(|o| o.a),
        offset_b: off.map(|o| o.b),
        late_slopes: late,
        wegner_deviation: w.deviation,
        wegner_consistent: w.consistent,
    })
}

/// Runs (or reuses) the three anomalous-diffusion points.
pub fn critical_series(
    scale: Scale,
    runs: &Path,
    sweep: &SweepOptions,
) -> Result<Vec<EnsembleSeries>> {
    let mut out = Vec::new();
    for k in [5.0, 6.4, 8.0] {
        let name = match scale {
            Scale::Quick => "quick",
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        };
        let dir = runs.join(format!("critical-k{k}-{name}"));
        let o = run_sweep_complete(&critical_point_config(k, scale), &dir, sweep)?;
        o.check()?;
        out.extend(o.series);
    }
    Ok(out)
}

fn fig7(c: &Ctx) -> Result<Vec<PathBuf>> {
    let series = critical_series(c.scale, &c.runs, &c.sweep)?;
    let t_max = *series[0].times.last().unwrap();
    let window = (c.pick(10, 100, 100), t_max);
    let f1 = c.file("p2_vs_t.csv");
    write_table(&f1, &SERIES_COLUMNS, &series_rows(&series))?;
    let f2 = c.file("report.toml");
    write_report(&f2, &critical_diffusion(&series, window)?)?;
    Ok(vec![f1, f2])
}

fn main_dataset(c: &Ctx) -> Result<(ScalingDataset, AnalysisConfig)> {
    let cfg = main_sweep_config(c.scale);
    let series = c.sweep("main", &cfg)?;
    let d = ScalingDataset::from_series(&series, 1.0, cfg.schedule.t_max as f64)?;
    Ok((d, cfg.analysis))
}

fn fig9(c: &Ctx) -> Result<Vec<PathBuf>> {
    let (d, _) = main_dataset(c)?;
    let mut rows = Vec::new();
    for i in 0..d.n_k() {
        for j in 0..d.n_t() {
            rows.push(vec![d.k[i], d.t[j].ln(), d.ln_lambda[i][j], d.sigma[i][j]]);
        }
    }
    let f = c.file("ln_lambda_vs_ln_t.csv");
    write_table(&f, &["K", "ln_t", "ln_lambda", "sigma"], &rows)?;
    Ok(vec![f])
}

fn fig10a(c: &Ctx) -> Result<Vec<PathBuf>> {
    let (d, cfg) = main_dataset(c)?;
    let d = d.restrict(
        f64::NEG_INFINITY,
        f64::INFINITY,
        cfg.collapse_t_min,
        f64::INFINITY,
    )?;
    let (r, refs) = normalized_collapse(&d, &cfg)?;
    let mut rows = Vec::new();
    for i in 0..d.n_k() {
        for j in 0..d.n_t() {
            rows.push(vec![
                d.k[i],
                r.ln_xi[i] - d.t[j].ln() / 3.0,
                d.ln_lambda[i][j],
            ]);
        }
    }
    let f1 = c.file("collapsed_points.csv");
    write_table(&f1, &["K", "ln_xi_t13", "ln_lambda"], &rows)?;
    let curve: Vec<Vec<f64>> = r
        .curve_samples(400)
        .into_iter()
        .map(|(x, y)| vec![x, y])
        .collect();
    let f2 = c.file("scaling_function.csv");
    write_table(&f2, &["ln_xi_t13", "ln_lambda"], &curve)?;
    #[derive(Serialize)]
    struct R {
        reduced_chi2: f64,
        residual_variance: f64,
        converged: bool,
        iterations: usize,
        reference_k: Vec<f64>,
    }
    let f3 = c.file("report.toml");
    write_report(
        &f3,
        &R {
            reduced_chi2: r.reduced_chi2,
            residual_variance: r.residual_variance,
            converged: r.converged,
            iterations: r.iterations,
            reference_k: refs,
        },
    )?;
    Ok(vec![f1, f2, f3])
}

fn fig10b(c: &Ctx) -> Result<Vec<PathBuf>> {
    let (d, cfg) = main_dataset(c)?;
    let a = analyze_sweep(&d, &cfg, c.scale != Scale::Quick)?;
    let rows: Vec<Vec<f64>> = (0..a.k.len())
        .map(|i| vec![a.k[i], a.ln_xi[i].exp(), a.ln_xi[i].exp() * a.ln_xi_err[i]])
        .collect();
    let f1 = c.file("xi_vs_k.csv");
    write_table(&f1, &["K", "xi", "xi_err"], &rows)?;
    let f2 = c.file("report.toml");
    write_report(&f2, &a)?;
    Ok(vec![f1, f2])
}

fn fig11(c: &Ctx) -> Result<Vec<PathBuf>> {
    let (d, cfg) = main_dataset(c)?;
    let d = d.restrict(
        f64::NEG_INFINITY,
        f64::INFINITY,
        cfg.collapse_t_min,
        f64::INFINITY,
    )?;
    let times = crossing_times(&d);
    let mut rows = Vec::new();
    for &t in &times {
        let j = (0..d.n_t())
            .min_by(|&a, &b| {
                (d.t[a].ln() - t.ln())
                    .abs()
                    .total_cmp(&(d.t[b].ln() - t.ln()).abs())
            })
            .unwrap();
        for i in 0..d.n_k() {
            rows.push(vec![d.t[j], d.k[i], d.ln_lambda[i][j], d.sigma[i][j]]);
        }
    }
    let f1 = c.file("ln_lambda_vs_k.csv");
    write_table(&f1, &["t", "K", "ln_lambda", "sigma"], &rows)?;
    let f2 = c.file("report.toml");
    write_report(&f2, &crossing_points(&d, &times)?)?;
    Ok(vec![f1, f2])
}

/// Slope-method dataset: seven K values nearest 6.4, `t >= 30`.
pub fn slope_dataset(series: &[EnsembleSeries], t_max: u64) -> Result<ScalingDataset> {
    let d = ScalingDataset::from_series(series, 30.0, t_max as f64)?;
    nearest_k(&d, 6.4, 7.min(d.n_k()))
}

fn fig12(c: &Ctx) -> Result<Vec<PathBuf>> {
    let cfg = slope_sweep_config(c.scale);
    let series = c.sweep("slope", &cfg)?;
    let d = slope_dataset(&series, cfg.schedule.t_max)?;
    let r = slope_method(&d, (d.k[0] - 1e-9, d.k[d.n_k() - 1] + 1e-9))?;
    let rows: Vec<Vec<f64>> = r
        .derivatives
        .iter()
        .map(|(t, v, e)| vec![t.ln(), v.ln(), e / v])
        .collect();
    let f1 = c.file("ln_derivative_vs_ln_t.csv");
    write_table(&f1, &["ln_t", "ln_dlnlambda_dk", "sigma"], &rows)?;
    let f2 = c.file("report.toml");
    write_report(&f2, &r)?;
    Ok(vec![f1, f2])
}

fn fig13(c: &Ctx) -> Result<Vec<PathBuf>> {
    let cfg = set_d_config(c.scale);
    let series = c.sweep("set-d", &cfg)?;
    let d =
        ScalingDataset::from_series(&series, cfg.analysis.full_t_min, cfg.schedule.t_max as f64)?;
    let fit = fit_full_scaling(&d, cfg.analysis.orders)?;
    let corrected = fit.corrected(&d);
    let mut rows = Vec::new();
    for i in 0..d.n_k() {
        for j in 0..d.n_t() {
            let (ur, _) = fit.scaling_variables(d.k[i], d.t[j]);
            // ln(xi / t^(1/3)) with xi = |poly(w)|^(-nu)
            let x = -fit.nu * ur.abs().ln();
            rows.push(vec![d.k[i], d.t[j], x, corrected[i][j], d.sigma[i][j]]);
        }
    }
    let f1 = c.file("corrected_ln_lambda.csv");
    write_table(&f1, &["K", "t", "ln_xi_t13", "ln_lambda_s", "sigma"], &rows)?;
    #[derive(Serialize)]
    struct R {
        fit: crate::scaling::CriticalFit,
        robustness: Vec<crate::scaling::OrderVariant>,
    }
    let f2 = c.file("report.toml");
    write_report(
        &f2,
        &R {
            fit: fit.clone(),
            robustness: order_robustness(&d, cfg.analysis.orders),
        },
    )?;
    Ok(vec![f1, f2])
}
