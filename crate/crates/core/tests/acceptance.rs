//! Acceptance suite. Prints one line per criterion and fails only when a
//! criterion outside `EXPECTED_FAILURES` fails.
//!
//! Long simulations are cached under `target/qkr-acceptance` (override with
//! `QKR_ACCEPTANCE_CACHE`); the first run takes a few hours on one core.
//! `QKR_ACCEPTANCE_ONLY=3,5` restricts the run to some criteria.

use std::f64::consts::TAU;
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;
use qkr_core::anderson::{
    commensurability_check, detect_period, fit_hopping_decay, hopping_coefficients_1d,
    hopping_coefficients_3d, onsite_energies_1d, Hopping3dOptions,
};
use qkr_core::classical::{
    classical_diffusion_constant, quasilinear_diffusion, run_classical_ensemble,
    ClassicalEnsembleSpec,
};
use qkr_core::harness::{
    analyze_sweep, critical_diffusion, critical_series, distribution_config, file_hash,
    gravity_runs, main_sweep_config, reproduce_figure, run_sweep, run_sweep_complete, set_d_config,
    slope_dataset, slope_sweep_config, FigureOptions, RunConfig, Scale, SweepOptions, SweepStatus,
    TimeSchedule,
};
use qkr_core::observables::{
    fit_exponential_localization, fit_power_law, gaussian_check, EnsembleSeries,
};
use qkr_core::quantum::{
    dense_oracle_evolve, evolve_ensemble, trajectory_rng, BetaSampling, EnsembleSpec, MomentumGrid,
    Propagator, RecordPlan, WaveState,
};
use qkr_core::scaling::{
    bootstrap_full_fit, fit_full_scaling, slope_method, synthetic_full_dataset, BootstrapOptions,
    CriticalFit, Interval, ScalingDataset, ScalingOrders,
};
use qkr_core::{RotorParams, SweepPath};
use rand::Rng;

/// Criteria allowed to fail; the reasons are in the README.
const EXPECTED_FAILURES: &[u32] = &[3, 5, 9];

struct Part {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn part(name: &'static str, pass: bool, detail: String) -> Part {
    Part { name, pass, detail }
}

fn cache() -> PathBuf {
    std::env::var_os("QKR_ACCEPTANCE_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/qkr-acceptance")
        })
}

fn sweep_opts() -> SweepOptions {
    SweepOptions {
        progress: std::env::var_os("QKR_ACCEPTANCE_PROGRESS").is_some(),
        ..SweepOptions::default()
    }
}

fn cached(name: &str, cfg: &RunConfig) -> Vec<EnsembleSeries> {
    let dir = cache().join("runs").join(format!("{name}-desk"));
    let o = run_sweep_complete(cfg, &dir, &sweep_opts()).expect("sweep");
    o.check().expect("every point succeeds");
    o.series
}

fn inside(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

fn criterion_1() -> Vec<Part> {
    let n = 64;
    let mut rng = trajectory_rng(101, 0);
    let mut worst = 0.0f64;
    for _ in 0..8 {
        let params = RotorParams::quasiperiodic(
            rng.gen_range(1.0..8.0),
            rng.gen_range(0.0..0.8),
            rng.gen_range(1.0..4.0),
        );
        let grid = MomentumGrid::new(n, rng.gen()).unwrap();
        let amps: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let s0 = WaveState::from_amplitudes(grid, amps.iter().map(|a| a / norm).collect()).unwrap();
        let mut s = s0.clone();
        let mut prop = Propagator::new(n);
        for _ in 0..10 {
            prop.step(&mut s, &params);
        }
        let d = dense_oracle_evolve(&params, &s0, 10).unwrap();
        for (a, b) in s.amplitudes.iter().zip(&d.amplitudes) {
            worst = worst.max((a - b).norm());
        }
    }

    let params = RotorParams::quasiperiodic(6.4, 0.43, 2.85);
    let mut s = WaveState::plane_wave(MomentumGrid::new(2048, 0.3).unwrap(), 0).unwrap();
    let mut prop = Propagator::new(2048);
    let mut drift = 0.0f64;
    for _ in 0..10_000 {
        prop.step(&mut s, &params);
        drift = drift.max((s.norm_sqr() - 1.0).abs());
    }
    vec![
        part(
            "split-step vs dense",
            worst < 1e-10,
            format!("max diff {worst:.1e}"),
        ),
        part(
            "norm drift 1e4 kicks",
            drift < 1e-10,
            format!("{drift:.1e}"),
        ),
    ]
}

fn criterion_2() -> Vec<Part> {
    let spec = ClassicalEnsembleSpec {
        n_traj: 100_000,
        ..Default::default()
    };
    let times = TimeSchedule::new(1, 1000, 10).times();
    let path = SweepPath {
        n_points: 5,
        ..SweepPath::default()
    };
    let mut worst = 0.0f64;
    let mut slopes = Vec::new();
    for (k, e) in path.points() {
        let p = RotorParams::quasiperiodic(k, e, 2.85);
        let s = run_classical_ensemble(&p, &spec, 1000, &RecordPlan::new(times.clone()))
            .unwrap()
            .series;
        let f = fit_power_law(&s, (100, 1000), 1.0).unwrap();
        worst = worst.max((f.exponent - 1.0).abs());
        slopes.push(format!("{:.3}", f.exponent));
    }
    let d_spec = ClassicalEnsembleSpec {
        n_traj: 20_000,
        ..Default::default()
    };
    let ql = quasilinear_diffusion(10.0, 2.85);
    let d =
        classical_diffusion_constant(&RotorParams::quasiperiodic(10.0, 0.8, 2.85), &d_spec, 1000)
            .unwrap()
            .d;
    let d0 = classical_diffusion_constant(&RotorParams::periodic(10.0, 2.85), &d_spec, 1000)
        .unwrap()
        .d;
    vec![
        part(
            "path slopes",
            worst <= 0.05,
            format!("[{}] on t in [100, 1000]", slopes.join(", ")),
        ),
        part(
            "D(K=10)",
            (d / ql - 1.0).abs() < 0.25,
            format!(
                "{d:.3} vs K^2/2kbar^2 = {ql:.3} at eps 0.8 (eps 0: {d0:.3}, ratio {:.2})",
                d0 / ql
            ),
        ),
    ]
}

fn criterion_3() -> Vec<Part> {
    let mut parts = Vec::new();
    for (k, e) in [(5.0, 0.24), (9.0, 0.8)] {
        let s = cached(
            &format!("dist-k{k}"),
            &distribution_config(k, e, 150, Scale::Desk),
        );
        let s = &s[0];
        let d = s.distribution_at(150).unwrap();
        let ex = fit_exponential_localization(d);
        let g = gaussian_check(d, 0.1);
        if k == 5.0 {
            let late = fit_power_law(s, (50, 150), 0.4).unwrap().exponent;
            parts.push(part(
                "K=5 plateau",
                late.abs() < 0.1,
                format!("late slope {late:.3}"),
            ));
            parts.push(part(
                "K=5 exponential",
                ex.is_ok(),
                match &ex {
                    Ok(f) => format!("ell {:.2}, reduced chi2 {:.2}", f.ell, f.reduced_chi2),
                    Err(e) => e.to_string(),
                },
            ));
        } else {
            let slope = fit_power_law(s, (15, 150), 1.0).unwrap().exponent;
            parts.push(part(
                "K=9 slope",
                (slope - 1.0).abs() <= 0.05,
                format!("{slope:.3}"),
            ));
            parts.push(part(
                "K=9 Gaussian",
                g.accepted,
                format!("excess kurtosis {:.3}", g.excess_kurtosis),
            ));
            parts.push(part(
                "K=9 exponential rejected",
                ex.is_err(),
                ex.err().map_or("accepted".into(), |e| e.to_string()),
            ));
        }
    }
    parts
}

fn criterion_4() -> Vec<Part> {
    let series = critical_series(Scale::Desk, &cache().join("runs"), &sweep_opts()).unwrap();
    let r = critical_diffusion(&series, (100, 10_000)).unwrap();
    let late = |k: f64| r.late_slopes[r.k.iter().position(|&v| v == k).unwrap()];
    vec![
        part(
            "exponent at K=6.4",
            (r.exponent - 0.667).abs() <= 0.02,
            format!("{:.4} +- {:.4}", r.exponent, r.exponent_err),
        ),
        part(
            "K=5 below",
            late(5.0) < 0.6,
            format!("late slope {:.3}", late(5.0)),
        ),
        part(
            "K=8 above",
            late(8.0) > 0.75,
            format!("late slope {:.3}", late(8.0)),
        ),
    ]
}

fn main_dataset() -> (ScalingDataset, qkr_core::harness::AnalysisConfig) {
    let cfg = main_sweep_config(Scale::Desk);
    let series = cached("main", &cfg);
    let d = ScalingDataset::from_series(&series, 1.0, cfg.schedule.t_max as f64).unwrap();
    (d, cfg.analysis)
}

fn criterion_5() -> Vec<Part> {
    let (d, cfg) = main_dataset();
    let a = analyze_sweep(&d, &cfg, true).unwrap();
    let mut parts = vec![part(
        "collapse",
        a.collapse_reduced_chi2 < 2.0,
        format!(
            "reduced chi2 {:.2}, isolated K {:?}",
            a.collapse_reduced_chi2, a.isolated_k
        ),
    )];
    match (&a.cutoff, &a.nu_bootstrap) {
        (Some(c), Some(ci)) => {
            parts.push(part(
                "Kc",
                (c.kc - 6.4).abs() <= 0.2,
                format!("{:.3} +- {:.3}", c.kc, c.kc_err),
            ));
            parts.push(part(
                "nu",
                inside(c.nu, 1.4, 1.8) && inside(1.59, ci.lower, ci.upper),
                format!("{:.3}, bootstrap [{:.3}, {:.3}]", c.nu, ci.lower, ci.upper),
            ));
        }
        _ => parts.push(part(
            "cutoff fit",
            false,
            a.cutoff_error.clone().unwrap_or_default(),
        )),
    }
    match &a.crossings {
        Some(cr) => parts.push(part(
            "crossings",
            cr.crossings.len() == 6 && cr.k_spread < 0.2 && (cr.mean_ln_lambda - 1.6).abs() <= 0.3,
            format!(
                "{} pairs, K spread {:.3}, mean K {:.3}, ln Lambda {:.3}",
                cr.crossings.len(),
                cr.k_spread,
                cr.mean_k,
                cr.mean_ln_lambda
            ),
        )),
        None => parts.push(part("crossings", false, "no crossing".into())),
    }
    parts
}

fn criterion_6() -> Vec<Part> {
    let cfg = slope_sweep_config(Scale::Desk);
    let series = cached("slope", &cfg);
    let d = slope_dataset(&series, cfg.schedule.t_max).unwrap();
    let r = slope_method(&d, (d.k[0] - 1e-9, d.k[d.n_k() - 1] + 1e-9));
    vec![match r {
        Ok(r) => part(
            "slope method",
            (r.nu - 1.61).abs() <= 0.15,
            format!("nu {:.3} +- {:.3}", r.nu, r.nu_err),
        ),
        Err(e) => part("slope method", false, e.to_string()),
    }]
}

fn synthetic_truth() -> CriticalFit {
    CriticalFit {
        orders: ScalingOrders::default(),
        kc: 8.09,
        kc_err: 0.0,
        nu: 1.59,
        nu_err: 0.0,
        ln_lambda_c: 1.64,
        ln_lambda_c_err: 0.0,
        y: Some(0.43),
        y_err: None,
        b: vec![1.0, 0.3],
        f: vec![
            vec![1.64, -1.2],
            vec![0.9, 0.2],
            vec![0.15, 0.0],
            vec![0.02, 0.0],
        ],
        chi2: 0.0,
        dof: 0,
        reduced_chi2: 0.0,
        k_window: (0.0, 0.0),
        t_window: (0.0, 0.0),
        ci: None,
    }
}

fn covers(i: &Interval, x: f64) -> bool {
    inside(x, i.lower, i.upper)
}

fn criterion_7() -> Vec<Part> {
    let truth = synthetic_truth();
    let k: Vec<f64> = (0..15).map(|i| 7.4 + 0.1 * i as f64).collect();
    let t: Vec<f64> = (0..13).map(|i| 1e3 * 10f64.powf(i as f64 / 4.0)).collect();
    let sigma = 0.0015;
    let targets = [truth.kc, truth.nu, truth.y.unwrap()];

    let d = synthetic_full_dataset(&truth, &k, &t, sigma, 7001).unwrap();
    let fit = fit_full_scaling(&d, ScalingOrders::default()).unwrap();
    let fit = bootstrap_full_fit(&d, &fit, &BootstrapOptions::default()).unwrap();
    let ci = fit.ci.clone().unwrap();
    let est = [fit.kc, fit.nu, fit.y.unwrap()];
    let ints = [ci.kc.clone(), ci.nu.clone(), ci.y.clone().unwrap()];
    // Twice the reported 68% half-widths on each side.
    let recovered = (0..3).all(|p| {
        let lo = est[p] - 2.0 * (est[p] - ints[p].lower);
        let hi = est[p] + 2.0 * (ints[p].upper - est[p]);
        inside(targets[p], lo, hi)
    });

    let trials = 500;
    let mut hits = [0usize; 3];
    let mut failed = 0;
    for i in 0..trials {
        let d = synthetic_full_dataset(&truth, &k, &t, sigma, 20_000 + i as u64).unwrap();
        let r = fit_full_scaling(&d, ScalingOrders::default()).and_then(|f| {
            bootstrap_full_fit(
                &d,
                &f,
                &BootstrapOptions {
                    seed: 1_000_003 * (i as u64 + 1),
                    ..BootstrapOptions::default()
                },
            )
        });
        match r {
            Ok(f) => {
                let ci = f.ci.unwrap();
                let ints = [ci.kc, ci.nu, ci.y.unwrap()];
                for p in 0..3 {
                    hits[p] += covers(&ints[p], targets[p]) as usize;
                }
            }
            Err(_) => failed += 1,
        }
    }
    let done = (trials - failed) as f64;
    let cov: Vec<f64> = hits.iter().map(|&h| h as f64 / done).collect();
    let coverage_ok = failed * 20 < trials && cov.iter().all(|c| (c - 0.68).abs() <= 0.05);

    let paper = paper_mode_checkpoint();
    vec![
        part(
            "synthetic recovery",
            recovered,
            format!(
                "Kc {:.4} [{:.4}, {:.4}], nu {:.3} [{:.3}, {:.3}], y {:.3} [{:.3}, {:.3}]",
                est[0],
                ints[0].lower,
                ints[0].upper,
                est[1],
                ints[1].lower,
                ints[1].upper,
                est[2],
                ints[2].lower,
                ints[2].upper
            ),
        ),
        part(
            "bootstrap coverage",
            coverage_ok,
            format!(
                "Kc {:.3}, nu {:.3}, y {:.3} over {} trials ({} failed)",
                cov[0], cov[1], cov[2], trials, failed
            ),
        ),
        paper,
    ]
}

/// Paper-size ensembles on a truncated schedule, interrupted repeatedly and
/// resumed, must match an uninterrupted run byte for byte.
fn paper_mode_checkpoint() -> Part {
    let gate = reproduce_figure(
        "fig13",
        Scale::Paper,
        &cache().join("paper-gate"),
        &FigureOptions::default(),
    );
    let gated = matches!(&gate, Err(e) if e.to_string().contains("CPU hours"));

    let mut cfg = set_d_config(Scale::Paper);
    cfg.schedule = TimeSchedule::new(10, 200, 8);
    cfg.sweep.as_mut().unwrap().n_points = 2;
    let full = tempfile::tempdir().unwrap();
    run_sweep_complete(&cfg, full.path(), &sweep_opts()).unwrap();
    let cut = tempfile::tempdir().unwrap();
    let mut stops = 0;
    while let SweepStatus::Interrupted { .. } = run_sweep(
        &cfg,
        cut.path(),
        &SweepOptions {
            stop_after_chunks: Some(9),
            ..sweep_opts()
        },
    )
    .unwrap()
    {
        stops += 1;
    }
    let same = ["dataset.csv", "series.csv"].iter().all(|f| {
        file_hash(&full.path().join(f)).unwrap() == file_hash(&cut.path().join(f)).unwrap()
    });
    part(
        "paper mode",
        gated && same && stops > 0,
        format!(
            "{} trajectories, t <= 200, {stops} interruptions, resumed output identical: {same}, confirmation required: {gated}",
            cfg.ensemble.n_traj
        ),
    )
}

fn criterion_8() -> Vec<Part> {
    let (k, kbar) = (5.0, 2.89);
    let h = hopping_coefficients_1d(k, kbar, 41, 1 << 14).unwrap();
    let decay = fit_hopping_decay(&h, 1, 41).unwrap();

    let simpson = |f: &dyn Fn(f64) -> f64, n: usize| {
        let step = TAU / n as f64;
        let mut s = f(0.0) + f(TAU);
        for i in 1..n {
            s += f(i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * step / 3.0
    };
    let quad = (0..=15i64)
        .map(|r| {
            let q = simpson(
                &|x: f64| (k * x.cos() / (2.0 * kbar)).tan() * (r as f64 * x).cos(),
                20_000,
            ) / TAU;
            (h.get(r) - q).abs()
        })
        .fold(0.0, f64::max);

    let opts = Hopping3dOptions::default();
    let h3 = hopping_coefficients_3d(k, 0.0, kbar, [9, 3, 3], &opts).unwrap();
    let h1 = hopping_coefficients_1d(k, kbar, 9, opts.n1).unwrap();
    let mut fact = 0.0f64;
    for r1 in -9..=9i64 {
        for r2 in -3..=3i64 {
            for r3 in -3..=3i64 {
                let want = if r2 == 0 && r3 == 0 { h1.get(r1) } else { 0.0 };
                fact = fact.max((h3.get([r1, r2, r3]) - want).abs());
            }
        }
    }

    let periodic = [(1i64, 3i64), (2, 5), (3, 7)].iter().all(|&(p, q)| {
        let e = onsite_energies_1d(TAU * p as f64 / q as f64, 0.4, -200..=200, 0.0).unwrap();
        detect_period(&e.values, 100, 1e-7).map_or(false, |period| (2 * q) % period as i64 == 0)
    });

    let c = commensurability_check(2.85, TAU * 5f64.sqrt(), TAU * 13f64.sqrt(), 1e-3, 20).unwrap();
    let smallest = c
        .pairs
        .iter()
        .map(|p| p.best.residual)
        .fold(f64::INFINITY, f64::min);
    vec![
        part(
            "W_r decay",
            decay.gamma > 0.0,
            format!("gamma {:.3} +- {:.3}", decay.gamma, decay.gamma_err),
        ),
        part(
            "W_r vs quadrature",
            quad < 1e-8,
            format!("max diff {quad:.1e}"),
        ),
        part(
            "eps=0 factorization",
            fact < 1e-13,
            format!("max diff {fact:.1e}"),
        ),
        part(
            "rational kbar periodic",
            periodic,
            "p/q = 1/3, 2/5, 3/7".into(),
        ),
        part(
            "set A commensurability",
            c.is_clean(),
            format!(
                "{} flags, smallest pair residual {smallest:.3}",
                c.flags.len()
            ),
        ),
    ]
}

/// Growth exponent over `[10, 1000]` and the largest `<𝔭^2>` seen.
fn resonance(kbar: f64, beta: f64) -> (f64, f64) {
    let times = TimeSchedule::new(1, 1000, 10).times();
    let spec = EnsembleSpec {
        n_traj: 1,
        beta_sampling: BetaSampling::Fixed(beta),
        ..EnsembleSpec::default()
    };
    let s = evolve_ensemble(
        &RotorParams::periodic(2.0, kbar),
        &spec,
        1000,
        &RecordPlan::new(times),
    )
    .unwrap();
    let k = fit_power_law(&s, (10, 1000), 1.0).unwrap().exponent;
    (k, s.p2_mean.iter().cloned().fold(0.0, f64::max))
}

fn criterion_9() -> Vec<Part> {
    let (lit, lit_max) = resonance(TAU, 0.0);
    let (half, _) = resonance(TAU, 0.5);
    let (four, _) = resonance(2.0 * TAU, 0.0);
    let (_, g) = gravity_runs(200, 1000, &[0.0, 1.0]).unwrap();
    let dt = g.doubling_time[1];
    vec![
        part(
            "resonance kbar=2pi, beta=0",
            (lit - 2.0).abs() <= 0.05,
            format!(
                "exponent {lit:.3}, max <p^2> {lit_max:.3} (beta=1/2: {half:.3}; kbar=4pi, beta=0: {four:.3})"
            ),
        ),
        part(
            "gravity doubling",
            inside(dt, 84.0, 156.0),
            format!("alpha 1 deg doubles the plateau at t = {dt:.0}"),
        ),
    ]
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("QKR_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn() -> Vec<Part>); 9] = [
        (1, "unitarity and dense oracle", criterion_1),
        (2, "classical diffusion", criterion_2),
        (3, "dynamical localization", criterion_3),
        (4, "critical anomalous diffusion", criterion_4),
        (5, "collapse, cutoff fit, crossings", criterion_5),
        (6, "slope method", criterion_6),
        (
            7,
            "full scaling fit (synthetic) and paper mode",
            criterion_7,
        ),
        (8, "Anderson mapping", criterion_8),
        (9, "resonance and gravity", criterion_9),
    ];
    let mut unexpected = Vec::new();
    for (id, title, run) in criteria {
        if only.as_ref().map_or(false, |o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let parts = run();
        let pass = parts.iter().all(|p| p.pass);
        let summary: Vec<String> = parts
            .iter()
            .map(|p| {
                format!(
                    "{}: {} [{}]",
                    p.name,
                    p.detail,
                    if p.pass { "ok" } else { "FAIL" }
                )
            })
            .collect();
        let tag = match (pass, EXPECTED_FAILURES.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
        };
        println!(
            "criterion {id} {tag} - {title} ({:.0} s): {}",
            t0.elapsed().as_secs_f64(),
            summary.join("; ")
        );
        if !pass && !EXPECTED_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
