use num_complex::Complex64;
use proptest::prelude::*;
use qkr_core::anderson::{detect_period, hopping_coefficients_1d, onsite_energies_1d};
use qkr_core::classical::{
    run_classical_ensemble, standard_map_jacobian, ClassicalEnsembleSpec, ClassicalState,
};
use qkr_core::observables::{
    lambda_series, p2_from_lambda, pi0, EnsembleSeries, MomentumDistribution, Source,
};
use qkr_core::quantum::{
    dense_oracle_evolve, evolve_ensemble, step, BetaSampling, EnsembleSpec, GridPolicy,
    MomentumGrid, RecordPlan, WaveState,
};
use qkr_core::RotorParams;

fn state_from(n: usize, beta: f64, re: &[f64], im: &[f64]) -> WaveState {
    let grid = MomentumGrid::new(n, beta).unwrap();
    let amps = (0..n)
        .map(|j| {
            let m = grid.m(j) as f64;
            let env = (-(m / (n as f64 / 8.0)).powi(2)).exp();
            Complex64::new(re[j % re.len()], im[j % im.len()]) * env
        })
        .collect();
    let mut s = WaveState::from_amplitudes(grid, amps).unwrap();
    let norm = s.norm_sqr().sqrt();
    for a in s.amplitudes.iter_mut() {
        *a /= norm;
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kicks_conserve_norm(
        k in 0.5f64..10.0, eps in 0.0f64..0.8, beta in 0.0f64..1.0,
        re in prop::collection::vec(-1.0f64..1.0, 16), im in prop::collection::vec(-1.0f64..1.0, 16),
    ) {
        let params = RotorParams::quasiperiodic(k, eps, 2.85);
        let mut s = state_from(128, beta, &re, &im);
        for _ in 0..20 {
            s = step(&s, &params).0;
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn split_step_agrees_with_dense_unitary(
        k in 0.5f64..6.0, beta in 0.0f64..1.0,
        re in prop::collection::vec(-1.0f64..1.0, 8), im in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let params = RotorParams::quasiperiodic(k, 0.3, 2.85);
        let s0 = state_from(64, beta, &re, &im);
        let mut s = s0.clone();
        for _ in 0..10 {
            s = step(&s, &params).0;
        }
        let d = dense_oracle_evolve(&params, &s0, 10).unwrap();
        let diff = s.amplitudes.iter().zip(&d.amplitudes).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-10, "{}", diff);
    }

    #[test]
    fn standard_map_is_area_preserving(x in 0.0f64..6.3, p in -50.0f64..50.0, k in 0.0f64..20.0) {
        let s = ClassicalState { x, p, x2: 0.0, x3: 0.0, p2: 0.0, p3: 0.0 };
        let j = standard_map_jacobian(s, k);
        prop_assert!((j[0][0] * j[1][1] - j[0][1] * j[1][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_roundtrip_is_exact(p2 in prop::collection::vec(0.01f64..1e4, 1..30)) {
        let times: Vec<u64> = (1..=p2.len() as u64).map(|i| i * i).collect();
        let s = EnsembleSeries {
            params: RotorParams::default(),
            times,
            p2_sem: vec![0.0; p2.len()],
            p2_mean: p2.clone(),
            pi0: None,
            pi0_sem: None,
            distributions: Vec::new(),
            n_traj: 1,
            saturated_trajectories: Vec::new(),
            max_grid_n: 0,
            source: Source::Quantum,
        };
        let back = p2_from_lambda(&lambda_series(&s).unwrap());
        for (a, b) in back.iter().zip(&p2) {
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * b);
        }
    }

    #[test]
    fn hopping_resums_to_potential(k in 0.2f64..8.0) {
        let kbar = 2.85;
        let h = hopping_coefficients_1d(k, kbar, 200, 1 << 14).unwrap();
        let a = k / (2.0 * kbar);
        // Slowly converging near the pole; stay where 200 harmonics suffice.
        prop_assume!(a < 1.2);
        for i in 0..4096 {
            let x = std::f64::consts::TAU * i as f64 / 4096.0;
            prop_assert!((h.resum(x) - (a * x.cos()).tan()).abs() < 1e-8);
        }
    }
}

#[test]
fn classical_runs_are_deterministic() {
    let p = RotorParams::quasiperiodic(6.0, 0.4, 2.85);
    let spec = ClassicalEnsembleSpec {
        n_traj: 300,
        seed: 4,
        ..Default::default()
    };
    let plan = RecordPlan::new(vec![10, 100]);
    let a = run_classical_ensemble(&p, &spec, 100, &plan).unwrap();
    let b = run_classical_ensemble(&p, &spec, 100, &plan).unwrap();
    assert_eq!(a, b);
    let c =
        run_classical_ensemble(&p, &ClassicalEnsembleSpec { seed: 5, ..spec }, 100, &plan).unwrap();
    assert_ne!(a.series.p2_mean, c.series.p2_mean);
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn pi0_tracks_kinetic_energy() {
    let widths: Vec<f64> = (0..20).map(|i| 3.0 + 2.0 * i as f64).collect();
    let exp: Vec<MomentumDistribution> = widths
        .iter()
        .map(|&l| {
            MomentumDistribution::from_density(
                move |p| (-p.abs() / l).exp() / (2.0 * l),
                1.0,
                -800.0,
                1601,
            )
        })
        .collect();
    let gauss: Vec<MomentumDistribution> = widths
        .iter()
        .map(|&s| {
            MomentumDistribution::from_density(
                move |p| (-p * p / (2.0 * s * s)).exp() / (s * std::f64::consts::TAU.sqrt()),
                1.0,
                -400.0,
                801,
            )
        })
        .collect();
    for family in [exp, gauss] {
        let inv: Vec<f64> = family
            .iter()
            .map(|d| pi0(d, 0.5).unwrap().powi(-2))
            .collect();
        let p2: Vec<f64> = family.iter().map(|d| d.moments().1).collect();
        assert!(correlation(&inv, &p2) > 0.999);
    }
}

#[test]
fn irrational_kbar_gives_aperiodic_energies() {
    let e = onsite_energies_1d(2.85, 0.0, 0..=30_000, 0.0).unwrap();
    assert_eq!(detect_period(&e.values, 10_000, 1e-9), None);
}

#[test]
fn grid_doubling_leaves_kinetic_energy_unchanged() {
    let params = RotorParams::quasiperiodic(5.0, 0.24, 2.89);
    let times: Vec<u64> = vec![10, 30, 100, 300];
    let run = |n| {
        let spec = EnsembleSpec {
            n_traj: 16,
            seed: 2,
            grid: GridPolicy {
                initial_n: Some(n),
                max_n: n,
                adaptive: false,
            },
            ..EnsembleSpec::default()
        };
        evolve_ensemble(&params, &spec, 300, &RecordPlan::new(times.clone())).unwrap()
    };
    let (a, b) = (run(512), run(1024));
    assert!(a.saturated_trajectories.is_empty());
    for (x, y) in a.p2_mean.iter().zip(&b.p2_mean) {
        assert!((x / y - 1.0).abs() < 1e-3, "{x} vs {y}");
    }
}

#[test]
fn localized_distribution_is_symmetric() {
    let params = RotorParams::quasiperiodic(5.0, 0.24, 2.89);
    let spec = EnsembleSpec {
        n_traj: 500,
        seed: 8,
        ..EnsembleSpec::default()
    };
    let s = evolve_ensemble(
        &params,
        &spec,
        150,
        &RecordPlan::new(vec![150]).with_distributions(vec![150]),
    )
    .unwrap();
    let d = s.distribution_at(150).unwrap();
    let sem = d.mass_sem.as_ref().unwrap();
    // Plane-wave starts sit at p = beta in [0, 1): the ensemble is
    // symmetric about p = 1/2, which pairs bin centers c and 1 - c.
    let index = |c: f64| ((c - d.first_center) / d.bin_width).round() as usize;
    let mut chi2 = 0.0;
    let mut n = 0;
    for j in 1..=20 {
        let (a, b) = (index(j as f64), index(1.0 - j as f64));
        let var = sem[a].powi(2) + sem[b].powi(2);
        if var > 0.0 {
            chi2 += (d.mass[a] - d.mass[b]).powi(2) / var;
            n += 1;
        }
    }
    assert!(n >= 15);
    assert!(chi2 / (n as f64) < 2.5, "reduced chi2 {}", chi2 / n as f64);
}

#[test]
fn localization_time_at_k5_in_scaled_units() {
    // D / 2 with D in scaled momentum squared per kick.
    let params = RotorParams::periodic(5.0, 2.89);
    let spec = ClassicalEnsembleSpec {
        n_traj: 20_000,
        ..Default::default()
    };
    let lt = qkr_core::observables::localization_time_estimate(&params, &spec, 1000).unwrap();
    assert!((0.5..=1.0).contains(&lt.tau), "{}", lt.tau);
}

#[test]
fn resonant_kbar_grows_ballistically() {
    use std::f64::consts::TAU;
    let times: Vec<u64> = (0..=20)
        .map(|i| (10.0 * 30f64.powf(i as f64 / 20.0)).round() as u64)
        .collect();
    for (kbar, beta) in [(TAU, 0.5), (2.0 * TAU, 0.0)] {
        let spec = EnsembleSpec {
            n_traj: 1,
            beta_sampling: BetaSampling::Fixed(beta),
            ..EnsembleSpec::default()
        };
        let s = evolve_ensemble(
            &RotorParams::periodic(2.0, kbar),
            &spec,
            300,
            &RecordPlan::new(times.clone()),
        )
        .unwrap();
        let f = qkr_core::observables::fit_power_law(&s, (10, 300), 1.0).unwrap();
        assert!(
            (f.exponent - 2.0).abs() < 0.05,
            "kbar {kbar}, beta {beta}: {}",
            f.exponent
        );
    }
    // Anti-resonance: the state returns to itself every second kick.
    let spec = EnsembleSpec {
        n_traj: 1,
        beta_sampling: BetaSampling::Fixed(0.0),
        ..EnsembleSpec::default()
    };
    let s = evolve_ensemble(
        &RotorParams::periodic(2.0, TAU),
        &spec,
        300,
        &RecordPlan::new(times),
    )
    .unwrap();
    assert!(s.p2_mean.iter().all(|&p| p < 0.06));
}
