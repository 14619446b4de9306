use std::f64::consts::{PI, TAU};

use libm::erf;
use num_bigint::BigInt;
use qkr_core::anderson::{
    hopping_coefficients_1d, hopping_coefficients_3d, onsite_energies_1d, Hopping3dOptions,
};
use qkr_core::classical::{
    classical_diffusion_constant, quasilinear_diffusion, ClassicalEnsembleSpec,
};
use qkr_core::observables::{
    fit_exponential_localization, fit_power_law, pi0, MomentumDistribution,
};
use qkr_core::quantum::{
    apply_spontaneous_emission, evolve_ensemble, trajectory_rng, EnsembleSpec, MomentumGrid,
    RecordPlan, WaveState,
};
use qkr_core::{kick_strength, RotorParams};
use rand::Rng;

// Fixed-point numbers with FRAC fractional bits.
const FRAC: u32 = 256;

fn one() -> BigInt {
    BigInt::from(1) << FRAC
}

fn mul(a: &BigInt, b: &BigInt) -> BigInt {
    (a * b) >> FRAC
}

fn atan_inv(x: i64) -> BigInt {
    let x = BigInt::from(x);
    let x2 = &x * &x;
    let mut power = one() / &x;
    let mut sum = BigInt::from(0);
    let mut k = 0i64;
    while power != BigInt::from(0) {
        let term = &power / BigInt::from(2 * k + 1);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
        power /= &x2;
        k += 1;
    }
    sum
}

fn pi_fixed() -> BigInt {
    atan_inv(5) * 16 - atan_inv(239) * 4
}

fn sqrt_fixed(n: u64) -> BigInt {
    (BigInt::from(n) << (2 * FRAC)).sqrt()
}

fn from_f64(v: f64) -> BigInt {
    // Exact: v = m 2^e.
    let bits = v.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32 - 1075;
    let mant = BigInt::from((bits & ((1 << 52) - 1)) | (1 << 52));
    let m = if v < 0.0 { -mant } else { mant };
    let shift = FRAC as i32 + exp;
    if shift >= 0 {
        m << shift as u32
    } else {
        m >> (-shift) as u32
    }
}

fn to_f64(v: &BigInt) -> f64 {
    let top: BigInt = v >> (FRAC - 100);
    let s = top.to_string();
    s.parse::<f64>().unwrap() / 2f64.powi(100)
}

fn cos_fixed(x: &BigInt) -> BigInt {
    let two_pi = pi_fixed() * 2;
    let mut r = x % &two_pi;
    if r < BigInt::from(0) {
        r += &two_pi;
    }
    let r2 = mul(&r, &r);
    let mut term = one();
    let mut sum = one();
    let mut k = 1i64;
    while term != BigInt::from(0) {
        term = -mul(&term, &r2) / BigInt::from((2 * k - 1) * (2 * k));
        sum += &term;
        k += 1;
    }
    sum
}

#[test]
fn kick_strength_matches_high_precision_evaluation() {
    let p = RotorParams {
        k: 6.36,
        epsilon: 0.4364,
        ..RotorParams::default()
    };
    let t = 7u64;
    let two_pi = pi_fixed() * 2;
    let w2 = mul(&two_pi, &sqrt_fixed(5)) * t;
    let w3 = mul(&two_pi, &sqrt_fixed(13)) * t;
    let c = mul(&cos_fixed(&w2), &cos_fixed(&w3));
    let expected = mul(&from_f64(6.36), &(one() + mul(&from_f64(0.4364), &c)));
    let got = kick_strength(&p, t);
    assert!(
        (got - to_f64(&expected)).abs() < 1e-12,
        "{got} vs {}",
        to_f64(&expected)
    );
    // Frozen value of the same evaluation.
    assert!(
        (to_f64(&expected) - 6.248_349_790_621_532).abs() < 1e-12,
        "{}",
        to_f64(&expected)
    );
}

#[test]
fn fixed_point_helpers_are_sane() {
    assert!((to_f64(&pi_fixed()) - PI).abs() < 1e-15);
    assert!((to_f64(&cos_fixed(&from_f64(1.0))) - 1f64.cos()).abs() < 1e-15);
    assert!((to_f64(&sqrt_fixed(5)) - 5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn pi0_of_gaussian_matches_error_function() {
    for sigma in [0.7, 2.0, 5.0] {
        let density = |p: f64| (-p * p / (2.0 * sigma * sigma)).exp() / (sigma * TAU.sqrt());
        let d = MomentumDistribution::from_density(density, 0.1, -39.95, 800);
        let expected = erf(0.5 / (sigma * 2f64.sqrt()));
        let got = pi0(&d, 0.5).unwrap();
        assert!(
            (got - expected).abs() < 1e-12,
            "sigma {sigma}: {got} vs {expected}"
        );
    }
}

#[test]
fn exponential_fit_recovers_length() {
    let ell = 10.0;
    let mut rng = trajectory_rng(99, 0);
    let mut d = MomentumDistribution::from_density(
        |p| (-p.abs() / ell).exp() / (2.0 * ell),
        1.0,
        -150.0,
        301,
    );
    for m in d.mass.iter_mut() {
        *m *= 1.0 + 0.01 * (2.0 * rng.gen::<f64>() - 1.0) * 3f64.sqrt();
    }
    let f = fit_exponential_localization(&d).unwrap();
    assert!((f.ell - ell).abs() < 0.2, "{}", f.ell);
}

/// Composite Simpson rule.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn hopping_matches_quadrature() {
    let (k, kbar) = (5.0, 2.89);
    let h = hopping_coefficients_1d(k, kbar, 15, 1 << 14).unwrap();
    for r in 0..=15i64 {
        let q = simpson(
            |x| (k * x.cos() / (2.0 * kbar)).tan() * (r as f64 * x).cos(),
            0.0,
            TAU,
            20_000,
        ) / TAU;
        assert!((h.get(r) - q).abs() < 1e-8, "r = {r}: {} vs {q}", h.get(r));
    }
}

#[test]
fn hopping_small_k_taylor_limit() {
    let (k, kbar) = (1e-3, 2.89);
    let h = hopping_coefficients_1d(k, kbar, 4, 1 << 14).unwrap();
    assert!((h.get(1) - k / (4.0 * kbar)).abs() < 1e-9 * k);
    assert!((h.get(-1) - h.get(1)).abs() < 1e-15);
    assert!(h.get(0).abs() < 1e-15);
    assert!(h.get(2).abs() < 1e-15 + k.powi(3));
    assert!(h.get(3).abs() < k.powi(3));
}

#[test]
fn hopping_3d_matches_quadrature() {
    let (k, eps, kbar) = (5.0, 0.4364, 2.85);
    let h = hopping_coefficients_3d(k, eps, kbar, [5, 3, 3], &Hopping3dOptions::default()).unwrap();
    let n = 160;
    let w = |x1: f64, x2: f64, x3: f64| {
        (k * x1.cos() * (1.0 + eps * x2.cos() * x3.cos()) / (2.0 * kbar)).tan()
    };
    for r in [[1i64, 0, 0], [1, 1, 1], [3, 1, 0], [1, 2, 2], [5, 1, 1]] {
        let q = simpson(
            |x1| {
                simpson(
                    |x2| {
                        simpson(|x3| w(x1, x2, x3) * (r[2] as f64 * x3).cos(), 0.0, TAU, n)
                            * (r[1] as f64 * x2).cos()
                    },
                    0.0,
                    TAU,
                    n,
                ) * (r[0] as f64 * x1).cos()
            },
            0.0,
            TAU,
            n,
        ) / TAU.powi(3);
        assert!((h.get(r) - q).abs() < 1e-8, "{r:?}: {} vs {q}", h.get(r));
    }
}

#[test]
fn onsite_energies_follow_cauchy_law() {
    let e = onsite_energies_1d(2.85, 0.0, -10_000..=10_000, 0.0).unwrap();
    let mut u: Vec<f64> = e.values.iter().map(|v| 0.5 + v.atan() / PI).collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let d = u.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        d.max(x - i as f64 / n).max((i + 1) as f64 / n - x)
    });
    // Critical value at p = 0.01.
    assert!(d < 1.628 / n.sqrt(), "D = {d}");
}

#[test]
fn spontaneous_emission_redraws_uniform_beta() {
    let mut state = WaveState::plane_wave(MomentumGrid::new(64, 0.2).unwrap(), 0).unwrap();
    let mut rng = trajectory_rng(7, 3);
    let mut betas = Vec::new();
    for _ in 0..10_000 {
        assert!(apply_spontaneous_emission(&mut state, 1.0, &mut rng));
        betas.push(state.grid.beta());
    }
    betas.sort_by(f64::total_cmp);
    let n = betas.len() as f64;
    let d = betas.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        d.max(x - i as f64 / n).max((i + 1) as f64 / n - x)
    });
    assert!(d < 1.628 / n.sqrt(), "D = {d}");
}

#[test]
fn quantum_diffusion_matches_classical_constant() {
    let params = RotorParams::quasiperiodic(9.0, 0.8, 2.85);
    let times: Vec<u64> = (0..=20)
        .map(|i| (50.0 * 20f64.powf(i as f64 / 20.0)).round() as u64)
        .collect();
    let spec = EnsembleSpec {
        n_traj: 48,
        seed: 3,
        ..EnsembleSpec::default()
    };
    let q = evolve_ensemble(&params, &spec, 1000, &RecordPlan::new(times)).unwrap();
    let slope = fit_power_law(&q, (50, 1000), 1.0).unwrap();
    assert!((slope.exponent - 1.0).abs() < 0.1, "{}", slope.exponent);
    // Linear slope of <p^2>(t) over [50, 1000].
    let n = q.times.len() as f64;
    let (mt, mp) = (
        q.times.iter().sum::<u64>() as f64 / n,
        q.p2_mean.iter().sum::<f64>() / n,
    );
    let num: f64 = q
        .times
        .iter()
        .zip(&q.p2_mean)
        .map(|(&t, p)| (t as f64 - mt) * (p - mp))
        .sum();
    let den: f64 = q.times.iter().map(|&t| (t as f64 - mt).powi(2)).sum();
    let dq = num / den;
    let dc = classical_diffusion_constant(
        &params,
        &ClassicalEnsembleSpec {
            n_traj: 20_000,
            ..Default::default()
        },
        1000,
    )
    .unwrap();
    assert!(
        (dq / dc.d - 1.0).abs() < 0.25,
        "quantum {dq}, classical {}",
        dc.d
    );
}

#[test]
fn classical_diffusion_near_quasilinear() {
    let params = RotorParams::quasiperiodic(10.0, 0.8, 2.85);
    let d = classical_diffusion_constant(
        &params,
        &ClassicalEnsembleSpec {
            n_traj: 20_000,
            ..Default::default()
        },
        1000,
    )
    .unwrap();
    let ql = quasilinear_diffusion(10.0, 2.85);
    assert!((ql - 6.155_740_227_762_388).abs() < 1e-12);
    assert!((d.d / ql - 1.0).abs() < 0.25, "{} vs {ql}", d.d);
    assert!(!d.kam_limited);
}
