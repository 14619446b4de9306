//! Dimensionless kicked-rotor parameters and conversion from laboratory units.
//!
//! Time is measured in kick periods, positions are the phase `x = 2 k_L X` of
//! the standing wave, and momenta are given either in scaled units `p` or in
//! units of the two-photon recoil, `𝔭 = p / kbar`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Standard gravity (m / s^2).
pub const GRAVITY: f64 = 9.806_65;
/// Mass of a caesium-133 atom (kg).
pub const CESIUM_MASS: f64 = 2.206_946_9e-25;
/// Wavenumber of the caesium D2 line, 852.347 nm (1/m).
pub const CESIUM_D2_WAVENUMBER: f64 = 2.0 * PI / 852.347_27e-9;
/// Natural linewidth of the caesium D2 line (rad / s).
pub const CESIUM_D2_LINEWIDTH: f64 = 2.0 * PI * 5.234e6;

/// Control parameters of the (quasi)periodic kicked rotor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotorParams {
    /// Stochasticity parameter.
    pub k: f64,
    /// Effective Planck constant.
    pub kbar: f64,
    /// Modulation amplitude, in `[0, 1]`.
    pub epsilon: f64,
    /// Modulation angular frequencies, radians per kick.
    pub omega2: f64,
    pub omega3: f64,
    /// Modulation phases.
    pub phi2: f64,
    pub phi3: f64,
    /// Spontaneous-emission events per kick.
    pub eta_se: f64,
    /// Gravity drift, scaled momentum per kick.
    pub eta_g: f64,
}

impl Default for RotorParams {
    fn default() -> Self {
        Self {
            k: 5.0,
            kbar: 2.85,
            epsilon: 0.0,
            omega2: 2.0 * PI * 5f64.sqrt(),
            omega3: 2.0 * PI * 13f64.sqrt(),
            phi2: 0.0,
            phi3: 0.0,
            eta_se: 0.0,
            eta_g: 0.0,
        }
    }
}

impl RotorParams {
    /// Periodic kicked rotor (no modulation) with the default frequencies.
    pub fn periodic(k: f64, kbar: f64) -> Self {
        Self {
            k,
            kbar,
            ..Self::default()
        }
    }

    /// Quasiperiodic rotor with `omega2 = 2 pi sqrt(5)`, `omega3 = 2 pi sqrt(13)`.
    pub fn quasiperiodic(k: f64, epsilon: f64, kbar: f64) -> Self {
        Self {
            k,
            kbar,
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.k,
            self.kbar,
            self.epsilon,
            self.omega2,
            self.omega3,
            self.phi2,
            self.phi3,
            self.eta_se,
            self.eta_g,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("rotor parameters must be finite"));
        }
        if self.k <= 0.0 {
            return Err(invalid(format!("K must be positive, got {}", self.k)));
        }
        if self.kbar <= 0.0 {
            return Err(invalid(format!("kbar must be positive, got {}", self.kbar)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.eta_se < 0.0 || self.eta_se > 1.0 {
            return Err(invalid(format!(
                "eta_se must lie in [0, 1], got {}",
                self.eta_se
            )));
        }
        if self.eta_g < 0.0 {
            return Err(invalid(format!(
                "eta_g must be non-negative, got {}",
                self.eta_g
            )));
        }
        Ok(())
    }
}

/// Kick amplitude at kick index `t`:
/// `K [1 + epsilon cos(omega2 t + phi2) cos(omega3 t + phi3)]`.
pub fn kick_strength(params: &RotorParams, t: u64) -> f64 {
    let t = t as f64;
    params.k
        * (1.0
            + params.epsilon
                * (params.omega2 * t + params.phi2).cos()
                * (params.omega3 * t + params.phi3).cos())
}

/// Laboratory parameters of a pulsed standing-wave experiment (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Kick period (s).
    pub t1: f64,
    /// Pulse duration (s).
    pub tau: f64,
    /// Resonant Rabi frequency (rad/s).
    pub omega_rabi: f64,
    /// Laser detuning from resonance (rad/s). Only the magnitude enters.
    pub delta_l: f64,
    /// Laser wavenumber (1/m).
    pub k_l: f64,
    /// Atomic mass (kg).
    pub mass: f64,
    /// Natural linewidth (rad/s).
    pub gamma: f64,
    /// Tilt of the standing wave with respect to the horizontal (rad).
    pub alpha_tilt: f64,
}

/// Result of [`physical_to_scaled`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledConversion {
    pub params: RotorParams,
    /// Set when `|delta_l| / gamma < 100`; the dipole-potential picture is then
    /// questionable.
    pub detuning_warning: bool,
}

/// Converts laboratory quantities to the dimensionless rotor parameters.
///
/// The modulation fields of the result keep their defaults (`epsilon = 0`).
pub fn physical_to_scaled(p: &PhysicalParams) -> Result<ScaledConversion> {
    let positive = [
        ("t1", p.t1),
        ("tau", p.tau),
        ("omega_rabi", p.omega_rabi),
        ("k_l", p.k_l),
        ("mass", p.mass),
        ("gamma", p.gamma),
    ];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            return Err(invalid(format!("{name} must be positive, got {v}")));
        }
    }
    if !p.delta_l.is_finite() || p.delta_l == 0.0 {
        return Err(invalid("detuning must be non-zero"));
    }
    if !(p.alpha_tilt.is_finite() && p.alpha_tilt >= 0.0) {
        return Err(invalid("tilt angle must be non-negative"));
    }
    if p.tau >= p.t1 {
        return Err(invalid(format!(
            "pulse duration {} s is not shorter than the period {} s",
            p.tau, p.t1
        )));
    }
    let delta = p.delta_l.abs();
    let omega2 = p.omega_rabi * p.omega_rabi;
    let k = HBAR * omega2 * p.t1 * p.tau * p.k_l * p.k_l / (2.0 * p.mass * delta);
    let kbar = 4.0 * HBAR * p.k_l * p.k_l * p.t1 / p.mass;
    let eta_se = p.gamma * omega2 * p.tau / (8.0 * delta * delta);
    let eta_g = p.mass * GRAVITY * p.t1 / (2.0 * HBAR * p.k_l) * kbar * p.alpha_tilt.sin();
    Ok(ScaledConversion {
        params: RotorParams {
            k,
            kbar,
            eta_se,
            eta_g,
            ..RotorParams::default()
        },
        detuning_warning: delta / p.gamma < 100.0,
    })
}

/// Gravity drift `eta_g` of a caesium rotor at effective Planck constant
/// `kbar` (which fixes the kick period) and tilt `alpha_tilt` (rad).
pub fn caesium_gravity_drift(kbar: f64, alpha_tilt: f64) -> f64 {
    let t1 = kbar * CESIUM_MASS / (4.0 * HBAR * CESIUM_D2_WAVENUMBER * CESIUM_D2_WAVENUMBER);
    CESIUM_MASS * GRAVITY * t1 / (2.0 * HBAR * CESIUM_D2_WAVENUMBER) * kbar * alpha_tilt.sin()
}

/// Straight segment in the `(K, epsilon)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPath {
    pub k_start: f64,
    pub k_end: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub n_points: usize,
}

impl Default for SweepPath {
    /// The experimental path `(4, 0.1) -> (9, 0.8)`.
    fn default() -> Self {
        Self {
            k_start: 4.0,
            k_end: 9.0,
            eps_start: 0.1,
            eps_end: 0.8,
            n_points: 20,
        }
    }
}

impl SweepPath {
    /// Evenly spaced `(K, epsilon)` points, endpoints included. A single-point
    /// path yields the start point.
    pub fn points(&self) -> Vec<(f64, f64)> {
        match self.n_points {
            0 => Vec::new(),
            1 => vec![(self.k_start, self.eps_start)],
            n => (0..n)
                .map(|i| {
                    let s = i as f64 / (n - 1) as f64;
                    (
                        self.k_start + s * (self.k_end - self.k_start),
                        self.eps_start + s * (self.eps_end - self.eps_start),
                    )
                })
                .collect(),
        }
    }

    /// Modulation amplitude on the path's line at stochasticity `k`.
    pub fn epsilon_at(&self, k: f64) -> f64 {
        if self.k_end == self.k_start {
            return self.eps_start;
        }
        self.eps_start
            + (k - self.k_start) / (self.k_end - self.k_start) * (self.eps_end - self.eps_start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cesium(t1: f64) -> PhysicalParams {
        PhysicalParams {
            t1,
            tau: 0.9e-6,
            omega_rabi: 2.0 * PI * 200e6,
            delta_l: -2.0 * PI * 7.3e9,
            k_l: CESIUM_D2_WAVENUMBER,
            mass: CESIUM_MASS,
            gamma: CESIUM_D2_LINEWIDTH,
            alpha_tilt: 0.0,
        }
    }

    #[test]
    fn cesium_kbar_at_36_khz() {
        let s = physical_to_scaled(&cesium(1.0 / 36e3)).unwrap();
        assert!(
            (s.params.kbar - 2.89).abs() < 0.01,
            "kbar = {}",
            s.params.kbar
        );
        assert!(!s.detuning_warning);
        assert_eq!(s.params.eta_g, 0.0);
    }

    #[test]
    fn kbar_linear_in_period() {
        let a = physical_to_scaled(&cesium(20e-6)).unwrap().params.kbar;
        let b = physical_to_scaled(&cesium(40e-6)).unwrap().params.kbar;
        assert!((b / a - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_long_pulses_and_zero_detuning() {
        let mut p = cesium(0.5e-6);
        assert!(physical_to_scaled(&p).is_err());
        p.t1 = 1e-5;
        p.delta_l = 0.0;
        assert!(physical_to_scaled(&p).is_err());
    }

    #[test]
    fn detuning_warning_near_resonance() {
        let mut p = cesium(1.0 / 36e3);
        p.delta_l = 50.0 * p.gamma;
        assert!(physical_to_scaled(&p).unwrap().detuning_warning);
    }

    #[test]
    fn tilt_gives_gravity_drift() {
        let mut p = cesium(1.0 / 36e3);
        p.alpha_tilt = 1f64.to_radians();
        let s = physical_to_scaled(&p).unwrap().params;
        let expected =
            CESIUM_MASS * GRAVITY * p.t1 / (2.0 * HBAR * p.k_l) * s.kbar * p.alpha_tilt.sin();
        assert!((s.eta_g - expected).abs() < 1e-15);
        assert!(s.eta_g > 0.0);
        assert!((caesium_gravity_drift(s.kbar, p.alpha_tilt) / s.eta_g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kick_strength_examples() {
        let p = RotorParams {
            k: 9.0,
            epsilon: 0.8,
            ..RotorParams::default()
        };
        assert!((kick_strength(&p, 0) - 16.2).abs() < 1e-12);
        let flat = RotorParams::periodic(4.0, 2.85);
        for t in [0, 1, 17, 123_456] {
            assert_eq!(kick_strength(&flat, t), 4.0);
        }
    }

    #[test]
    fn sweep_points_are_even() {
        let path = SweepPath::default();
        let pts = path.points();
        assert_eq!(pts.len(), 20);
        assert_eq!(pts[0], (4.0, 0.1));
        assert!((pts[19].0 - 9.0).abs() < 1e-12 && (pts[19].1 - 0.8).abs() < 1e-12);
        let (k7, e7) = pts[7];
        assert!((k7 - (4.0 + 7.0 * 5.0 / 19.0)).abs() < 1e-12);
        assert!((e7 - path.epsilon_at(k7)).abs() < 1e-12);
        assert_eq!(
            SweepPath {
                n_points: 1,
                ..path
            }
            .points(),
            vec![(4.0, 0.1)]
        );
    }

    #[test]
    fn validation() {
        assert!(RotorParams::default().validate().is_ok());
        assert!(RotorParams {
            epsilon: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RotorParams {
            k: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RotorParams {
            kbar: f64::NAN,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kick_strength_bounded(k in 0.1f64..20.0, eps in 0.0f64..1.0,
                                     p2 in 0.0f64..6.28, p3 in 0.0f64..6.28, t in 0u64..1_000_000) {
                let p = RotorParams { k, epsilon: eps, phi2: p2, phi3: p3, ..RotorParams::default() };
                let v = kick_strength(&p, t);
                prop_assert!(v >= k * (1.0 - eps) - 1e-12 && v <= k * (1.0 + eps) + 1e-12);
            }

            #[test]
            fn k_invariant_under_fixed_intensity_ratio(scale in 0.1f64..10.0) {
                let base = cesium(1.0 / 36e3);
                let mut scaled = base;
                scaled.omega_rabi = base.omega_rabi * scale.sqrt();
                scaled.delta_l = base.delta_l * scale;
                let a = physical_to_scaled(&base).unwrap().params;
                let b = physical_to_scaled(&scaled).unwrap().params;
                prop_assert!((a.k - b.k).abs() <= 1e-12 * a.k);
                prop_assert!((b.eta_se * scale / a.eta_se - 1.0).abs() < 1e-12);
            }
        }
    }
}
