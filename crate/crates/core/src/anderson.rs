//! Tight-binding form of the kicked rotor: pseudo-random on-site energies,
//! hopping coefficients from the Fourier expansion of the tangent kick,
//! incommensurability diagnostics and a small Floquet diagonalization.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::RotorParams;
use crate::quantum::{one_kick_unitary, MomentumGrid};
use crate::stats::line_fit;

/// Distance from a tangent pole below which a site is flagged.
pub const POLE_TOLERANCE: f64 = 1e-6;
/// Minimum number of Fourier samples for 1D hopping coefficients.
pub const MIN_HOPPING_SAMPLES: usize = 1 << 14;

/// On-site energies of a 1D or 3D lattice. Values are stored row-major with
/// the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsiteEnergies {
    /// Lowest index along each axis.
    pub origin: Vec<i64>,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// Flat indices of sites within [`POLE_TOLERANCE`] of a tangent pole.
    pub pole_sites: Vec<usize>,
}

impl OnsiteEnergies {
    /// Lattice index of flat position `i`.
    pub fn site(&self, mut i: usize) -> Vec<i64> {
        let mut out = vec![0; self.shape.len()];
        for a in (0..self.shape.len()).rev() {
            out[a] = self.origin[a] + (i % self.shape[a]) as i64;
            i /= self.shape[a];
        }
        out
    }
}

fn tan_half(arg2: f64) -> (f64, bool) {
    let a = 0.5 * arg2;
    let r = a.rem_euclid(PI);
    ((a).tan(), (r - FRAC_PI_2).abs() < POLE_TOLERANCE)
}

/// `eps_m = tan[(omega - (m + beta)^2 kbar / 2) / 2]` for `m` in `m_range`.
/// Pass `beta = 0` for the integer-lattice form.
pub fn onsite_energies_1d(
    kbar: f64,
    omega: f64,
    m_range: std::ops::RangeInclusive<i64>,
    beta: f64,
) -> Result<OnsiteEnergies> {
    if !(kbar > 0.0) {
        return Err(invalid("kbar must be positive"));
    }
    let (lo, hi) = (*m_range.start(), *m_range.end());
    if hi < lo {
        return Err(invalid("empty index range"));
    }
    let mut values = Vec::with_capacity((hi - lo + 1) as usize);
    let mut pole_sites = Vec::new();
    for (i, m) in (lo..=hi).enumerate() {
        let p = m as f64 + beta;
        let (v, pole) = tan_half(omega - 0.5 * kbar * p * p);
        values.push(v);
        if pole {
            pole_sites.push(i);
        }
    }
    Ok(OnsiteEnergies {
        origin: vec![lo],
        shape: vec![values.len()],
        values,
        pole_sites,
    })
}

/// `eps_m = tan{[omega - (kbar m1^2 / 2 + omega2 m2 + omega3 m3)] / 2}` on the
/// box `[-half[a], half[a]]`.
pub fn onsite_energies_3d(
    kbar: f64,
    omega2: f64,
    omega3: f64,
    omega: f64,
    half: [usize; 3],
) -> Result<OnsiteEnergies> {
    if !(kbar > 0.0) {
        return Err(invalid("kbar must be positive"));
    }
    let shape: Vec<usize> = half.iter().map(|h| 2 * h + 1).collect();
    let origin: Vec<i64> = half.iter().map(|h| -(*h as i64)).collect();
    let mut values = Vec::with_capacity(shape.iter().product());
    let mut pole_sites = Vec::new();
    for i1 in 0..shape[0] {
        let m1 = origin[0] + i1 as i64;
        let a1 = 0.5 * kbar * (m1 * m1) as f64;
        for i2 in 0..shape[1] {
            let m2 = (origin[1] + i2 as i64) as f64;
            for i3 in 0..shape[2] {
                let m3 = (origin[2] + i3 as i64) as f64;
                let (v, pole) = tan_half(omega - (a1 + omega2 * m2 + omega3 * m3));
                if pole {
                    pole_sites.push(values.len());
                }
                values.push(v);
            }
        }
    }
    Ok(OnsiteEnergies {
        origin,
        shape,
        values,
        pole_sites,
    })
}

/// Smallest period `P <= max_period` with `|v[i + P] - v[i]| <= tol (1 + |v[i]|)`
/// for every `i`.
pub fn detect_period(values: &[f64], max_period: usize, tol: f64) -> Option<usize> {
    (1..=max_period.min(values.len().saturating_sub(1))).find(|&p| {
        values
            .iter()
            .zip(&values[p..])
            .all(|(a, b)| (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs())))
    })
}

/// 1D hopping coefficients `W_r`, `r` in `[-r_max, r_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hopping1d {
    pub r_max: usize,
    pub values: Vec<f64>,
}

impl Hopping1d {
    pub fn get(&self, r: i64) -> f64 {
        let i = r + self.r_max as i64;
        if i < 0 || i as usize >= self.values.len() {
            0.0
        } else {
            self.values[i as usize]
        }
    }

    /// Fourier resummation `W(x) = sum_r W_r e^{i r x}`.
    pub fn resum(&self, x: f64) -> f64 {
        (-(self.r_max as i64)..=self.r_max as i64)
            .map(|r| self.get(r) * (r as f64 * x).cos())
            .sum()
    }
}

fn check_singular(max_argument: f64) -> Result<()> {
    if max_argument >= FRAC_PI_2 {
        Err(Error::SingularKick { max_argument })
    } else {
        Ok(())
    }
}

/// Fourier coefficients of `tan(K cos x / (2 kbar))` from `n_samples`
/// (at least 2^14) equally spaced samples.
pub fn hopping_coefficients_1d(
    k: f64,
    kbar: f64,
    r_max: usize,
    n_samples: usize,
) -> Result<Hopping1d> {
    if !(k > 0.0 && kbar > 0.0) {
        return Err(invalid("K and kbar must be positive"));
    }
    let n = n_samples.max(MIN_HOPPING_SAMPLES);
    if 2 * r_max >= n {
        return Err(invalid("r_max too large for the sample count"));
    }
    let a = k / (2.0 * kbar);
    check_singular(a)?;
    let mut buf: Vec<Complex64> = (0..n)
        .map(|j| Complex64::new((a * (TAU * j as f64 / n as f64).cos()).tan(), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut values = Vec::with_capacity(2 * r_max + 1);
    for r in -(r_max as i64)..=r_max as i64 {
        let c = buf[r.rem_euclid(n as i64) as usize] / n as f64;
        if c.im.abs() > 1e-10 {
            return Err(Error::NonConvergence(format!(
                "W_{r} has imaginary part {}",
                c.im
            )));
        }
        values.push(c.re);
    }
    Ok(Hopping1d { r_max, values })
}

/// Exponential envelope `|W_r| <= C exp(-gamma |r|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub gamma: f64,
    pub gamma_err: f64,
    /// Smallest `C` making the envelope an upper bound over the fitted range.
    pub c: f64,
}

/// Fits `ln |W_r|` against `r` over odd `r` in `[r_lo, r_hi]` (even
/// harmonics vanish identically).
pub fn fit_hopping_decay(h: &Hopping1d, r_lo: usize, r_hi: usize) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = (r_lo..=r_hi.min(h.r_max))
        .filter(|r| r % 2 == 1)
        .map(|r| (r as f64, h.get(r as i64).abs()))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(
            "fewer than three nonzero odd harmonics".into(),
        ));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let fit = line_fit(&x, &y, None)?;
    let gamma = -fit.slope;
    let scale = fit.reduced_chi2().sqrt();
    let c = pts
        .iter()
        .map(|(r, w)| w * (gamma * r).exp())
        .fold(0.0, f64::max);
    Ok(DecayFit {
        gamma,
        gamma_err: fit.slope_err * scale,
        c,
    })
}

/// Grid used for the threefold Fourier transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hopping3dOptions {
    pub n1: usize,
    pub n_transverse: usize,
}

impl Default for Hopping3dOptions {
    fn default() -> Self {
        Self {
            n1: 256,
            n_transverse: 64,
        }
    }
}

/// 3D hopping coefficients over the box `|r_a| <= r_max[a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hopping3d {
    pub r_max: [usize; 3],
    pub values: Vec<f64>,
}

impl Hopping3d {
    fn dims(&self) -> [usize; 3] {
        self.r_max.map(|r| 2 * r + 1)
    }

    pub fn get(&self, r: [i64; 3]) -> f64 {
        let d = self.dims();
        let mut idx = 0;
        for a in 0..3 {
            let i = r[a] + self.r_max[a] as i64;
            if i < 0 || i as usize >= d[a] {
                return 0.0;
            }
            idx = idx * d[a] + i as usize;
        }
        self.values[idx]
    }

    /// Share of `sum |W_r|^2` carried by offsets with `r2 != 0`.
    pub fn transverse_fraction(&self) -> f64 {
        let (mut tr, mut tot) = (0.0, 0.0);
        let rm = self.r_max.map(|r| r as i64);
        for r1 in -rm[0]..=rm[0] {
            for r2 in -rm[1]..=rm[1] {
                for r3 in -rm[2]..=rm[2] {
                    let w2 = self.get([r1, r2, r3]).powi(2);
                    tot += w2;
                    if r2 != 0 {
                        tr += w2;
                    }
                }
            }
        }
        tr / tot
    }
}

/// Threefold Fourier coefficients of
/// `tan[K cos x1 (1 + eps cos x2 cos x3) / (2 kbar)]`.
pub fn hopping_coefficients_3d(
    k: f64,
    epsilon: f64,
    kbar: f64,
    r_max: [usize; 3],
    opts: &Hopping3dOptions,
) -> Result<Hopping3d> {
    if !(k > 0.0 && kbar > 0.0) || !(0.0..=1.0).contains(&epsilon) {
        return Err(invalid("need K > 0, kbar > 0 and 0 <= epsilon <= 1"));
    }
    let a = k / (2.0 * kbar);
    check_singular(a * (1.0 + epsilon))?;
    let n = [opts.n1, opts.n_transverse, opts.n_transverse];
    for ax in 0..3 {
        if 2 * r_max[ax] >= n[ax] {
            return Err(invalid("r_max too large for the transform grid"));
        }
    }
    let c: Vec<Vec<f64>> = n
        .iter()
        .map(|&m| (0..m).map(|j| (TAU * j as f64 / m as f64).cos()).collect())
        .collect();
    let mut buf = vec![Complex64::new(0.0, 0.0); n[0] * n[1] * n[2]];
    for i in 0..n[0] {
        for j in 0..n[1] {
            for l in 0..n[2] {
                let v = (a * c[0][i] * (1.0 + epsilon * c[1][j] * c[2][l])).tan();
                buf[(i * n[1] + j) * n[2] + l] = Complex64::new(v, 0.0);
            }
        }
    }
    fft_3d(&mut buf, n);
    let norm = (n[0] * n[1] * n[2]) as f64;
    let d = r_max.map(|r| 2 * r + 1);
    let mut values = Vec::with_capacity(d[0] * d[1] * d[2]);
    for r1 in -(r_max[0] as i64)..=r_max[0] as i64 {
        for r2 in -(r_max[1] as i64)..=r_max[1] as i64 {
            for r3 in -(r_max[2] as i64)..=r_max[2] as i64 {
                let i = r1.rem_euclid(n[0] as i64) as usize;
                let j = r2.rem_euclid(n[1] as i64) as usize;
                let l = r3.rem_euclid(n[2] as i64) as usize;
                let v = buf[(i * n[1] + j) * n[2] + l] / norm;
                if v.im.abs() > 1e-10 {
                    return Err(Error::NonConvergence(format!(
                        "W_({r1},{r2},{r3}) has imaginary part {}",
                        v.im
                    )));
                }
                values.push(v.re);
            }
        }
    }
    Ok(Hopping3d { r_max, values })
}

/// Forward transform along all three axes of a row-major array.
fn fft_3d(buf: &mut [Complex64], n: [usize; 3]) {
    let mut planner = FftPlanner::new();
    // axis 2 (contiguous)
    let f2 = planner.plan_fft_forward(n[2]);
    for row in buf.chunks_mut(n[2]) {
        f2.process(row);
    }
    // axis 1
    let f1 = planner.plan_fft_forward(n[1]);
    let mut line = vec![Complex64::new(0.0, 0.0); n[1]];
    for i in 0..n[0] {
        for l in 0..n[2] {
            for j in 0..n[1] {
                line[j] = buf[(i * n[1] + j) * n[2] + l];
            }
            f1.process(&mut line);
            for j in 0..n[1] {
                buf[(i * n[1] + j) * n[2] + l] = line[j];
            }
        }
    }
    // axis 0
    let f0 = planner.plan_fft_forward(n[0]);
    let mut line = vec![Complex64::new(0.0, 0.0); n[0]];
    let stride = n[1] * n[2];
    for off in 0..stride {
        for i in 0..n[0] {
            line[i] = buf[i * stride + off];
        }
        f0.process(&mut line);
        for i in 0..n[0] {
            buf[i * stride + off] = line[i];
        }
    }
}

/// Integer relation `n1 kbar + n2 omega2 + n3 omega3 + n4 pi` and its size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub coefficients: [i64; 4],
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pair: (String, String),
    /// Best relation between the two quantities alone.
    pub best: Resonance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommensurabilityReport {
    pub tol: f64,
    pub q_max: i64,
    pub pairs: Vec<PairReport>,
    /// Pairwise relations below `tol`.
    pub flags: Vec<Resonance>,
    /// Smallest relation found among three or four quantities; reported for
    /// information only.
    pub best_multi_term: Resonance,
}

impl CommensurabilityReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }
}

const NAMES: [&str; 4] = ["kbar", "omega2", "omega3", "pi"];

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Searches integer relations with `|n_i| <= q_max` among
/// `(kbar, omega2, omega3, pi)`. Pairwise relations below `tol` are flagged.
pub fn commensurability_check(
    kbar: f64,
    omega2: f64,
    omega3: f64,
    tol: f64,
    q_max: i64,
) -> Result<CommensurabilityReport> {
    if q_max < 2 {
        return Err(invalid("q_max must be at least 2"));
    }
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let v = [kbar, omega2, omega3, PI];
    let mut pairs = Vec::new();
    let mut flags = Vec::new();
    for a in 0..4 {
        for b in a + 1..4 {
            let mut best = Resonance {
                coefficients: [0; 4],
                residual: f64::INFINITY,
            };
            for na in 1..=q_max {
                for nb in -q_max..=q_max {
                    if nb == 0 || gcd(na, nb) != 1 {
                        continue;
                    }
                    let res = (na as f64 * v[a] + nb as f64 * v[b]).abs();
                    let mut c = [0; 4];
                    c[a] = na;
                    c[b] = nb;
                    let r = Resonance {
                        coefficients: c,
                        residual: res,
                    };
                    if res < tol {
                        flags.push(r);
                    }
                    if res < best.residual {
                        best = r;
                    }
                }
            }
            pairs.push(PairReport {
                pair: (NAMES[a].into(), NAMES[b].into()),
                best,
            });
        }
    }
    let mut best_multi = Resonance {
        coefficients: [0; 4],
        residual: f64::INFINITY,
    };
    for n1 in 0..=q_max {
        for n2 in -q_max..=q_max {
            for n3 in -q_max..=q_max {
                for n4 in -q_max..=q_max {
                    let c = [n1, n2, n3, n4];
                    if c.iter().filter(|x| **x != 0).count() < 3 {
                        continue;
                    }
                    let first = *c.iter().find(|x| **x != 0).unwrap();
                    if first < 0 {
                        continue;
                    }
                    let res =
                        (n1 as f64 * v[0] + n2 as f64 * v[1] + n3 as f64 * v[2] + n4 as f64 * v[3])
                            .abs();
                    if res < best_multi.residual {
                        best_multi = Resonance {
                            coefficients: c,
                            residual: res,
                        };
                    }
                }
            }
        }
    }
    Ok(CommensurabilityReport {
        tol,
        q_max,
        pairs,
        flags,
        best_multi_term: best_multi,
    })
}

/// Floquet eigenstates of the periodic rotor on a small grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloquetSummary {
    /// Decay lengths of `|phi_m|^2` for eigenstates centered in the inner
    /// half of the grid.
    pub decay_lengths: Vec<f64>,
    pub median_decay_length: f64,
    /// Largest deviation of an eigenvalue from the unit circle.
    pub unitarity_error: f64,
}

/// Diagonalizes the one-period unitary (time-independent kick, `epsilon`
/// ignored) on an `n <= 512` grid and fits the exponential decay of each
/// eigenvector's probability profile.
pub fn floquet_localization(params: &RotorParams, n: usize, beta: f64) -> Result<FloquetSummary> {
    if n > 512 {
        return Err(invalid("Floquet diagonalization limited to n <= 512"));
    }
    let grid = MomentumGrid::new(n, beta)?;
    let periodic = RotorParams {
        epsilon: 0.0,
        ..*params
    };
    let u = one_kick_unitary(&periodic, &grid, 0);
    let mat = DMatrix::from_row_slice(n, n, &u);
    let schur = mat
        .try_schur(1e-14, 10_000)
        .ok_or_else(|| Error::NonConvergence("Schur decomposition did not converge".into()))?;
    let (q, t) = schur.unpack();
    let unitarity_error = (0..n)
        .map(|i| (t[(i, i)].norm() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut lengths = Vec::new();
    for col in 0..n {
        let prob: Vec<f64> = (0..n).map(|i| q[(i, col)].norm_sqr()).collect();
        let center = (0..n).max_by(|&a, &b| prob[a].total_cmp(&prob[b])).unwrap();
        let mc = grid.m(center);
        if mc.unsigned_abs() as usize > n / 4 {
            continue;
        }
        let floor = 1e-24;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, p) in prob.iter().enumerate() {
            let d = (grid.m(i) - mc).abs();
            if d >= 2 && d as usize <= n / 4 && *p > floor {
                x.push(d as f64);
                y.push(p.ln());
            }
        }
        if x.len() < 4 {
            continue;
        }
        if let Ok(f) = line_fit(&x, &y, None) {
            if f.slope < 0.0 {
                lengths.push(-1.0 / f.slope);
            }
        }
    }
    if lengths.is_empty() {
        return Err(Error::InsufficientData("no interior Floquet states".into()));
    }
    let mut sorted = lengths.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(FloquetSummary {
        median_decay_length: sorted[sorted.len() / 2],
        decay_lengths: lengths,
        unitarity_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onsite_trivial_values() {
        let e = onsite_energies_1d(2.85, 0.0, 0..=0, 0.0).unwrap();
        assert_eq!(e.values, vec![0.0]);
        let e3 = onsite_energies_3d(2.85, 1.0, 2.0, 0.0, [1, 1, 1]).unwrap();
        assert_eq!(e3.values[13], 0.0);
        assert_eq!(e3.site(13), vec![0, 0, 0]);
    }

    #[test]
    fn onsite_degenerate_axis() {
        let e = onsite_energies_3d(2.85, 0.0, 2.0 * PI * 13f64.sqrt(), 0.3, [3, 4, 3]).unwrap();
        let s = &e.shape;
        for i1 in 0..s[0] {
            for i3 in 0..s[2] {
                let v0 = e.values[(i1 * s[1]) * s[2] + i3];
                for i2 in 0..s[1] {
                    assert_eq!(e.values[(i1 * s[1] + i2) * s[2] + i3], v0);
                }
            }
        }
    }

    #[test]
    fn rational_kbar_gives_periodic_energies() {
        for (p, q) in [(1, 3), (2, 5), (3, 7)] {
            let kbar = TAU * p as f64 / q as f64;
            let e = onsite_energies_1d(kbar, 0.4, -200..=200, 0.0).unwrap();
            let period = detect_period(&e.values, 100, 1e-7).expect("periodic");
            assert_eq!((2 * q) % period, 0, "period {period} for {p}/{q}");
        }
        let e = onsite_energies_1d(2.85, 0.4, -5000..=5000, 0.0).unwrap();
        assert_eq!(detect_period(&e.values, 5000, 1e-7), None);
    }

    #[test]
    fn pole_flag() {
        // (0 - kbar/2) / 2 = -pi/2 at m = 1 with kbar = 2 pi
        let e = onsite_energies_1d(TAU, 0.0, 0..=1, 0.0).unwrap();
        assert_eq!(e.pole_sites, vec![1]);
    }

    #[test]
    fn hopping_symmetry_and_parity() {
        let h = hopping_coefficients_1d(5.0, 2.89, 20, 1 << 14).unwrap();
        for r in 0..=20i64 {
            assert!((h.get(r) - h.get(-r)).abs() < 1e-14);
            if r % 2 == 0 {
                assert!(h.get(r).abs() < 1e-14);
            }
        }
        let d = fit_hopping_decay(&h, 3, 15).unwrap();
        assert!(d.gamma > 0.0);
    }

    #[test]
    fn hopping_singular() {
        assert!(matches!(
            hopping_coefficients_1d(3.0 * PI, 3.0, 5, 1 << 14),
            Err(Error::SingularKick { .. })
        ));
        assert!(matches!(
            hopping_coefficients_3d(6.36, 0.4364, 2.85, [3, 3, 3], &Hopping3dOptions::default()),
            Err(Error::SingularKick { .. })
        ));
    }

    #[test]
    fn commensurability_examples() {
        let r = commensurability_check(TAU, 1.3, 2.9, 1e-3, 20).unwrap();
        assert!(r.flags.iter().any(|f| f.coefficients == [1, 0, 0, -2]));
        let r = commensurability_check(2.85, 3.3, 3.3, 1e-3, 20).unwrap();
        assert!(r.flags.iter().any(|f| f.coefficients == [0, 1, -1, 0]));
    }
}
