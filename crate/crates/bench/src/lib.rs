//! Fixtures shared by the kernel benchmarks.

use qkr_core::quantum::{MomentumGrid, Propagator, WaveState};
use qkr_core::scaling::{synthetic_full_dataset, CriticalFit, ScalingDataset, ScalingOrders};
use qkr_core::RotorParams;

/// State spread over `n` sites after a few kicks at K = 6.4.
pub fn spread_state(n: usize) -> WaveState {
    let params = RotorParams::quasiperiodic(6.4, 0.436, 2.85);
    let mut state = WaveState::plane_wave(MomentumGrid::new(n, 0.3).unwrap(), 0).unwrap();
    let mut prop = Propagator::new(n);
    for _ in 0..5 {
        prop.step(&mut state, &params);
    }
    state
}

/// Dataset drawn from a known scaling model, 15 K values by 13 times.
pub fn synthetic_dataset() -> ScalingDataset {
    let truth = CriticalFit {
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
    };
    let k: Vec<f64> = (0..15).map(|i| 7.4 + 0.1 * i as f64).collect();
    let t: Vec<f64> = (0..13).map(|i| 1e3 * 10f64.powf(i as f64 / 4.0)).collect();
    synthetic_full_dataset(&truth, &k, &t, 0.01, 3).unwrap()
}
