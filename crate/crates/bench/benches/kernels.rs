use criterion::{
    black_box, criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput,
};
use qkr_bench::{spread_state, synthetic_dataset};
use qkr_core::anderson::hopping_coefficients_1d;
use qkr_core::classical::{quasiperiodic_classical_step, ClassicalState};
use qkr_core::quantum::Propagator;
use qkr_core::scaling::{collapse, fit_full_scaling, ScalingOrders};
use qkr_core::RotorParams;

// Throughput is in site updates, the unit of the harness cost estimates.
fn split_step(c: &mut Criterion) {
    let params = RotorParams::quasiperiodic(6.4, 0.436, 2.85);
    let mut g = c.benchmark_group("split_step");
    for n in [256, 1024, 4096, 16384] {
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            let mut prop = Propagator::new(n);
            b.iter_batched_ref(
                || spread_state(n),
                |s| {
                    prop.step(s, &params);
                },
                BatchSize::SmallInput,
            );
        });
    }
    g.finish();
}

fn classical_map(c: &mut Criterion) {
    let params = RotorParams::quasiperiodic(10.0, 0.8, 2.85);
    c.bench_function("classical_step_x1000", |b| {
        b.iter(|| {
            let mut s = ClassicalState {
                x: 0.3,
                p: 0.1,
                x2: 0.2,
                x3: 0.7,
                p2: 0.0,
                p3: 0.0,
            };
            for t in 0..1000 {
                s = quasiperiodic_classical_step(s, &params, t);
            }
            black_box(s)
        })
    });
}

fn analysis(c: &mut Criterion) {
    let d = synthetic_dataset();
    let mut g = c.benchmark_group("analysis");
    g.sample_size(10);
    g.bench_function("collapse", |b| b.iter(|| collapse(black_box(&d)).unwrap()));
    g.bench_function("full_fit", |b| {
        b.iter(|| fit_full_scaling(black_box(&d), ScalingOrders::default()).unwrap())
    });
    g.bench_function("hopping_1d", |b| {
        b.iter(|| hopping_coefficients_1d(5.0, 2.89, 40, 1 << 14).unwrap())
    });
    g.finish();
}

criterion_group!(benches, split_step, classical_map, analysis);
criterion_main!(benches);
