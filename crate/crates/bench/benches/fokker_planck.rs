use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use scalelab::race::{em_simulate, fp_solve, FpGrid, FpOptions, FpProblem, INIT_DELTA, INIT_RHO};

fn problem() -> FpProblem {
    // near the ε = 0.465, I_s = 7 operating point
    FpProblem {
        m: 0.006,
        b: 0.086,
        sigma1_sq: 3.4e-3,
        sigma2: 0.114,
        w_left: -4.6,
        w_right: 15.4,
        ell_star: 39.0,
        tau_star: 140.0,
        v_window: 1.0 / 7.0,
        init_rho: INIT_RHO,
        init_delta: INIT_DELTA,
    }
}

fn solvers(c: &mut Criterion) {
    let pr = problem();
    let coarse = FpOptions {
        grid: FpGrid {
            n_eta: 50,
            n_pl: 100,
            dt: 1.0,
        },
        ..FpOptions::standard(20)
    };
    c.bench_function("fp_solve_50x100", |b| b.iter(|| fp_solve(black_box(&pr), &coarse).unwrap()));
    c.bench_function("em_simulate_10k_paths", |b| {
        b.iter(|| em_simulate(black_box(&pr), 10_000, 0.1, 0).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = solvers
}
criterion_main!(benches);
