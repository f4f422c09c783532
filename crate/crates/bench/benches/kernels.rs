use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};

use n2sid_core::datagen::{open_loop_batch, random_stable_system, OpenLoopConfig};
use n2sid_core::solver::{prox_nuclear, solve_n2sid, N2sidProblem, SolverOptions};
use n2sid_core::structured::{build_hankel, hankel_adjoint};

fn bench_hankel(c: &mut Criterion) {
    let n = 500;
    let data = DMatrix::<f64>::from_fn(2, n, |i, j| ((i + 1) * j) as f64 % 7.0);
    c.bench_function("hankel_build_2x500_s20", |b| {
        b.iter(|| build_hankel(&data, 20).unwrap())
    });
    let h = build_hankel(&data, 20).unwrap();
    c.bench_function("hankel_adjoint_2x500_s20", |b| {
        b.iter(|| hankel_adjoint(&h.values, &h.spec).unwrap())
    });
}

fn bench_prox(c: &mut Criterion) {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
    let m = DMatrix::<f64>::from_fn(30, 40, |_, _| rng.gen::<f64>() - 0.5);
    c.bench_function("prox_nuclear_30x40", |b| b.iter(|| prox_nuclear(&m, 0.3)));
}

fn bench_solver(c: &mut Criterion) {
    let cfg = OpenLoopConfig {
        num_samples: 60,
        ..OpenLoopConfig::default()
    };
    let model = random_stable_system(&cfg, 3).unwrap();
    let (io, _, _) = open_loop_batch(&model, &cfg, 4).unwrap();
    let opts = SolverOptions {
        max_iters: 2000,
        ..SolverOptions::default()
    };
    c.bench_function("solve_n2sid_N60_s10", |b| {
        b.iter(|| {
            let problem = N2sidProblem::new(&io.u, &io.y, 10, 0.0)
                .unwrap()
                .with_lambda_over_n(10.0);
            solve_n2sid(&problem, &opts).unwrap()
        })
    });
}

criterion_group!(benches, bench_hankel, bench_prox, bench_solver);
criterion_main!(benches);
