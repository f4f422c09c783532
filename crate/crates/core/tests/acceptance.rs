//! End-to-end acceptance checks. Each test prints a single PASS line on
//! success; tolerances and budgets are stated inline.

mod common;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use common::{pdhg_tiny_objective, prox_objective, random_matrix, tiny_series};
use n2sid_core::bench::{run_closed_loop_study, run_open_loop_study, StudyConfig};
use n2sid_core::datagen::{
    open_loop_batch, random_stable_system, ClosedLoopConfig, OpenLoopConfig,
};
use n2sid_core::pipeline::{identify, sweep_lambda, validation_fit, IdentifyConfig};
use n2sid_core::solver::{prox_nuclear, solve_n2sid, N2sidProblem, SolverOptions};
use n2sid_core::structured::{build_hankel, data_equation_residual};

/// Largest term magnitude in the data equation, used as the reference scale
/// for relative residual checks (the terms cancel, so any one of them can
/// dominate the left-hand side).
fn equation_scale(
    model: &n2sid_core::model::StateSpaceModel,
    io: &n2sid_core::model::IoBatch,
    e: &DMatrix<f64>,
    x0: &nalgebra::DVector<f64>,
    tu: &n2sid_core::structured::ToeplitzBlocks,
    ty: &n2sid_core::structured::ToeplitzBlocks,
) -> f64 {
    use n2sid_core::structured::{build_observability, state_sequence, toeplitz_apply};
    let u_s = build_hankel(&io.u, 15).unwrap();
    let y_s = build_hankel(&io.y, 15).unwrap();
    let (a_obs, _) = model.observer_matrices();
    let obs = build_observability(&a_obs, &model.c, 15).unwrap();
    let x = state_sequence(model, &io.u, e, x0, 15).unwrap();
    y_s.values
        .norm()
        .max((&obs.values * &x.values).norm())
        .max(toeplitz_apply(tu, &u_s).unwrap().norm())
        .max(toeplitz_apply(ty, &y_s).unwrap().norm())
        .max(1e-300)
}

#[test]
fn criterion_1_structured_exactness() {
    let t0 = Instant::now();
    for seed in 0..50u64 {
        let clean = OpenLoopConfig {
            noise_std: 0.0,
            ..OpenLoopConfig::default()
        };
        let model = random_stable_system(&clean, seed).unwrap();
        let (io, e0, x0) = open_loop_batch(&model, &clean, seed).unwrap();
        let resid = data_equation_residual(&model, &io, &e0, &x0, 15).unwrap();
        // relative to the size of the cancelling terms: the observer form
        // can make O_s X, T_u U_s, and T_y Y_s much larger than Y_s itself
        let (tu, ty) = n2sid_core::structured::markov_blocks_from_model(&model, 15).unwrap();
        let scale = equation_scale(&model, &io, &e0, &x0, &tu, &ty);
        assert!(
            resid.norm() / scale <= 1e-10,
            "seed {seed}: noise-free residual {:.3e}",
            resid.norm() / scale
        );

        let noisy = OpenLoopConfig::default();
        let (io_n, e, x0_n) = open_loop_batch(&model, &noisy, seed).unwrap();
        let resid_n = data_equation_residual(&model, &io_n, &e, &x0_n, 15).unwrap();
        let e_s = build_hankel(&e, 15).unwrap().values;
        let scale_n = e_s.norm().max(equation_scale(&model, &io_n, &e, &x0_n, &tu, &ty));
        assert!(
            (&resid_n - &e_s).norm() / scale_n <= 1e-10,
            "seed {seed}: noisy residual deviates from the innovation Hankel by {:.3e}",
            (&resid_n - &e_s).norm() / scale_n
        );
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "took {dt:.1}s, budget 10s");
    println!("criterion 1 (structured exactness, 50 models): PASS in {dt:.1}s");
}

#[test]
fn criterion_2_prox_correctness() {
    let t0 = Instant::now();
    // 100 random matrices against from-scratch soft thresholding
    for seed in 0..100u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let rows = 2 + (seed % 7) as usize;
        let cols = 2 + (seed % 11) as usize;
        let m = DMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() * 4.0 - 2.0);
        let tau = 0.05 + 0.02 * (seed % 30) as f64;
        let z = prox_nuclear(&m, tau).unwrap();
        let svd = m.clone().svd(true, true);
        let mut s = svd.singular_values.clone();
        for v in s.iter_mut() {
            *v = (*v - tau).max(0.0);
        }
        let rebuilt =
            svd.u.as_ref().unwrap() * DMatrix::from_diagonal(&s) * svd.v_t.as_ref().unwrap();
        assert!((z - rebuilt).norm() <= 1e-10, "seed {seed}");
    }
    // definitional check: the prox output minimizes its objective locally
    for seed in 0..5u64 {
        let m = random_matrix(4, 6, 500 + seed);
        let tau = 0.25 + 0.1 * seed as f64;
        let z = prox_nuclear(&m, tau).unwrap();
        let base = prox_objective(&z, &m, tau);
        for probe in 0..20u64 {
            let scale = 10f64.powi(-((probe % 4) as i32) - 1);
            let delta = random_matrix(4, 6, 9000 + seed * 53 + probe) * scale;
            assert!(
                prox_objective(&(&z + &delta), &m, tau) >= base - 1e-12,
                "seed {seed} probe {probe}"
            );
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "took {dt:.1}s, budget 10s");
    println!("criterion 2 (prox correctness, 100 + 5 instances): PASS in {dt:.1}s");
}

#[test]
fn criterion_3_solver_oracle_equivalence() {
    let t0 = Instant::now();
    let opts = SolverOptions {
        max_iters: 50_000,
        primal_tol: 1e-9,
        dual_tol: 1e-9,
        ..SolverOptions::default()
    };
    for (seed, w) in [(11u64, 0.5), (12, 1.0), (13, 2.0), (14, 5.0), (15, 0.2)] {
        let (u, y) = tiny_series(seed, 6);
        let problem = N2sidProblem::new(&u, &y, 2, w * 6.0).unwrap();
        let solution = solve_n2sid(&problem, &opts).unwrap();
        let oracle = pdhg_tiny_objective(&u, &y, w, 200_000);
        let rel = (solution.objective - oracle).abs() / oracle.max(1e-12);
        assert!(rel < 1e-4, "seed {seed}: rel gap {rel:.2e}");
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 120.0, "took {dt:.1}s, budget 2min");
    println!("criterion 3 (solver vs independent oracle, 5 instances): PASS in {dt:.1}s");
}

#[test]
fn criterion_4_noise_free_exact_recovery() {
    let t0 = Instant::now();
    let cfg = OpenLoopConfig {
        noise_std: 0.0,
        ..OpenLoopConfig::default()
    };
    for seed in 0..20u64 {
        let model = random_stable_system(&cfg, 1000 + seed).unwrap();
        let (ident, _, _) = open_loop_batch(&model, &cfg, 2000 + seed).unwrap();
        let (valid, _, _) = open_loop_batch(&model, &cfg, 3000 + seed).unwrap();
        let id_cfg = IdentifyConfig::default();
        let result = identify(&ident, &id_cfg).unwrap();
        assert_eq!(
            result.order, 2,
            "seed {seed}: order {} svs {:?}",
            result.order, result.singular_values
        );
        let ratio = result.singular_values[2] / result.singular_values[1];
        assert!(ratio < 1e-3, "seed {seed}: sigma3/sigma2 = {ratio:.2e}");
        let fit = validation_fit(&result.model, &valid).unwrap();
        assert!(fit >= 99.5, "seed {seed}: validation fit {fit:.2}");
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 300.0, "took {dt:.1}s, budget 5min");
    println!("criterion 4 (noise-free exact recovery, 20 systems): PASS in {dt:.1}s");
}

/// Percentile bootstrap for the mean of per-trial fit differences.
fn bootstrap_interval(diffs: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = diffs.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            (0..n).map(|_| diffs[rng.gen_range(0..n)]).sum::<f64>() / n as f64
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        means[(0.05 * resamples as f64) as usize],
        means[(0.95 * resamples as f64) as usize],
    )
}

fn reference_study() -> StudyConfig {
    StudyConfig {
        select_on_validation: true,
        ..StudyConfig::default()
    }
}

#[test]
fn criterion_5_open_loop_study() {
    let t0 = Instant::now();
    let report =
        run_open_loop_study(100, &OpenLoopConfig::default(), &reference_study(), 42).unwrap();
    assert_eq!(report.summary.completed_trials, 100, "trial failures present");
    let s = &report.summary;
    assert!(s.win_rate >= 0.60, "win rate {:.2}", s.win_rate);
    let advantage = s.n2sid_mean_fit - s.n4sid_mean_fit;
    assert!(advantage >= 0.0, "mean-fit advantage {advantage:.2}");
    let diffs: Vec<f64> = report
        .trials
        .iter()
        .map(|t| t.n2sid_fit.unwrap() - t.n4sid_fit.unwrap())
        .collect();
    let (lo, hi) = bootstrap_interval(&diffs, 2000, 7);
    assert!(lo >= -2.0, "bootstrap 90% interval [{lo:.2}, {hi:.2}]");
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 7200.0, "took {dt:.1}s, budget 2h");
    println!(
        "criterion 5 (open-loop study, 100 trials): PASS in {dt:.0}s \
         (win {:.2}, fits {:.1} vs {:.1}, bootstrap [{lo:.2}, {hi:.2}])",
        s.win_rate, s.n2sid_mean_fit, s.n4sid_mean_fit
    );
}

#[test]
fn criterion_6_closed_loop_study() {
    let t0 = Instant::now();
    let report =
        run_closed_loop_study(100, &ClosedLoopConfig::default(), &reference_study(), 42).unwrap();
    assert_eq!(report.summary.completed_trials, 100, "trial failures present");
    let s = &report.summary;
    assert!(s.win_rate >= 0.50, "win rate {:.2}", s.win_rate);
    let (n2, n4) = (s.n2sid_eig_spread.unwrap(), s.n4sid_eig_spread.unwrap());
    assert!(n2 < n4, "eigenvalue spread {n2:.4} not below baseline {n4:.4}");
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 3600.0, "took {dt:.1}s, budget 1h");
    println!(
        "criterion 6 (closed-loop study, 100 trials): PASS in {dt:.0}s \
         (win {:.2}, eig spread {n2:.4} vs {n4:.4})",
        s.win_rate
    );
}

#[test]
fn criterion_7_pareto_monotonicity() {
    let t0 = Instant::now();
    let cfg = OpenLoopConfig::default();
    let mut id_cfg = IdentifyConfig::default();
    id_cfg.solver = SolverOptions {
        max_iters: 30_000,
        primal_tol: 1e-8,
        dual_tol: 1e-8,
        ..SolverOptions::default()
    };
    for seed in 0..5u64 {
        let model = random_stable_system(&cfg, 7000 + seed).unwrap();
        let (io, _, _) = open_loop_batch(&model, &cfg, 7000 + seed).unwrap();
        let points = sweep_lambda(&io, &id_cfg).unwrap();
        assert!(
            points.len() >= 18,
            "seed {seed}: only {} of 20 grid points solved",
            points.len()
        );
        for pair in points.windows(2) {
            let (prev, pt) = (&pair[0], &pair[1]);
            let slack_pe = 1e-6 * prev.prediction_error_term.abs().max(1e-12);
            let slack_nuc = 1e-6 * prev.nuclear_term.abs().max(1e-12);
            assert!(
                pt.prediction_error_term <= prev.prediction_error_term + slack_pe,
                "seed {seed}, lambda/N {:.3e}: prediction error rose \
                 {:.6e} -> {:.6e}",
                pt.lambda_over_n,
                prev.prediction_error_term,
                pt.prediction_error_term
            );
            assert!(
                pt.nuclear_term >= prev.nuclear_term - slack_nuc,
                "seed {seed}, lambda/N {:.3e}: nuclear term fell \
                 {:.6e} -> {:.6e}",
                pt.lambda_over_n,
                prev.nuclear_term,
                pt.nuclear_term
            );
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 600.0, "took {dt:.1}s, budget 10min");
    println!("criterion 7 (Pareto monotonicity, 5 problems x 20 points): PASS in {dt:.0}s");
}

#[test]
fn criterion_8_determinism() {
    let t0 = Instant::now();
    let study = reference_study();
    let a = run_open_loop_study(3, &OpenLoopConfig::default(), &study, 9).unwrap();
    let b = run_open_loop_study(3, &OpenLoopConfig::default(), &study, 9).unwrap();
    assert_eq!(a.canonical_hash(), b.canonical_hash(), "open-loop hash differs");
    let c = run_closed_loop_study(2, &ClosedLoopConfig::default(), &study, 9).unwrap();
    let d = run_closed_loop_study(2, &ClosedLoopConfig::default(), &study, 9).unwrap();
    assert_eq!(c.canonical_hash(), d.canonical_hash(), "closed-loop hash differs");
    println!(
        "criterion 8 (determinism, hash-identical reports): PASS in {:.0}s",
        t0.elapsed().as_secs_f64()
    );
}
