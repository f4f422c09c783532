//! Shared helpers for the integration suites: an independent first-order
//! oracle for the tiny vectorized program and brute-force checks for the
//! nuclear-norm prox.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Scalar series pair for the tiny instances (p = m = 1).
pub fn tiny_series(seed: u64, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let u = DMatrix::from_fn(1, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    // a mildly dynamic output with additive noise
    let mut y = DMatrix::zeros(1, n);
    let mut state = 0.0;
    for k in 0..n {
        state = 0.6 * state + u[(0, k)];
        y[(0, k)] = state + 0.1 * (rng.gen::<f64>() - 0.5);
    }
    (u, y)
}

/// Dense linear map from the free parameters of the tiny s = 2 scalar
/// program to the vectorized 2 x (n-1) structured residual, built from the
/// definitions written out by hand (independent of the solver's assembly).
///
/// Parameter layout: [yhat(0..n), tu0, tu1, ty1], residual stored
/// column-major.
pub fn tiny_vectorized_map(u: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.ncols();
    let cols = n - 1; // N - s + 1 with s = 2
    let nx = n + 3;
    let mut k_mat = DMatrix::zeros(2 * cols, nx);
    for j in 0..cols {
        let r0 = 2 * j; // (row 0, col j) of the 2 x cols residual
        let r1 = 2 * j + 1;
        // Hankel part: residual(i, j) = yhat(i + j)
        k_mat[(r0, j)] += 1.0;
        k_mat[(r1, j + 1)] += 1.0;
        // minus T_u U_s: row 0 gets tu0 u(j); row 1 gets tu1 u(j) + tu0 u(j+1)
        k_mat[(r0, n)] -= u[(0, j)];
        k_mat[(r1, n + 1)] -= u[(0, j)];
        k_mat[(r1, n)] -= u[(0, j + 1)];
        // minus strictly causal T_y Y_s: row 1 gets ty1 y(j)
        k_mat[(r1, n + 2)] -= y[(0, j)];
    }
    k_mat
}

pub fn nuclear(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.iter().sum()
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
}

/// Projection onto the unit spectral-norm ball (prox of the conjugate of the
/// nuclear norm).
fn project_spectral_ball(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut s = svd.singular_values.clone();
    for v in s.iter_mut() {
        *v = v.min(1.0);
    }
    u * DMatrix::from_diagonal(&s) * vt
}

/// Primal-dual hybrid gradient on
///   min_x  || mat(K x) ||_*  +  w * sum_i (x_i - y_i)^2 over the first n
/// coordinates. Returns the optimal objective value.
pub fn pdhg_tiny_objective(
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    w: f64,
    iters: usize,
) -> f64 {
    let n = u.ncols();
    let cols = n - 1;
    let k_mat = tiny_vectorized_map(u, y);
    let nx = k_mat.ncols();
    let norm_k = spectral_norm(&k_mat);
    let step = 0.9 / norm_k;
    let (sigma, tau) = (step, step);

    let mut x = nalgebra::DVector::<f64>::zeros(nx);
    let mut x_bar = x.clone();
    let mut z = nalgebra::DVector::<f64>::zeros(2 * cols);
    for _ in 0..iters {
        let z_arg = &z + sigma * (&k_mat * &x_bar);
        let z_mat = DMatrix::from_column_slice(2, cols, z_arg.as_slice());
        let z_proj = project_spectral_ball(&z_mat);
        z.copy_from_slice(z_proj.as_slice());
        let mut x_new = &x - tau * (k_mat.transpose() * &z);
        for i in 0..n {
            x_new[i] = (x_new[i] + 2.0 * tau * w * y[(0, i)]) / (1.0 + 2.0 * tau * w);
        }
        x_bar = 2.0 * &x_new - &x;
        x = x_new;
    }
    let residual = DMatrix::from_column_slice(2, cols, (&k_mat * &x).as_slice());
    let quad: f64 = (0..n).map(|i| (x[i] - y[(0, i)]).powi(2)).sum();
    nuclear(&residual) + w * quad
}

/// Value of the prox-defining objective 0.5 ||z - m||_F^2 + tau ||z||_*.
pub fn prox_objective(z: &DMatrix<f64>, m: &DMatrix<f64>, tau: f64) -> f64 {
    0.5 * (z - m).norm_squared() + tau * nuclear(z)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
}
