//! Convex solver for the nuclear-norm identification program
//!
//! ```text
//! min  || Yhat_s - T_u U_s - T_y Y_s ||_*  +  (lambda/N) sum_k || y(k) - yhat(k) ||^2
//! ```
//!
//! over block-Hankel Yhat_s, lower-triangular block-Toeplitz T_u and strictly
//! causal T_y. The Hankel/Toeplitz structure is imposed by parametrization, so
//! every iterate is feasible by construction. The method is operator splitting
//! (ADMM): the structured variables are updated by a prefactorized linear
//! least-squares solve, the consensus matrix by singular-value soft
//! thresholding. An optional Gaussian right-sketch replaces the nuclear-norm
//! argument by its product with a random matrix.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::stream_rng;
use crate::error::{N2sidError, Result};
use crate::structured::{build_hankel, toeplitz_apply, BlockHankel, ToeplitzBlocks};

/// Right-sketch specification: either a seeded Gaussian matrix or an explicit
/// matrix (test hook, e.g. the identity).
#[derive(Debug, Clone)]
pub enum Sketch {
    Gaussian { width: usize, seed: u64 },
    Explicit(DMatrix<f64>),
}

/// One instance of the convex program.
#[derive(Debug, Clone)]
pub struct N2sidProblem {
    /// Input Hankel matrix; absent for output-only identification.
    pub u_s: Option<BlockHankel>,
    pub y_s: BlockHankel,
    /// Measured output series, p x N.
    pub y: DMatrix<f64>,
    /// Scalarization weight; the quadratic term carries lambda / N.
    pub lambda: f64,
    pub sketch: Option<Sketch>,
}

impl N2sidProblem {
    pub fn new(u: &DMatrix<f64>, y: &DMatrix<f64>, s: usize, lambda: f64) -> Result<Self> {
        if u.ncols() != y.ncols() {
            return Err(N2sidError::Dimension(
                "u and y must have the same number of samples".into(),
            ));
        }
        if lambda < 0.0 {
            return Err(N2sidError::Config("lambda must be nonnegative".into()));
        }
        Ok(Self {
            u_s: Some(build_hankel(u, s)?),
            y_s: build_hankel(y, s)?,
            y: y.clone(),
            lambda,
            sketch: None,
        })
    }

    /// Output-only variant: the T_u U_s term is absent.
    pub fn output_only(y: &DMatrix<f64>, s: usize, lambda: f64) -> Result<Self> {
        if lambda < 0.0 {
            return Err(N2sidError::Config("lambda must be nonnegative".into()));
        }
        Ok(Self {
            u_s: None,
            y_s: build_hankel(y, s)?,
            y: y.clone(),
            lambda,
            sketch: None,
        })
    }

    /// Construct with the weight given directly as lambda/N, the grid unit.
    pub fn with_lambda_over_n(mut self, lambda_over_n: f64) -> Self {
        self.lambda = lambda_over_n * self.y.ncols() as f64;
        self
    }

    pub fn with_sketch(mut self, sketch: Sketch) -> Self {
        self.sketch = Some(sketch);
        self
    }

    pub fn is_output_only(&self) -> bool {
        self.u_s.is_none()
    }

    pub fn s(&self) -> usize {
        self.y_s.spec.s
    }

    pub fn num_samples(&self) -> usize {
        self.y_s.spec.n_samples
    }

    fn validate(&self) -> Result<()> {
        if let Some(u_s) = &self.u_s {
            if u_s.spec.s != self.y_s.spec.s || u_s.spec.n_samples != self.y_s.spec.n_samples {
                return Err(N2sidError::Dimension(
                    "U_s and Y_s must share s and N".into(),
                ));
            }
        }
        if self.y.nrows() != self.y_s.spec.block_dim || self.y.ncols() != self.y_s.spec.n_samples {
            return Err(N2sidError::Dimension(
                "measured output does not match Y_s".into(),
            ));
        }
        if let Some(Sketch::Gaussian { width, .. }) = &self.sketch {
            if *width == 0 {
                return Err(N2sidError::Config("sketch width must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Operator-splitting options.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub penalty: f64,
    pub adaptive_penalty: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            primal_tol: 1e-6,
            dual_tol: 1e-6,
            penalty: 1.0,
            adaptive_penalty: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Objective of the running best structured iterate, per iteration.
    pub objective_trace: Vec<f64>,
    pub penalty_events: usize,
}

/// Solution of the convex program.
#[derive(Debug, Clone)]
pub struct N2sidSolution {
    /// Predicted output series, p x N.
    pub yhat: DMatrix<f64>,
    pub tu_blocks: Option<ToeplitzBlocks>,
    pub ty_blocks: ToeplitzBlocks,
    /// Unsketched structured residual Yhat_s - T_u U_s - T_y Y_s.
    pub m_star: DMatrix<f64>,
    /// Singular values of the nuclear-norm argument (sketched when a sketch
    /// is active), nonincreasing.
    pub singular_values: Vec<f64>,
    pub objective: f64,
    pub diagnostics: SolverDiagnostics,
}

/// Singular-value soft thresholding: prox of tau * nuclear norm.
pub fn prox_nuclear(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if tau <= 0.0 {
        return Err(N2sidError::Config("tau must be positive".into()));
    }
    let svd = m.clone().svd(true, true);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| N2sidError::Numerical("SVD failed to produce U".into()))?;
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| N2sidError::Numerical("SVD failed to produce V^T".into()))?;
    let shrunk = svd.singular_values.map(|s| (s - tau).max(0.0));
    Ok(u * DMatrix::from_diagonal(&shrunk) * v_t)
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.iter().sum()
}

/// Nonincreasing singular values of a matrix.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Seeded standard-normal sketch matrix with `cols` rows and `width` columns.
pub fn gaussian_sketch(cols: usize, width: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 5);
    DMatrix::from_fn(cols, width, |_, _| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    })
}

/// Right-multiply by a seeded Gaussian sketch.
pub fn apply_sketch(m: &DMatrix<f64>, width: usize, seed: u64) -> DMatrix<f64> {
    m * gaussian_sketch(m.ncols(), width, seed)
}

/// Logarithmically spaced grid of lambda/N values, inclusive at both ends.
pub fn lambda_grid(count: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(N2sidError::Config("grid needs at least 2 points".into()));
    }
    if !(lo > 0.0 && hi > lo) {
        return Err(N2sidError::Config("need 0 < lo < hi".into()));
    }
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    Ok((0..count).map(|i| lo * ratio.powi(i as i32)).collect())
}

/// Default grid of the benchmark studies: 20 points on [10^-0.5, 10^4].
pub fn default_lambda_grid() -> Vec<f64> {
    lambda_grid(20, 10f64.powf(-0.5), 1e4).expect("default grid parameters are valid")
}

/// Free-parameter layout: yhat samples, then T_u blocks, then the strictly
/// causal T_y blocks (diagonal block pinned to zero).
struct Parametrization {
    s: usize,
    n: usize,
    p: usize,
    m: usize,
    output_only: bool,
}

impl Parametrization {
    fn from_problem(problem: &N2sidProblem) -> Self {
        Self {
            s: problem.s(),
            n: problem.num_samples(),
            p: problem.y_s.spec.block_dim,
            m: problem.u_s.as_ref().map_or(0, |u| u.spec.block_dim),
            output_only: problem.is_output_only(),
        }
    }

    fn num_yhat(&self) -> usize {
        self.p * self.n
    }

    fn num_tu(&self) -> usize {
        if self.output_only {
            0
        } else {
            self.s * self.p * self.m
        }
    }

    fn num_ty(&self) -> usize {
        (self.s - 1) * self.p * self.p
    }

    fn len(&self) -> usize {
        self.num_yhat() + self.num_tu() + self.num_ty()
    }

    /// Unpack a parameter vector into (yhat, T_u, T_y).
    fn unpack(&self, x: &DVector<f64>) -> (DMatrix<f64>, Option<ToeplitzBlocks>, ToeplitzBlocks) {
        let p = self.p;
        let mut yhat = DMatrix::zeros(p, self.n);
        for k in 0..self.n {
            for ch in 0..p {
                yhat[(ch, k)] = x[k * p + ch];
            }
        }
        let mut off = self.num_yhat();
        let tu = if self.output_only {
            None
        } else {
            let mut blocks = Vec::with_capacity(self.s);
            for _ in 0..self.s {
                let mut b = DMatrix::zeros(p, self.m);
                for c in 0..self.m {
                    for r in 0..p {
                        b[(r, c)] = x[off];
                        off += 1;
                    }
                }
                blocks.push(b);
            }
            Some(ToeplitzBlocks {
                blocks,
                strictly_causal: false,
            })
        };
        let mut ty_blocks = vec![DMatrix::zeros(p, p)];
        for _ in 1..self.s {
            let mut b = DMatrix::zeros(p, p);
            for c in 0..p {
                for r in 0..p {
                    b[(r, c)] = x[off];
                    off += 1;
                }
            }
            ty_blocks.push(b);
        }
        let ty = ToeplitzBlocks {
            blocks: ty_blocks,
            strictly_causal: true,
        };
        (yhat, tu, ty)
    }
}

/// Unsketched structured residual for a parameter vector.
fn structured_residual(
    problem: &N2sidProblem,
    par: &Parametrization,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let (yhat, tu, ty) = par.unpack(x);
    let yhat_s = build_hankel(&yhat, par.s)?;
    let mut r = yhat_s.values;
    if let (Some(tu), Some(u_s)) = (&tu, &problem.u_s) {
        r -= toeplitz_apply(tu, u_s)?;
    }
    r -= toeplitz_apply(&ty, &problem.y_s)?;
    Ok(r)
}

/// Build the dense matrix of the linear map x -> vec(R(x) G), where R is the
/// structured residual and G the (optional) sketch.
fn assemble_map(
    problem: &N2sidProblem,
    par: &Parametrization,
    g: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let s = par.s;
    let p = par.p;
    let cols = problem.y_s.spec.num_cols();
    let q = g.map_or(cols, |g| g.ncols());
    let nrows = s * p * q;

    // sketched data Hankels
    let us_g = problem.u_s.as_ref().map(|u_s| match g {
        Some(g) => &u_s.values * g,
        None => u_s.values.clone(),
    });
    let ys_g = match g {
        Some(g) => &problem.y_s.values * g,
        None => problem.y_s.values.clone(),
    };

    let mut a = DMatrix::zeros(nrows, par.len());
    let idx = |row: usize, c: usize| c * (s * p) + row; // column-major vec of (s p) x q

    // yhat samples through the (sketched) Hankel map
    for k in 0..par.n {
        for ch in 0..p {
            let xcol = k * p + ch;
            let i_lo = k.saturating_sub(cols - 1);
            let i_hi = k.min(s - 1);
            for i in i_lo..=i_hi {
                let j = k - i;
                for c in 0..q {
                    let val = match g {
                        Some(g) => g[(j, c)],
                        None => {
                            if j == c {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    };
                    if val != 0.0 {
                        a[(idx(i * p + ch, c), xcol)] += val;
                    }
                }
            }
        }
    }

    // T_u blocks: block k contributes -blocks[k] * (U_s G) block row (i - k)
    if let Some(us_g) = &us_g {
        let m = par.m;
        let base = par.num_yhat();
        for k in 0..s {
            for c_ in 0..m {
                for r in 0..p {
                    let xcol = base + k * p * m + c_ * p + r;
                    for i in k..s {
                        let src = (i - k) * m + c_;
                        for c in 0..q {
                            a[(idx(i * p + r, c), xcol)] -= us_g[(src, c)];
                        }
                    }
                }
            }
        }
    }

    // strictly causal T_y blocks, k = 1..s-1
    {
        let base = par.num_yhat() + par.num_tu();
        for k in 1..s {
            for c_ in 0..p {
                for r in 0..p {
                    let xcol = base + (k - 1) * p * p + c_ * p + r;
                    for i in k..s {
                        let src = (i - k) * p + c_;
                        for c in 0..q {
                            a[(idx(i * p + r, c), xcol)] -= ys_g[(src, c)];
                        }
                    }
                }
            }
        }
    }

    a
}

fn factorize(
    ata: &DMatrix<f64>,
    rho: f64,
    weight: f64,
    num_yhat: usize,
) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let nx = ata.nrows();
    let mut normal = ata * rho;
    for i in 0..num_yhat {
        normal[(i, i)] += 2.0 * weight;
    }
    let mean_diag = normal.trace() / nx as f64;
    let mut ridge = 0.0;
    loop {
        let mut m = normal.clone();
        if ridge > 0.0 {
            for i in 0..nx {
                m[(i, i)] += ridge;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok(ch);
        }
        ridge = if ridge == 0.0 {
            1e-12 * mean_diag.max(1e-300)
        } else {
            ridge * 100.0
        };
        if ridge > 1e-2 * mean_diag.max(1e-300) {
            return Err(N2sidError::Numerical(
                "normal equations could not be factorized".into(),
            ));
        }
    }
}

/// Opaque iterate carried between related solves (warm starting across a
/// lambda grid).
#[derive(Debug, Clone)]
pub struct SolverState {
    x: DVector<f64>,
    m: DVector<f64>,
    w: DVector<f64>,
}

/// Solve the convex program by ADMM. The returned point is the structured
/// iterate with the best objective seen; its constraints hold exactly by
/// parametrization.
pub fn solve_n2sid(problem: &N2sidProblem, opts: &SolverOptions) -> Result<N2sidSolution> {
    solve_n2sid_warm(problem, opts, None).map(|(sol, _)| sol)
}

/// Variant that accepts and returns the raw iterate, so consecutive solves
/// of the same-shaped problem (e.g. neighboring grid points) start close to
/// the solution.
pub fn solve_n2sid_warm(
    problem: &N2sidProblem,
    opts: &SolverOptions,
    init: Option<&SolverState>,
) -> Result<(N2sidSolution, SolverState)> {
    problem.validate()?;
    if opts.primal_tol <= 0.0 || opts.dual_tol <= 0.0 || opts.penalty <= 0.0 {
        return Err(N2sidError::Config(
            "tolerances and penalty must be positive".into(),
        ));
    }
    let par = Parametrization::from_problem(problem);
    let cols = problem.y_s.spec.num_cols();
    let g_matrix: Option<DMatrix<f64>> = match &problem.sketch {
        None => None,
        Some(Sketch::Gaussian { width, seed }) => Some(gaussian_sketch(cols, *width, *seed)),
        Some(Sketch::Explicit(g)) => {
            if g.nrows() != cols {
                return Err(N2sidError::Dimension(format!(
                    "sketch must have {} rows, got {}",
                    cols,
                    g.nrows()
                )));
            }
            Some(g.clone())
        }
    };
    let q = g_matrix.as_ref().map_or(cols, |g| g.ncols());
    let sp = par.s * par.p;

    let weight = problem.lambda / par.n as f64;
    let a = assemble_map(problem, &par, g_matrix.as_ref());
    let nx = par.len();
    let ata = a.transpose() * &a;

    // target of the quadratic term: measured y stacked sample-major
    let mut y_vec = DVector::zeros(par.num_yhat());
    for k in 0..par.n {
        for ch in 0..par.p {
            y_vec[k * par.p + ch] = problem.y[(ch, k)];
        }
    }

    let mut rho = opts.penalty;
    let mut chol = factorize(&ata, rho, weight, par.num_yhat())?;

    let mlen = sp * q;
    let (mut x, mut m_var, mut w_var) = match init {
        Some(state) if state.x.len() == nx && state.m.len() == mlen && state.w.len() == mlen => {
            (state.x.clone(), state.m.clone(), state.w.clone())
        }
        _ => (
            DVector::<f64>::zeros(nx),
            DVector::<f64>::zeros(mlen),
            DVector::<f64>::zeros(mlen),
        ),
    };

    let mut best_obj = f64::INFINITY;
    let mut best_x = x.clone();
    let mut trace = Vec::new();
    let mut penalty_events = 0usize;
    let mut pri = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut converged_at = None;

    let eps_abs = 1e-12;
    for iter in 0..opts.max_iters {
        // structured update: prefactorized least squares
        let mut rhs = a.transpose() * (&m_var - &w_var) * rho;
        for i in 0..par.num_yhat() {
            rhs[i] += 2.0 * weight * y_vec[i];
        }
        x = chol.solve(&rhs);

        let ax = &a * &x;
        let ax_mat = DMatrix::from_column_slice(sp, q, ax.as_slice());

        // consensus update: singular value thresholding, with standard
        // over-relaxation of the structured point
        let alpha = 1.6;
        let m_old = m_var.clone();
        let ax_relaxed = alpha * &ax + (1.0 - alpha) * &m_old;
        let arg = DMatrix::from_column_slice(sp, q, ax_relaxed.as_slice())
            + DMatrix::from_column_slice(sp, q, w_var.as_slice());
        let m_mat = prox_nuclear(&arg, 1.0 / rho)?;
        m_var = DVector::from_column_slice(m_mat.as_slice());

        // dual update
        w_var += &ax_relaxed - &m_var;
        let r = &ax - &m_var;

        pri = r.norm();
        dual = (a.transpose() * (&m_var - &m_old)).norm() * rho;

        // objective of the structured (feasible) iterate
        let obj = nuclear_norm(&ax_mat) + weight * (&x.rows(0, par.num_yhat()) - &y_vec).norm_squared();
        if obj < best_obj {
            best_obj = obj;
            best_x = x.clone();
        }
        trace.push(best_obj);

        let pri_ref = ax.norm().max(m_var.norm()).max(1.0);
        let dual_ref = (a.transpose() * &w_var).norm() * rho;
        if pri <= eps_abs * (mlen as f64).sqrt() + opts.primal_tol * pri_ref
            && dual <= eps_abs * (nx as f64).sqrt() + opts.dual_tol * dual_ref.max(1.0)
        {
            converged_at = Some(iter + 1);
            break;
        }

        // residual balancing on normalized residuals; raw primal and dual
        // live on different scales
        if opts.adaptive_penalty && iter >= 500 && (iter + 1) % 50 == 0 {
            let rp = pri / pri_ref;
            let rd = dual / dual_ref.max(1.0);
            let scale = if rp > 10.0 * rd.max(1e-300) && rho < 1e6 {
                2.0
            } else if rd > 10.0 * rp.max(1e-300) && rho > 1e-6 {
                0.5
            } else {
                1.0
            };
            if scale != 1.0 {

                rho *= scale;
                // rescale the scaled dual accordingly
                w_var /= scale;
                chol = factorize(&ata, rho, weight, par.num_yhat())?;
                penalty_events += 1;
            }
        }
    }

    let iterations = converged_at.unwrap_or(opts.max_iters);
    if converged_at.is_none() {
        return Err(N2sidError::NonConvergence {
            iterations,
            primal: pri,
            dual,
        });
    }

    let (yhat, tu, ty) = par.unpack(&best_x);
    let m_star = structured_residual(problem, &par, &best_x)?;
    let sketched = match &g_matrix {
        Some(g) => &m_star * g,
        None => m_star.clone(),
    };
    let sv = singular_values(&sketched);
    let objective = sv.iter().sum::<f64>()
        + weight * (&best_x.rows(0, par.num_yhat()) - &y_vec).norm_squared();

    Ok((
        N2sidSolution {
            yhat,
            tu_blocks: tu,
            ty_blocks: ty,
            m_star,
            singular_values: sv,
            objective,
            diagnostics: SolverDiagnostics {
                iterations,
                primal_residual: pri,
                dual_residual: dual,
                objective_trace: trace,
                penalty_events,
            },
        },
        SolverState {
            x,
            m: m_var,
            w: w_var,
        },
    ))
}
