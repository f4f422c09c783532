//! Structured matrices of the data equation: block-Hankel maps, lower-triangular
//! block-Toeplitz operators, observability matrices and the state sequence.
//!
//! For a signal with `d` channels and `N` samples, the block-Hankel matrix with
//! `s` block rows has block entry (i, j) equal to sample i + j - 1 (1-based), so
//! the full data equation `Y_s = O_s X + T_u U_s + T_y Y_s + E_s` ties simulated
//! data to the model matrices exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{N2sidError, Result};
use crate::model::StateSpaceModel;

/// Dimensioning of a block-Hankel matrix: `s` block rows over `n_samples`
/// samples of `block_dim` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HankelSpec {
    pub s: usize,
    pub n_samples: usize,
    pub block_dim: usize,
}

impl HankelSpec {
    pub fn new(s: usize, n_samples: usize, block_dim: usize) -> Result<Self> {
        if s == 0 || block_dim == 0 {
            return Err(N2sidError::Dimension(
                "Hankel spec needs s >= 1 and at least one channel".into(),
            ));
        }
        if n_samples < s {
            return Err(N2sidError::Dimension(format!(
                "need N >= s, got N = {n_samples}, s = {s}"
            )));
        }
        Ok(Self {
            s,
            n_samples,
            block_dim,
        })
    }

    pub fn num_cols(&self) -> usize {
        self.n_samples - self.s + 1
    }

    pub fn num_rows(&self) -> usize {
        self.s * self.block_dim
    }
}

/// A dense block-Hankel matrix together with its spec.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockHankel {
    pub spec: HankelSpec,
    pub values: DMatrix<f64>,
}

/// Build the block-Hankel matrix of a `d x N` signal with `s` block rows.
pub fn build_hankel(signal: &DMatrix<f64>, s: usize) -> Result<BlockHankel> {
    let d = signal.nrows();
    let n = signal.ncols();
    let spec = HankelSpec::new(s, n, d)?;
    let cols = spec.num_cols();
    let mut values = DMatrix::zeros(s * d, cols);
    for i in 0..s {
        for j in 0..cols {
            values
                .view_mut((i * d, j), (d, 1))
                .copy_from(&signal.column(i + j));
        }
    }
    Ok(BlockHankel { spec, values })
}

/// Adjoint of the Hankel-structuring map: sample k receives the sum of all
/// matrix entries sitting on its anti-diagonal.
pub fn hankel_adjoint(m: &DMatrix<f64>, spec: &HankelSpec) -> Result<DMatrix<f64>> {
    if m.nrows() != spec.num_rows() || m.ncols() != spec.num_cols() {
        return Err(N2sidError::Dimension(format!(
            "matrix is {}x{}, spec expects {}x{}",
            m.nrows(),
            m.ncols(),
            spec.num_rows(),
            spec.num_cols()
        )));
    }
    let d = spec.block_dim;
    let mut out = DMatrix::zeros(d, spec.n_samples);
    for i in 0..spec.s {
        for j in 0..spec.num_cols() {
            let mut col = out.column_mut(i + j);
            col += m.view((i * d, j), (d, 1));
        }
    }
    Ok(out)
}

/// Lower-triangular block-Toeplitz operator stored by its first block column.
///
/// `blocks[k]` is the k-th Markov block. When `strictly_causal` is set the
/// diagonal block is structurally zero and `blocks[0]` must be zero; the solver
/// treats it as pinned, never a free variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzBlocks {
    pub blocks: Vec<DMatrix<f64>>,
    pub strictly_causal: bool,
}

impl ToeplitzBlocks {
    pub fn new(blocks: Vec<DMatrix<f64>>, strictly_causal: bool) -> Result<Self> {
        if blocks.is_empty() {
            return Err(N2sidError::Dimension("need at least one block".into()));
        }
        let (p, m) = blocks[0].shape();
        if blocks.iter().any(|b| b.shape() != (p, m)) {
            return Err(N2sidError::Dimension("blocks must share a shape".into()));
        }
        if strictly_causal && blocks[0].iter().any(|&v| v != 0.0) {
            return Err(N2sidError::Dimension(
                "strictly causal Toeplitz operator must have a zero diagonal block".into(),
            ));
        }
        Ok(Self {
            blocks,
            strictly_causal,
        })
    }

    /// All-zero strictly causal operator with `s` blocks of shape p x p.
    pub fn zero_strictly_causal(s: usize, p: usize) -> Self {
        Self {
            blocks: vec![DMatrix::zeros(p, p); s],
            strictly_causal: true,
        }
    }

    pub fn s(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_shape(&self) -> (usize, usize) {
        self.blocks[0].shape()
    }

    /// Materialize the full (s p) x (s m) lower-triangular matrix. Test oracle
    /// and small-scale use only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let s = self.s();
        let (p, m) = self.block_shape();
        let mut out = DMatrix::zeros(s * p, s * m);
        for i in 0..s {
            for j in 0..=i {
                out.view_mut((i * p, j * m), (p, m))
                    .copy_from(&self.blocks[i - j]);
            }
        }
        out
    }
}

/// Apply a lower-triangular block-Toeplitz operator to a block-Hankel matrix
/// block-row-wise, without materializing the full operator.
pub fn toeplitz_apply(t: &ToeplitzBlocks, h: &BlockHankel) -> Result<DMatrix<f64>> {
    let s = t.s();
    let (p, m) = t.block_shape();
    if h.spec.s != s || h.spec.block_dim != m {
        return Err(N2sidError::Dimension(format!(
            "Toeplitz has {} blocks of width {}, Hankel has s = {} with block dim {}",
            s, m, h.spec.s, h.spec.block_dim
        )));
    }
    let cols = h.spec.num_cols();
    let mut out = DMatrix::zeros(s * p, cols);
    for i in 0..s {
        let mut row = out.view_mut((i * p, 0), (p, cols));
        for k in 0..=i {
            if t.strictly_causal && k == 0 {
                continue;
            }
            let hrow = h.values.view(((i - k) * m, 0), (m, cols));
            row += &t.blocks[k] * hrow;
        }
    }
    Ok(out)
}

/// Extended observability matrix: block k is C * A_obs^k.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityMatrix {
    pub values: DMatrix<f64>,
}

pub fn build_observability(a_obs: &DMatrix<f64>, c: &DMatrix<f64>, s: usize) -> Result<ObservabilityMatrix> {
    let n = a_obs.nrows();
    if a_obs.ncols() != n || c.ncols() != n {
        return Err(N2sidError::Dimension(
            "A_obs must be square and C must have n columns".into(),
        ));
    }
    let p = c.nrows();
    let mut values = DMatrix::zeros(s * p, n);
    let mut block = c.clone();
    for k in 0..s {
        values.view_mut((k * p, 0), (p, n)).copy_from(&block);
        if k + 1 < s {
            block = &block * a_obs;
        }
    }
    Ok(ObservabilityMatrix { values })
}

/// State sequence matrix X = [x(1) ... x(N-s+1)].
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    pub values: DMatrix<f64>,
}

/// Replay the innovation recursion x+ = Ax + Bu + Ke to recover the state
/// sequence entering the data equation. Driving the recursion with the known
/// innovation sequence keeps it numerically stable: reconstructing the states
/// from (u, y) instead would propagate rounding through A - KC, which is not
/// required to be stable and can amplify errors exponentially.
pub fn state_sequence(
    model: &StateSpaceModel,
    u: &DMatrix<f64>,
    e: &DMatrix<f64>,
    x0: &DVector<f64>,
    s: usize,
) -> Result<StateSequence> {
    let n = model.order();
    let horizon = e.ncols();
    if horizon < s {
        return Err(N2sidError::Dimension("series shorter than s".into()));
    }
    let cols = horizon - s + 1;
    let mut values = DMatrix::zeros(n, cols);
    let mut x = x0.clone();
    for k in 0..cols {
        values.set_column(k, &x);
        x = &model.a * &x + &model.b * u.column(k) + &model.k * e.column(k);
    }
    Ok(StateSequence { values })
}

/// Markov-parameter Toeplitz operators of the observer form:
/// T_u from {A-KC, B-KD, C, D} and strictly causal T_y from {A-KC, K, C, 0}.
pub fn markov_blocks_from_model(
    model: &StateSpaceModel,
    s: usize,
) -> Result<(ToeplitzBlocks, ToeplitzBlocks)> {
    if s == 0 {
        return Err(N2sidError::Dimension("s must be >= 1".into()));
    }
    let (a_obs, b_obs) = model.observer_matrices();
    let p = model.num_outputs();
    let mut tu = Vec::with_capacity(s);
    let mut ty = Vec::with_capacity(s);
    tu.push(model.d.clone());
    ty.push(DMatrix::zeros(p, p));
    let mut ca = model.c.clone();
    for _ in 1..s {
        tu.push(&ca * &b_obs);
        ty.push(&ca * &model.k);
        ca = &ca * &a_obs;
    }
    Ok((
        ToeplitzBlocks::new(tu, false)?,
        ToeplitzBlocks::new(ty, true)?,
    ))
}

/// Residual of the data equation Y_s - O_s X - T_u U_s - T_y Y_s for a given
/// model and data; equals the Hankel matrix of the innovation sequence.
pub fn data_equation_residual(
    model: &StateSpaceModel,
    io: &crate::model::IoBatch,
    e: &DMatrix<f64>,
    x0: &DVector<f64>,
    s: usize,
) -> Result<DMatrix<f64>> {
    let u_s = build_hankel(&io.u, s)?;
    let y_s = build_hankel(&io.y, s)?;
    let (tu, ty) = markov_blocks_from_model(model, s)?;
    let (a_obs, _) = model.observer_matrices();
    let obs = build_observability(&a_obs, &model.c, s)?;
    let x = state_sequence(model, &io.u, e, x0, s)?;
    Ok(&y_s.values - &obs.values * &x.values - toeplitz_apply(&tu, &u_s)? - toeplitz_apply(&ty, &y_s)?)
}
