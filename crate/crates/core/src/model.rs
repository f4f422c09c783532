//! Innovation-form state-space models and input/output data batches.
//!
//! The model is the quintuple (A, B, C, D, K) of
//!
//! ```text
//! x(k+1) = A x(k) + B u(k) + K e(k)
//! y(k)   = C x(k) + D u(k) + e(k)
//! ```
//!
//! with the equivalent observer (predictor) form driven by measured data,
//! `x(k+1) = (A-KC) x(k) + (B-KD) u(k) + K y(k)`.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{N2sidError, Result};

/// Innovation-form model (A, B, C, D, K) with state dim `n`, `m` inputs, `p` outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl StateSpaceModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        k: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(N2sidError::Dimension("A must be square".into()));
        }
        let m = b.ncols();
        let p = c.nrows();
        if b.nrows() != n || c.ncols() != n || d.nrows() != p || d.ncols() != m {
            return Err(N2sidError::Dimension(format!(
                "inconsistent model dimensions: A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                n,
                n,
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        if k.nrows() != n || k.ncols() != p {
            return Err(N2sidError::Dimension(format!(
                "K must be {}x{}, got {}x{}",
                n,
                p,
                k.nrows(),
                k.ncols()
            )));
        }
        Ok(Self { a, b, c, d, k })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn num_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Observer-form matrices (A - KC, B - KD).
    pub fn observer_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let a_obs = &self.a - &self.k * &self.c;
        let b_obs = &self.b - &self.k * &self.d;
        (a_obs, b_obs)
    }

    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        self.a.complex_eigenvalues().iter().copied().collect()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// Paired input/output series of a common length; channels are rows, samples columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoBatch {
    /// m x N input samples; zero rows for output-only data.
    pub u: DMatrix<f64>,
    /// p x N output samples.
    pub y: DMatrix<f64>,
}

impl IoBatch {
    pub fn new(u: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if u.nrows() > 0 && u.ncols() != y.ncols() {
            return Err(N2sidError::Dimension(format!(
                "u has {} samples but y has {}",
                u.ncols(),
                y.ncols()
            )));
        }
        Ok(Self { u, y })
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.ncols() == 0
    }

    pub fn num_inputs(&self) -> usize {
        self.u.nrows()
    }

    pub fn num_outputs(&self) -> usize {
        self.y.nrows()
    }

    /// Stable byte hash of the sample values, used for fairness checks.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for &v in self.u.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(b"|");
        for &v in self.y.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

/// Run the innovation recursion exactly: x+ = Ax + Bu + Ke, y = Cx + Du + e.
pub fn simulate_innovation(
    model: &StateSpaceModel,
    u: &DMatrix<f64>,
    e: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Result<IoBatch> {
    let n = model.order();
    let horizon = u.ncols().max(e.ncols());
    if u.nrows() != model.num_inputs() {
        return Err(N2sidError::Dimension(format!(
            "u has {} channels, model expects {}",
            u.nrows(),
            model.num_inputs()
        )));
    }
    if e.nrows() != model.num_outputs() || e.ncols() != horizon || u.ncols() != horizon {
        return Err(N2sidError::Dimension(
            "u and e must share the horizon; e must have p channels".into(),
        ));
    }
    if x0.len() != n {
        return Err(N2sidError::Dimension(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            n
        )));
    }
    let p = model.num_outputs();
    let mut y = DMatrix::zeros(p, horizon);
    let mut x = x0.clone();
    for k in 0..horizon {
        let uk = u.column(k);
        let ek = e.column(k);
        let yk = &model.c * &x + &model.d * uk + ek;
        y.set_column(k, &yk);
        x = &model.a * &x + &model.b * uk + &model.k * ek;
    }
    IoBatch::new(u.clone(), y)
}

/// One-step-ahead predictor: runs the observer driven by measured (u, y).
pub fn predict(model: &StateSpaceModel, io: &IoBatch, x0: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (a_obs, b_obs) = model.observer_matrices();
    if io.num_inputs() != model.num_inputs() || io.num_outputs() != model.num_outputs() {
        return Err(N2sidError::Dimension(
            "io channel counts do not match the model".into(),
        ));
    }
    if x0.len() != model.order() {
        return Err(N2sidError::Dimension("x0 length mismatch".into()));
    }
    let horizon = io.len();
    let p = model.num_outputs();
    let mut yhat = DMatrix::zeros(p, horizon);
    let mut x = x0.clone();
    for k in 0..horizon {
        let uk = io.u.column(k);
        let yk = io.y.column(k);
        yhat.set_column(k, &(&model.c * &x + &model.d * uk));
        x = &a_obs * &x + &b_obs * uk + &model.k * yk;
    }
    Ok(yhat)
}

/// Fit percentage: 100 (1 - ||y - yhat|| / ||y - mean(y)||) per channel, averaged.
pub fn fit(y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> Result<f64> {
    if y.shape() != yhat.shape() {
        return Err(N2sidError::Dimension(format!(
            "y is {:?}, yhat is {:?}",
            y.shape(),
            yhat.shape()
        )));
    }
    if y.ncols() == 0 {
        return Err(N2sidError::UndefinedFit("empty series".into()));
    }
    let mut total = 0.0;
    for ch in 0..y.nrows() {
        let row = y.row(ch);
        let mean = row.sum() / row.len() as f64;
        let denom: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
        if denom == 0.0 {
            return Err(N2sidError::UndefinedFit(format!(
                "output channel {ch} is constant"
            )));
        }
        let num: f64 = row
            .iter()
            .zip(yhat.row(ch).iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        total += 100.0 * (1.0 - num / denom);
    }
    Ok(total / y.nrows() as f64)
}
