//! Nuclear-norm subspace identification for short data batches.
//!
//! The toolkit identifies innovation-form state-space models by solving a
//! convex program over structured matrices of the data equation: the nuclear
//! norm of the low-rank residual plus a weighted prediction-error sum, with
//! the block-Hankel and block-Toeplitz structure imposed from the start.
//! A classical projection-based subspace baseline, data generation and a
//! Monte-Carlo study harness round out the library.

pub mod baseline;
pub mod bench;
pub mod datagen;
pub mod error;
pub mod extraction;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod solver;
pub mod structured;

pub use error::{N2sidError, Result};
pub use model::{fit, predict, simulate_innovation, IoBatch, StateSpaceModel};
pub use solver::{
    lambda_grid, prox_nuclear, solve_n2sid, N2sidProblem, N2sidSolution, Sketch, SolverOptions,
};
pub use structured::{build_hankel, hankel_adjoint, toeplitz_apply, BlockHankel, HankelSpec, ToeplitzBlocks};
