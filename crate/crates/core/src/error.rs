use thiserror::Error;

/// Errors produced across the identification toolkit.
#[derive(Debug, Error)]
pub enum N2sidError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("solver did not converge after {iterations} iterations (primal residual {primal:.3e}, dual residual {dual:.3e})")]
    NonConvergence {
        iterations: usize,
        primal: f64,
        dual: f64,
    },

    #[error("degenerate singular-value spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("ill-conditioned extraction (condition number {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("fit undefined: {0}")]
    UndefinedFit(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, N2sidError>;
