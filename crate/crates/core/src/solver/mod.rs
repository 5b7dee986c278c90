//! Sparse linear algebra: CSR storage, preconditioned CG and a Stokes saddle-point solver.

mod cg;
mod sparse;
mod uzawa;

pub use cg::{cg_solve, cg_solve_with, default_max_iter, CgOptions, CgOutcome, DEFAULT_TOL};
pub use sparse::{CsrMatrix, LinearOperator};
pub use uzawa::{uzawa_solve, uzawa_solve_from, SaddleSolution, SaddleSystem};

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum SolverError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("operator is not flagged symmetric")]
    NotSymmetric,
    #[error("CG did not converge in {iterations} iterations (residual {residual:.3e} > {threshold:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        threshold: f64,
    },
    #[error("iteration broke down after {iterations} steps: {reason}")]
    Breakdown { iterations: usize, reason: String },
    #[error("saddle solve stagnated after {iterations} outer steps (momentum {momentum:.3e}, divergence {divergence:.3e}, threshold {threshold:.3e})")]
    Stagnation {
        iterations: usize,
        momentum: f64,
        divergence: f64,
        threshold: f64,
    },
}
