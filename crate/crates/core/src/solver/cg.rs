//! Jacobi-preconditioned conjugate gradients.

use super::sparse::{axpy, dot, norm, LinearOperator};
use super::SolverError;

/// Default relative tolerance of all iterative solves.
pub const DEFAULT_TOL: f64 = 1e-8;
const MAX_ITER_CAP: usize = 50_000;
/// Number of times the iteration restarts from the true residual before giving up.
const MAX_RESTARTS: usize = 5;

/// `20·√n`, capped at 50 000.
pub fn default_max_iter(n: usize) -> usize {
    ((20.0 * (n as f64).sqrt()).ceil() as usize).clamp(1, MAX_ITER_CAP)
}

/// Optional knobs for [`cg_solve_with`].
#[derive(Default)]
pub struct CgOptions<'a> {
    pub max_iter: Option<usize>,
    pub initial_guess: Option<&'a [f64]>,
    /// Orthogonal projector onto the solution space of a singular system
    /// (for instance removal of the mean); applied to the rhs, the search
    /// directions and the result.
    pub projector: Option<&'a (dyn Fn(&mut [f64]) + Sync)>,
    /// Called with every iterate, starting from the initial one.
    pub observer: Option<&'a mut dyn FnMut(&[f64])>,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final true residual `‖b - A x‖`.
    pub residual: f64,
}

/// Solves `A x = b` to `‖b - A x‖ ≤ tol (1 + ‖b‖)`.
pub fn cg_solve(
    op: &dyn LinearOperator,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, SolverError> {
    let opts = CgOptions {
        max_iter: Some(max_iter),
        ..Default::default()
    };
    cg_solve_with(op, rhs, tol, opts).map(|o| o.x)
}

pub fn cg_solve_with(
    op: &dyn LinearOperator,
    rhs: &[f64],
    tol: f64,
    mut opts: CgOptions<'_>,
) -> Result<CgOutcome, SolverError> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(SolverError::Dimension {
            expected: n,
            got: rhs.len(),
        });
    }
    if !op.is_symmetric() {
        return Err(SolverError::NotSymmetric);
    }
    let max_iter = opts.max_iter.unwrap_or_else(|| default_max_iter(n));
    let project = |v: &mut [f64]| {
        if let Some(p) = opts.projector {
            p(v)
        }
    };
    let mut b = rhs.to_vec();
    project(&mut b);
    let threshold = tol * (1.0 + norm(&b));
    let inv_diag: Vec<f64> = op
        .diagonal()
        .into_iter()
        .map(|d| {
            if d > 0.0 && d.is_finite() {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();

    let mut x = match opts.initial_guess {
        Some(g) => {
            if g.len() != n {
                return Err(SolverError::Dimension {
                    expected: n,
                    got: g.len(),
                });
            }
            g.to_vec()
        }
        None => vec![0.0; n],
    };
    project(&mut x);
    if let Some(obs) = opts.observer.as_mut() {
        obs(&x);
    }

    let mut ax = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut restarts = 0;

    loop {
        op.apply(&x, &mut ax);
        for i in 0..n {
            r[i] = b[i] - ax[i];
        }
        project(&mut r);
        let true_res = norm(&r);
        if !true_res.is_finite() {
            return Err(SolverError::Breakdown {
                iterations,
                reason: "non-finite residual".into(),
            });
        }
        if true_res <= threshold {
            project(&mut x);
            return Ok(CgOutcome {
                x,
                iterations,
                residual: true_res,
            });
        }
        if iterations >= max_iter || restarts > MAX_RESTARTS {
            return Err(SolverError::NotConverged {
                iterations,
                residual: true_res,
                threshold,
            });
        }
        restarts += 1;

        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        project(&mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            op.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                if pap == 0.0 && rz == 0.0 {
                    break;
                }
                return Err(SolverError::Breakdown {
                    iterations,
                    reason: format!("non-positive curvature {pap:e}"),
                });
            }
            let alpha = rz / pap;
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &ap, &mut r);
            iterations += 1;
            if let Some(obs) = opts.observer.as_mut() {
                obs(&x);
            }
            if norm(&r) <= threshold {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            project(&mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}
