//! Schur-complement (Uzawa) iteration for `[A Bᵀ; B 0] [u; p] = [f; g]`.
//!
//! The outer loop is conjugate gradients on `S = B A⁻¹ Bᵀ`, preconditioned by
//! the inverse lumped pressure mass; every application of `A⁻¹` is an inner
//! Jacobi-PCG solve.

use std::borrow::Cow;

use super::cg::{cg_solve_with, default_max_iter, CgOptions};
use super::sparse::{axpy, dot, norm, CsrMatrix};
use super::SolverError;

/// Inner solves are this much tighter than the outer tolerance.
const INNER_FACTOR: f64 = 1e-2;
const MAX_RESTARTS: usize = 4;

pub struct SaddleSystem<'a> {
    /// Velocity block, symmetric positive definite.
    pub a: Cow<'a, CsrMatrix>,
    /// Discrete (negative, mass-weighted) divergence, `n_p × n_u`.
    pub b: Cow<'a, CsrMatrix>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// Lumped pressure mass, used for preconditioning and the mean constraint.
    pub pressure_mass: Vec<f64>,
    /// Pressure determined up to a constant; fix it by zero (mass-weighted) mean.
    pub zero_mean_pressure: bool,
}

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    /// `‖A u + Bᵀ p − f‖₂`.
    pub momentum_residual: f64,
    /// `max_i |B u − g|_i / m_i`: the pointwise divergence defect.
    pub divergence_residual: f64,
    pub outer_iterations: usize,
}

impl SaddleSystem<'_> {
    pub fn check(&self) -> Result<(), SolverError> {
        let nu = self.a.nrows();
        let np = self.b.nrows();
        let dims = [
            (self.a.ncols(), nu),
            (self.b.ncols(), nu),
            (self.f.len(), nu),
            (self.g.len(), np),
            (self.pressure_mass.len(), np),
        ];
        for (got, expected) in dims {
            if got != expected {
                return Err(SolverError::Dimension { expected, got });
            }
        }
        if self.pressure_mass.iter().any(|m| !(*m > 0.0)) {
            return Err(SolverError::Breakdown {
                iterations: 0,
                reason: "pressure mass must be positive".into(),
            });
        }
        Ok(())
    }

    fn project(&self, p: &mut [f64]) {
        if !self.zero_mean_pressure {
            return;
        }
        let total: f64 = self.pressure_mass.iter().sum();
        let mean = dot(&self.pressure_mass, p) / total;
        p.iter_mut().for_each(|x| *x -= mean);
    }

    fn pointwise(&self, r: &[f64]) -> f64 {
        r.iter()
            .zip(&self.pressure_mass)
            .fold(0.0, |acc: f64, (ri, m)| acc.max((ri / m).abs()))
    }

    /// `(‖A u + Bᵀ p − f‖₂, max_i |B u − g|_i / m_i)`.
    pub fn residuals(&self, u: &[f64], p: &[f64]) -> (f64, f64) {
        let bt = self.b.transpose();
        self.residuals_with(&bt, u, p)
    }

    fn residuals_with(&self, bt: &CsrMatrix, u: &[f64], p: &[f64]) -> (f64, f64) {
        let mut au = vec![0.0; u.len()];
        self.a.mul_vec(u, &mut au);
        let mut btp = vec![0.0; u.len()];
        bt.mul_vec(p, &mut btp);
        let mom: Vec<f64> = (0..u.len()).map(|i| au[i] + btp[i] - self.f[i]).collect();
        let mut bu = vec![0.0; p.len()];
        self.b.mul_vec(u, &mut bu);
        let div: Vec<f64> = (0..p.len()).map(|i| bu[i] - self.g[i]).collect();
        (norm(&mom), self.pointwise(&div))
    }

    /// Thresholds `(momentum, divergence)` for a relative tolerance.
    pub fn thresholds(&self, tol: f64) -> (f64, f64) {
        (
            tol * (1.0 + norm(&self.f)),
            tol * (1.0 + self.pointwise(&self.g)),
        )
    }
}

/// Solves the saddle system to `‖A u + Bᵀ p − f‖ ≤ tol (1 + ‖f‖)` and
/// pointwise divergence defect `≤ tol (1 + max |g/m|)`.
pub fn uzawa_solve(
    sys: &SaddleSystem<'_>,
    tol: f64,
    max_iter: usize,
) -> Result<SaddleSolution, SolverError> {
    uzawa_solve_from(sys, tol, max_iter, None, None)
}

/// As [`uzawa_solve`], starting from optional velocity and pressure guesses.
pub fn uzawa_solve_from(
    sys: &SaddleSystem<'_>,
    tol: f64,
    max_iter: usize,
    u0: Option<&[f64]>,
    p0: Option<&[f64]>,
) -> Result<SaddleSolution, SolverError> {
    sys.check()?;
    let nu = sys.a.nrows();
    let np = sys.b.nrows();
    let bt = sys.b.transpose();
    let (mom_threshold, div_threshold) = sys.thresholds(tol);
    let inner_max = default_max_iter(nu).max(200);
    let mut inner_tol = tol * INNER_FACTOR;

    let solve_a =
        |rhs: &[f64], guess: Option<&[f64]>, itol: f64| -> Result<Vec<f64>, SolverError> {
            let opts = CgOptions {
                max_iter: Some(inner_max),
                initial_guess: guess,
                ..Default::default()
            };
            // Absolute threshold itol·(1 + ‖f‖) whatever the size of this rhs.
            let rel = itol * (1.0 + norm(&sys.f)) / (1.0 + norm(rhs));
            cg_solve_with(sys.a.as_ref(), rhs, rel, opts).map(|o| o.x)
        };
    let apply_bt = |p: &[f64]| {
        let mut out = vec![0.0; nu];
        bt.mul_vec(p, &mut out);
        out
    };
    let apply_b = |u: &[f64]| {
        let mut out = vec![0.0; np];
        sys.b.mul_vec(u, &mut out);
        out
    };
    let precondition = |r: &[f64]| {
        let mut z: Vec<f64> = r
            .iter()
            .zip(&sys.pressure_mass)
            .map(|(ri, m)| ri / m)
            .collect();
        sys.project(&mut z);
        z
    };

    let mut p = p0.map_or_else(|| vec![0.0; np], <[f64]>::to_vec);
    if p.len() != np {
        return Err(SolverError::Dimension {
            expected: np,
            got: p.len(),
        });
    }
    sys.project(&mut p);

    let momentum_rhs = |p: &[f64]| {
        let btp = apply_bt(p);
        (0..nu).map(|i| sys.f[i] - btp[i]).collect::<Vec<f64>>()
    };
    let mut u = solve_a(&momentum_rhs(&p), u0, inner_tol)?;
    let mut iterations = 0;
    let max_iter = max_iter.max(1);
    let mut last = (f64::INFINITY, f64::INFINITY);

    for _ in 0..=MAX_RESTARTS {
        // Residual of the Schur system S p = B A⁻¹ f − g, up to sign: B u − g.
        let mut r: Vec<f64> = apply_b(&u).iter().zip(&sys.g).map(|(a, b)| a - b).collect();
        if sys.zero_mean_pressure {
            sys.project(&mut r);
        }
        let mut z = precondition(&r);
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        while sys.pointwise(&r) > 0.5 * div_threshold && iterations < max_iter {
            let w = solve_a(&apply_bt(&d), None, inner_tol)?;
            let sd = apply_b(&w);
            let dsd = dot(&d, &sd);
            if !(dsd > 0.0) {
                break;
            }
            let alpha = rz / dsd;
            // Raising p by d lowers B u by S d.
            axpy(alpha, &d, &mut p);
            axpy(-alpha, &w, &mut u);
            axpy(-alpha, &sd, &mut r);
            iterations += 1;
            z = precondition(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..np {
                d[i] = z[i] + beta * d[i];
            }
        }
        sys.project(&mut p);
        u = solve_a(&momentum_rhs(&p), Some(&u), inner_tol)?;
        let (mom, div) = sys.residuals_with(&bt, &u, &p);
        if !(mom.is_finite() && div.is_finite()) {
            return Err(SolverError::Breakdown {
                iterations,
                reason: "non-finite saddle residual".into(),
            });
        }
        last = (mom, div);
        if mom <= mom_threshold && div <= div_threshold {
            return Ok(SaddleSolution {
                u,
                p,
                momentum_residual: mom,
                divergence_residual: div,
                outer_iterations: iterations,
            });
        }
        if iterations >= max_iter {
            break;
        }
        // Inexact inner solves limit the attainable divergence; tighten them.
        inner_tol = (inner_tol * INNER_FACTOR).max(1e-15);
    }
    Err(SolverError::Stagnation {
        iterations,
        momentum: last.0,
        divergence: last.1,
        threshold: div_threshold,
    })
}
