//! Stokes cell problems on the fluid part of the reference cell and the
//! effective interface tensors built from their solutions.

mod mac;
mod tensors;

pub use tensors::{
    assemble_effective_tensors, coercivity_margin, darcy_velocity, EffectiveFlowTensors, FlowGram,
    Mat3,
};

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ReferenceCell;
use crate::solver::{default_max_iter, uzawa_solve, SaddleSystem, SolverError};

pub(crate) use mac::{gram as gram_matrix, CellStokesOperators};

#[derive(Debug, Error)]
pub enum CellFlowError {
    #[error("fluid phase is empty")]
    NoFluid,
    #[error("fluid phase has {components} face-connected components")]
    DisconnectedFluid { components: usize },
    #[error(
        "normal cell problem has no solution: fluid area on the top face ({plus}) differs from the bottom face ({minus})"
    )]
    IncompatibleNormalFlux { plus: f64, minus: f64 },
    #[error("{mode} cell solve failed: {source}")]
    Solver {
        mode: CellBoundaryMode,
        #[source]
        source: SolverError,
    },
    #[error("cell solutions do not share one grid: {0}")]
    GridMismatch(String),
    #[error("normal velocity traces differ: {plus} vs {minus}")]
    NormalMismatch { plus: f64, minus: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Plus, Side::Minus];

    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Side::Plus => '+',
            Side::Minus => '-',
        }
    }
}

/// The five distinct cell problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellBoundaryMode {
    /// Velocity `e_component` on `S^side`, zero on the opposite face.
    Tangential { side: Side, component: usize },
    /// Velocity `e₃` on both faces.
    Normal,
}

impl CellBoundaryMode {
    pub const ALL: [CellBoundaryMode; 5] = [
        CellBoundaryMode::Tangential {
            side: Side::Plus,
            component: 1,
        },
        CellBoundaryMode::Tangential {
            side: Side::Plus,
            component: 2,
        },
        CellBoundaryMode::Tangential {
            side: Side::Minus,
            component: 1,
        },
        CellBoundaryMode::Tangential {
            side: Side::Minus,
            component: 2,
        },
        CellBoundaryMode::Normal,
    ];

    /// Dirichlet velocity prescribed on the fluid part of `S^side`.
    pub fn boundary_value(self, on: Side) -> [f64; 3] {
        match self {
            CellBoundaryMode::Tangential { side, component } => {
                let mut e = [0.0; 3];
                if side == on {
                    e[component - 1] = 1.0;
                }
                e
            }
            CellBoundaryMode::Normal => [0.0, 0.0, 1.0],
        }
    }
}

impl std::fmt::Display for CellBoundaryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellBoundaryMode::Tangential { side, component } => {
                write!(f, "q{}{}", component, side.symbol())
            }
            CellBoundaryMode::Normal => write!(f, "q3"),
        }
    }
}

/// Discrete solution `(q, π)` of one cell problem.
#[derive(Debug, Clone)]
pub struct StokesCellSolution {
    pub mode: CellBoundaryMode,
    pub resolution: usize,
    /// Face-normal velocities: x-faces, then y-faces (`n·n·2n` each), then
    /// z-faces (`n·n·(2n+1)`), each laid out as `i + n (j + n k)`.
    pub velocity: Vec<f64>,
    /// Voxel pressures (zero in solid voxels), zero mean over the fluid.
    pub pressure: Vec<f64>,
    pub momentum_residual: f64,
    pub divergence_residual: f64,
    pub iterations: usize,
}

impl StokesCellSolution {
    fn slots(&self) -> (usize, usize) {
        let n = self.resolution;
        (n * n * 2 * n, n * n * (2 * n + 1))
    }

    pub fn u(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.resolution;
        self.velocity[i + n * (j + n * k)]
    }

    pub fn v(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.resolution;
        self.velocity[self.slots().0 + i + n * (j + n * k)]
    }

    pub fn w(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.resolution;
        self.velocity[2 * self.slots().0 + i + n * (j + n * k)]
    }

    /// Maximum absolute discrete divergence over fluid voxels.
    pub fn max_divergence(&self, cell: &ReferenceCell) -> f64 {
        let n = self.resolution;
        let h = 1.0 / n as f64;
        let mut worst: f64 = 0.0;
        for k in 0..2 * n {
            for j in 0..n {
                for i in 0..n {
                    if !cell.is_fluid(i, j, k) {
                        continue;
                    }
                    let d = (self.u((i + 1) % n, j, k) - self.u(i, j, k)
                        + self.v(i, (j + 1) % n, k)
                        - self.v(i, j, k)
                        + self.w(i, j, k + 1)
                        - self.w(i, j, k))
                        / h;
                    worst = worst.max(d.abs());
                }
            }
        }
        worst
    }

    /// Reflection `y₃ ↦ -y₃` of the field.
    pub fn mirror_z(&self) -> Vec<f64> {
        let n = self.resolution;
        let nz = 2 * n;
        let (tang, _) = self.slots();
        let mut out = vec![0.0; self.velocity.len()];
        for k in 0..nz {
            for j in 0..n {
                for i in 0..n {
                    let src = i + n * (j + n * k);
                    let dst = i + n * (j + n * (nz - 1 - k));
                    out[dst] = self.velocity[src];
                    out[tang + dst] = self.velocity[tang + src];
                }
            }
        }
        for k in 0..=nz {
            for j in 0..n {
                for i in 0..n {
                    let src = i + n * (j + n * k);
                    let dst = i + n * (j + n * (nz - k));
                    out[2 * tang + dst] = -self.velocity[2 * tang + src];
                }
            }
        }
        out
    }
}

fn check_cell(cell: &ReferenceCell) -> Result<(), CellFlowError> {
    if cell.measures().fluid_volume == 0.0 {
        return Err(CellFlowError::NoFluid);
    }
    let (_, components) = cell.components(crate::geometry::Phase::Fluid);
    if components != 1 {
        return Err(CellFlowError::DisconnectedFluid { components });
    }
    Ok(())
}

fn solve_with(
    ops: &CellStokesOperators,
    b_free: &crate::solver::CsrMatrix,
    cell: &ReferenceCell,
    mode: CellBoundaryMode,
    tol: f64,
) -> Result<StokesCellSolution, CellFlowError> {
    if mode == CellBoundaryMode::Normal {
        let m = cell.measures();
        if m.s_plus_fluid != m.s_minus_fluid {
            return Err(CellFlowError::IncompatibleNormalFlux {
                plus: m.s_plus_fluid,
                minus: m.s_minus_fluid,
            });
        }
    }
    let fixed = ops.fixed_values(mode);
    // Strain of the lifted boundary data.
    let c = ops.strain_of(&fixed, mode);
    let nfree = ops.num_free();
    let mut f = vec![0.0; nfree];
    for r in 0..ops.weights.len() {
        let wc = ops.weights[r] * c[r];
        if wc == 0.0 {
            continue;
        }
        for (slot, coef) in ops.strain.row(r) {
            if let Some(fi) = ops.free_of_slot[slot] {
                f[fi] -= coef * wc;
            }
        }
    }
    let np = ops.cell_of_pressure.len();
    let mut g = vec![0.0; np];
    ops.div.mul_vec(&fixed, &mut g);
    g.iter_mut().for_each(|x| *x = -*x);
    let vol = ops.h * ops.h * ops.h;
    let sys = SaddleSystem {
        a: Cow::Borrowed(&ops.a),
        b: Cow::Borrowed(b_free),
        f,
        g,
        pressure_mass: vec![vol; np],
        zero_mean_pressure: true,
    };
    let sol = uzawa_solve(&sys, tol, default_max_iter(np))
        .map_err(|source| CellFlowError::Solver { mode, source })?;
    let mut velocity = fixed;
    for (fi, &slot) in ops.slot_of_free.iter().enumerate() {
        velocity[slot] = sol.u[fi];
    }
    let mut pressure = vec![0.0; ops.layout.num_cells()];
    for (pi, &c) in ops.cell_of_pressure.iter().enumerate() {
        pressure[c] = sol.p[pi];
    }
    Ok(StokesCellSolution {
        mode,
        resolution: cell.resolution(),
        velocity,
        pressure,
        momentum_residual: sol.momentum_residual,
        divergence_residual: sol.divergence_residual,
        iterations: sol.outer_iterations,
    })
}

/// Solves one cell problem to relative tolerance `tol`.
pub fn solve_cell_stokes(
    cell: &ReferenceCell,
    mode: CellBoundaryMode,
    tol: f64,
) -> Result<StokesCellSolution, CellFlowError> {
    check_cell(cell)?;
    let ops = CellStokesOperators::new(cell);
    let b = ops.restrict_div();
    solve_with(&ops, &b, cell, mode, tol)
}

/// Solves all five cell problems concurrently, in [`CellBoundaryMode::ALL`] order.
pub fn solve_all_modes(
    cell: &ReferenceCell,
    tol: f64,
) -> Result<Vec<StokesCellSolution>, CellFlowError> {
    check_cell(cell)?;
    let ops = CellStokesOperators::new(cell);
    let b = ops.restrict_div();
    CellBoundaryMode::ALL
        .par_iter()
        .map(|&mode| solve_with(&ops, &b, cell, mode, tol))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cell, MicrostructureSpec};

    fn empty(n: usize) -> ReferenceCell {
        build_cell(&MicrostructureSpec {
            resolution: n,
            solids: vec![],
            clearance_check: false,
        })
        .unwrap()
    }

    #[test]
    fn empty_cell_shear_is_linear() {
        let cell = empty(4);
        let mode = CellBoundaryMode::Tangential {
            side: Side::Plus,
            component: 1,
        };
        let s = solve_cell_stokes(&cell, mode, 1e-12).unwrap();
        let h = 0.25;
        for k in 0..8 {
            let z = -1.0 + (k as f64 + 0.5) * h;
            for j in 0..4 {
                for i in 0..4 {
                    assert!((s.u(i, j, k) - 0.5 * (1.0 + z)).abs() < 1e-10);
                    assert!(s.v(i, j, k).abs() < 1e-10);
                }
            }
        }
        assert!(s.pressure.iter().all(|p| p.abs() < 1e-10));
    }

    #[test]
    fn empty_cell_normal_is_plug() {
        let cell = empty(4);
        let s = solve_cell_stokes(&cell, CellBoundaryMode::Normal, 1e-12).unwrap();
        for k in 0..=8 {
            assert!((s.w(1, 2, k) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mode_labels() {
        let labels: Vec<String> = CellBoundaryMode::ALL
            .iter()
            .map(|m| m.to_string())
            .collect();
        assert_eq!(labels, ["q1+", "q2+", "q1-", "q2-", "q3"]);
    }
}
