//! Corrector problems on the solid part of the cell and the homogenized
//! tangential diffusion tensor `D*`.
//!
//! `η_i` lives on solid voxels. The discrete energy is
//! `Σ_f |voxel| (δ_{i,a(f)} + (η(f⁺) - η(f⁻))/h)²` over faces `f` between two
//! solid voxels (axis `a(f)`); faces on `Γ` and on `S^±` carry no flux.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Phase, ReferenceCell};
use crate::solver::{cg_solve_with, CgOptions, CsrMatrix, SolverError};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("solid phase is empty; the corrector problem is undefined")]
    EmptySolid,
    #[error("solid diffusivity must be positive and finite, got {0}")]
    InvalidDiffusivity(f64),
    #[error("direction must be 1 or 2, got {0}")]
    InvalidDirection(usize),
    #[error("corrector solve for direction {direction} failed: {source}")]
    Solver {
        direction: usize,
        #[source]
        source: SolverError,
    },
    #[error("correctors do not share the cell grid: {0}")]
    GridMismatch(String),
}

#[derive(Debug, Clone)]
pub struct DiffusionCellSolution {
    pub direction: usize,
    pub resolution: usize,
    /// Voxel values, zero in fluid voxels; zero mean on each solid component.
    pub eta: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveDiffusionTensor {
    pub d_star: [[f64; 2]; 2],
    pub zs_measure: f64,
    pub gamma_measure: f64,
    pub d_s: f64,
    pub solid_components: usize,
}

/// A face between two solid voxels, oriented along `axis` from `lo` to `hi`.
struct SolidFace {
    lo: usize,
    hi: usize,
    axis: usize,
}

/// Solid voxels of a cell as unknowns, and the solid-solid faces between them.
pub(crate) struct SolidGraph {
    /// Voxel index per solid unknown, ascending.
    pub voxels: Vec<usize>,
    pub unknown_of: Vec<Option<usize>>,
    /// `(lo, hi, axis)`; lateral faces wrap periodically.
    pub faces: Vec<(usize, usize, usize)>,
}

impl SolidGraph {
    pub fn new(cell: &ReferenceCell) -> Self {
        let mut voxels = Vec::new();
        let mut unknown_of = vec![None; cell.num_voxels()];
        for v in 0..cell.num_voxels() {
            if cell.phase(v) == Phase::Solid {
                unknown_of[v] = Some(voxels.len());
                voxels.push(v);
            }
        }
        let n = cell.resolution();
        let mut faces = Vec::new();
        for &v in &voxels {
            let (i, j, k) = cell.coords(v);
            let ups = [
                (cell.index((i + 1) % n, j, k), 0),
                (cell.index(i, (j + 1) % n, k), 1),
            ];
            let up_z = (k + 1 < 2 * n).then(|| (cell.index(i, j, k + 1), 2));
            for (hi, axis) in ups.into_iter().chain(up_z) {
                if let Some(b) = unknown_of[hi] {
                    faces.push((unknown_of[v].unwrap(), b, axis));
                }
            }
        }
        SolidGraph {
            voxels,
            unknown_of,
            faces,
        }
    }

    /// Graph Laplacian with weight `w` per face.
    pub fn laplacian(&self, w: f64) -> CsrMatrix {
        let mut t = Vec::with_capacity(4 * self.faces.len());
        for &(lo, hi, _) in &self.faces {
            t.push((lo, lo, w));
            t.push((hi, hi, w));
            t.push((lo, hi, -w));
            t.push((hi, lo, -w));
        }
        let m = self.voxels.len();
        CsrMatrix::from_triplets(m, m, t).with_symmetry(true)
    }
}

struct Corrector {
    /// Voxel index per solid unknown.
    voxels: Vec<usize>,
    component: Vec<usize>,
    ncomponents: usize,
    faces: Vec<SolidFace>,
    laplacian: CsrMatrix,
}

impl Corrector {
    fn new(cell: &ReferenceCell) -> Result<Self, DiffusionError> {
        let (labels, ncomponents) = cell.components(Phase::Solid);
        if ncomponents == 0 {
            return Err(DiffusionError::EmptySolid);
        }
        let graph = SolidGraph::new(cell);
        // Face weight |voxel|/h² = h.
        let laplacian = graph.laplacian(cell.voxel_size());
        let component = graph.voxels.iter().map(|&v| labels[v]).collect();
        let faces: Vec<SolidFace> = graph
            .faces
            .iter()
            .map(|&(lo, hi, axis)| SolidFace { lo, hi, axis })
            .collect();
        let voxels = graph.voxels;
        Ok(Corrector {
            voxels,
            component,
            ncomponents,
            faces,
            laplacian,
        })
    }

    fn project(&self, x: &mut [f64]) {
        let mut sum = vec![0.0; self.ncomponents];
        let mut count = vec![0usize; self.ncomponents];
        for (u, &c) in self.component.iter().enumerate() {
            sum[c] += x[u];
            count[c] += 1;
        }
        for (u, &c) in self.component.iter().enumerate() {
            x[u] -= sum[c] / count[c] as f64;
        }
    }

    fn solve(
        &self,
        cell: &ReferenceCell,
        direction: usize,
        tol: f64,
    ) -> Result<DiffusionCellSolution, DiffusionError> {
        let h = cell.voxel_size();
        let vol = h * h * h;
        let axis = direction - 1;
        let mut rhs = vec![0.0; self.voxels.len()];
        for f in self.faces.iter().filter(|f| f.axis == axis) {
            rhs[f.lo] += vol / h;
            rhs[f.hi] -= vol / h;
        }
        let project = |x: &mut [f64]| self.project(x);
        let out = cg_solve_with(
            &self.laplacian,
            &rhs,
            tol,
            CgOptions {
                projector: Some(&project),
                ..Default::default()
            },
        )
        .map_err(|source| DiffusionError::Solver { direction, source })?;
        let mut eta = vec![0.0; cell.num_voxels()];
        for (u, &v) in self.voxels.iter().enumerate() {
            eta[v] = out.x[u];
        }
        Ok(DiffusionCellSolution {
            direction,
            resolution: cell.resolution(),
            eta,
            residual: out.residual,
            iterations: out.iterations,
        })
    }
}

fn check_diffusivity(d_s: f64) -> Result<(), DiffusionError> {
    if d_s > 0.0 && d_s.is_finite() {
        Ok(())
    } else {
        Err(DiffusionError::InvalidDiffusivity(d_s))
    }
}

/// Solves the corrector for `direction ∈ {1, 2}`.
///
/// The corrector does not depend on `d_s` (a scalar coefficient cancels); it
/// is validated here so that invalid configurations fail early.
pub fn solve_cell_diffusion(
    cell: &ReferenceCell,
    direction: usize,
    d_s: f64,
    tol: f64,
) -> Result<DiffusionCellSolution, DiffusionError> {
    check_diffusivity(d_s)?;
    if !(1..=2).contains(&direction) {
        return Err(DiffusionError::InvalidDirection(direction));
    }
    let corr = Corrector::new(cell)?;
    if corr.ncomponents > 1 {
        log::warn!(
            "solid phase has {} components; correctors are normalized per component",
            corr.ncomponents
        );
    }
    corr.solve(cell, direction, tol)
}

/// Both correctors, solved concurrently.
pub fn solve_both_directions(
    cell: &ReferenceCell,
    d_s: f64,
    tol: f64,
) -> Result<[DiffusionCellSolution; 2], DiffusionError> {
    check_diffusivity(d_s)?;
    let corr = Corrector::new(cell)?;
    let (a, b) = rayon::join(|| corr.solve(cell, 1, tol), || corr.solve(cell, 2, tol));
    Ok([a?, b?])
}

/// `D*_ij = D_s Σ_f |voxel| (δ_{i,a} + Δη_i/h)(δ_{j,a} + Δη_j/h)`.
pub fn assemble_d_star(
    solutions: &[DiffusionCellSolution; 2],
    cell: &ReferenceCell,
    d_s: f64,
) -> Result<EffectiveDiffusionTensor, DiffusionError> {
    check_diffusivity(d_s)?;
    for s in solutions {
        if s.resolution != cell.resolution() || s.eta.len() != cell.num_voxels() {
            return Err(DiffusionError::GridMismatch(format!(
                "corrector {} has resolution {}, cell has {}",
                s.direction,
                s.resolution,
                cell.resolution()
            )));
        }
    }
    let by_dir = |d: usize| {
        solutions
            .iter()
            .find(|s| s.direction == d)
            .ok_or_else(|| DiffusionError::GridMismatch(format!("missing corrector {d}")))
    };
    let etas = [&by_dir(1)?.eta, &by_dir(2)?.eta];
    let corr = Corrector::new(cell)?;
    let h = cell.voxel_size();
    let vol = h * h * h;
    let grads: Vec<[f64; 2]> = corr
        .faces
        .par_iter()
        .map(|f| {
            let (lo, hi) = (corr.voxels[f.lo], corr.voxels[f.hi]);
            let g = |d: usize| {
                let e = if f.axis == d { 1.0 } else { 0.0 };
                e + (etas[d][hi] - etas[d][lo]) / h
            };
            [g(0), g(1)]
        })
        .collect();
    let mut d_star = [[0.0; 2]; 2];
    for (i, row) in d_star.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for g in &grads {
                s += vol * (g[i] * g[j]);
            }
            *e = d_s * s;
        }
    }
    Ok(EffectiveDiffusionTensor {
        d_star,
        zs_measure: cell.measures().solid_volume,
        gamma_measure: cell.measures().gamma_area,
        d_s,
        solid_components: corr.ncomponents,
    })
}

/// Convenience wrapper: both correctors and the assembled tensor.
pub fn effective_diffusion(
    cell: &ReferenceCell,
    d_s: f64,
    tol: f64,
) -> Result<EffectiveDiffusionTensor, DiffusionError> {
    let sols = solve_both_directions(cell, d_s, tol)?;
    assemble_d_star(&sols, cell, d_s)
}
