//! Fluid concentration in the bulk boxes exchanging with the solid phase of
//! the membrane, for the three scalings of the solid diffusivity.
//!
//! The fluid concentration lives on the cells of the stacked bulk grid; the
//! interface source on `Σ` is split equally between the two cell layers
//! adjacent to `Σ`, and the fluid trace is their average. The solid
//! concentration is a field on `Σ` (surface diffusion or pointwise ODE) or,
//! in the cell regime, one field on the solid voxels of the reference cell
//! per `Σ` cell.

mod exchange;

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell_diffusion::{EffectiveDiffusionTensor, SolidGraph};
use crate::geometry::{Phase, ReferenceCell};
use crate::kinetics::{eval_h, KineticsError, KineticsSpec};
use crate::macro_flow::{BulkGrid, FlowState, MacroFlowError};
use crate::solver::{cg_solve_with, CgOptions, CsrMatrix, SolverError};
use exchange::{exchange_amounts, implicit_scalar, ExchangePoint};

pub const DEFAULT_SOLVER_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum GammaRegime {
    /// Surface diffusion on `Σ` with the effective tensor `D*`.
    MinusOne,
    /// Pointwise ODE on `Σ`.
    Intermediate,
    /// A diffusion problem in the solid part of the cell at every point of `Σ`.
    One,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("invalid transport parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error(transparent)]
    Grid(#[from] MacroFlowError),
    #[error("the membrane has no solid phase")]
    EmptySolid,
    #[error("regime {0:?} needs the reference cell")]
    MissingCell(GammaRegime),
    #[error("regime minus_one needs the effective diffusion tensor")]
    MissingDiffusionTensor,
    #[error("operation is for regime {expected:?}, model is {got:?}")]
    RegimeMismatch {
        expected: GammaRegime,
        got: GammaRegime,
    },
    #[error("state does not match the model: {0}")]
    StateMismatch(String),
    #[error("advective CFL number {courant:.3} exceeds 1")]
    Cfl { courant: f64 },
    #[error("non-finite concentration at t = {t}")]
    NonFinite { t: f64 },
    #[error("exchange iteration did not converge at t = {t} (residual {residual:e})")]
    Nonconvergence { t: f64, residual: f64 },
    #[error("diffusion solve failed at t = {t}: {source}")]
    Solver {
        t: f64,
        #[source]
        source: SolverError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportParams {
    pub regime: GammaRegime,
    pub d_f: f64,
    pub d_s: f64,
    pub kinetics: KineticsSpec,
    pub dt: f64,
}

/// The solid phase of the membrane as seen by the macroscopic model.
#[derive(Debug, Clone)]
pub struct MembraneSolid {
    /// `|Z_s|`.
    pub zs_measure: f64,
    /// Solid surface in contact with fluid per unit `Σ` area: `|Γ|` plus any
    /// solid part of `S^±`.
    pub exchange_area: f64,
    pub d_star: Option<[[f64; 2]; 2]>,
    cell: Option<SolidCell>,
}

#[derive(Debug, Clone)]
struct SolidCell {
    resolution: usize,
    voxels: Vec<usize>,
    voxel_volume: f64,
    /// Exchange area per solid unknown.
    area: Vec<f64>,
    /// Unknowns with positive exchange area.
    exchanging: Vec<usize>,
    laplacian: CsrMatrix,
}

impl MembraneSolid {
    /// Solid measures and exchange area from scalar data (no cell regime).
    pub fn from_measures(zs_measure: f64, exchange_area: f64) -> Result<Self, TransportError> {
        if !(zs_measure > 0.0 && zs_measure.is_finite()) {
            return Err(TransportError::EmptySolid);
        }
        if !(exchange_area >= 0.0 && exchange_area.is_finite()) {
            return Err(TransportError::InvalidParameter(format!(
                "exchange area {exchange_area}"
            )));
        }
        Ok(MembraneSolid {
            zs_measure,
            exchange_area,
            d_star: None,
            cell: None,
        })
    }

    /// Everything derivable from the voxelized cell, including the per-voxel
    /// data of the cell regime.
    pub fn from_cell(cell: &ReferenceCell) -> Result<Self, TransportError> {
        let graph = SolidGraph::new(cell);
        if graph.voxels.is_empty() {
            return Err(TransportError::EmptySolid);
        }
        let fa = cell.face_area();
        let mut area = vec![0.0; graph.voxels.len()];
        for f in cell.gamma_faces() {
            area[graph.unknown_of[f.solid].expect("Γ face borders a solid voxel")] += fa;
        }
        for f in cell.s_plus_faces().iter().chain(cell.s_minus_faces()) {
            if f.phase == Phase::Solid {
                area[graph.unknown_of[f.voxel].expect("solid boundary voxel")] += fa;
            }
        }
        let exchanging = (0..area.len()).filter(|&m| area[m] > 0.0).collect();
        let voxel_volume = cell.voxel_volume();
        let solid = SolidCell {
            resolution: cell.resolution(),
            laplacian: graph.laplacian(cell.voxel_size()),
            voxel_volume,
            voxels: graph.voxels,
            area,
            exchanging,
        };
        let exchange_area = solid.area.iter().sum();
        Ok(MembraneSolid {
            zs_measure: voxel_volume * solid.voxels.len() as f64,
            exchange_area,
            d_star: None,
            cell: Some(solid),
        })
    }

    pub fn with_d_star(mut self, d_star: [[f64; 2]; 2]) -> Self {
        self.d_star = Some(d_star);
        self
    }

    pub fn with_diffusion_tensor(self, t: &EffectiveDiffusionTensor) -> Self {
        self.with_d_star(t.d_star)
    }

    /// Number of solid unknowns per `Σ` point in the cell regime.
    pub fn cell_unknowns(&self) -> Option<usize> {
        self.cell.as_ref().map(|c| c.voxels.len())
    }

    /// Voxel index (in the reference cell) of each solid unknown.
    pub fn cell_voxels(&self) -> Option<&[usize]> {
        self.cell.as_ref().map(|c| c.voxels.as_slice())
    }

    pub fn cell_resolution(&self) -> Option<usize> {
        self.cell.as_ref().map(|c| c.resolution)
    }
}

/// Concentrations at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportState {
    pub t: f64,
    /// Fluid concentration per bulk cell.
    pub c_f: Vec<f64>,
    /// Solid concentration: one value per `Σ` cell (`i + n j`), or in the cell
    /// regime one block of cell unknowns per `Σ` cell.
    pub c_s: Vec<f64>,
}

/// Mass bookkeeping of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ExchangeLedger {
    /// Mass added to the fluid by the interface source (non-positive for uptake).
    pub fluid_change: f64,
    /// Mass added to the solid; computed from the same exchanged amounts.
    pub solid_change: f64,
}

impl ExchangeLedger {
    /// Zero up to round-off of the summation; exactly zero for the joint
    /// exchange of [`coupled_step`].
    pub fn imbalance(&self) -> f64 {
        self.fluid_change + self.solid_change
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassLedger {
    pub fluid: f64,
    pub solid: f64,
}

impl MassLedger {
    pub fn total(&self) -> f64 {
        self.fluid + self.solid
    }
}

pub struct TransportModel {
    grid: BulkGrid,
    params: TransportParams,
    solid: MembraneSolid,
    tol: f64,
    theta: f64,
    fluid_matrix: CsrMatrix,
    surface_matrix: Option<CsrMatrix>,
    cell_matrix: Option<CsrMatrix>,
}

fn positive(name: &str, x: f64) -> Result<(), TransportError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(TransportError::InvalidParameter(format!(
            "{name} must be positive, got {x}"
        )))
    }
}

impl TransportModel {
    pub fn new(
        grid: BulkGrid,
        params: TransportParams,
        solid: MembraneSolid,
    ) -> Result<Self, TransportError> {
        grid.validate()?;
        positive("d_f", params.d_f)?;
        positive("d_s", params.d_s)?;
        positive("dt", params.dt)?;
        params.kinetics.validate()?;
        let vol = grid.cell_volume();
        let dt = params.dt;

        let fluid_matrix = {
            let mut t = bulk_laplacian(&grid, params.d_f);
            for c in 0..grid.num_cells() {
                t.push((c, c, vol / dt));
            }
            CsrMatrix::from_triplets(grid.num_cells(), grid.num_cells(), t).with_symmetry(true)
        };

        let mut surface_matrix = None;
        let mut cell_matrix = None;
        match params.regime {
            GammaRegime::MinusOne => {
                let d = solid.d_star.ok_or(TransportError::MissingDiffusionTensor)?;
                check_d_star(&d)?;
                if d.iter().flatten().any(|&x| x != 0.0) {
                    let n = grid.n_sigma;
                    let mut t = surface_laplacian(n, &d);
                    let m = solid.zs_measure * grid.hx() * grid.hx() / dt;
                    for p in 0..n * n {
                        t.push((p, p, m));
                    }
                    surface_matrix =
                        Some(CsrMatrix::from_triplets(n * n, n * n, t).with_symmetry(true));
                }
            }
            GammaRegime::Intermediate => {}
            GammaRegime::One => {
                let cell = solid
                    .cell
                    .as_ref()
                    .ok_or(TransportError::MissingCell(GammaRegime::One))?;
                let m = cell.voxels.len();
                let mut t = Vec::with_capacity(cell.laplacian.nnz() + m);
                for r in 0..m {
                    for (c, v) in cell.laplacian.row(r) {
                        t.push((r, c, params.d_s * v));
                    }
                    t.push((r, r, cell.voxel_volume / dt));
                }
                cell_matrix = Some(CsrMatrix::from_triplets(m, m, t).with_symmetry(true));
            }
        }

        // The midpoint rule keeps the exchange monotone only for moderate
        // stiffness; beyond that fall back to implicit Euler.
        let ratio = match (&params.regime, &solid.cell) {
            (GammaRegime::One, Some(c)) => c
                .exchanging
                .iter()
                .map(|&m| c.area[m] / c.voxel_volume)
                .fold(0.0, f64::max),
            _ => solid.exchange_area / solid.zs_measure,
        };
        let stiffness = dt
            * params.kinetics.lipschitz_constant()
            * (ratio + solid.exchange_area / (2.0 * grid.hz()));
        let theta = if stiffness <= 2.0 {
            0.5
        } else {
            log::warn!(
                "exchange stiffness dt·L·rate = {stiffness:.3} > 2, using implicit Euler for the exchange"
            );
            1.0
        };

        Ok(TransportModel {
            grid,
            params,
            solid,
            tol: DEFAULT_SOLVER_TOL,
            theta,
            fluid_matrix,
            surface_matrix,
            cell_matrix,
        })
    }

    pub fn with_solver_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn grid(&self) -> &BulkGrid {
        &self.grid
    }

    pub fn params(&self) -> &TransportParams {
        &self.params
    }

    pub fn solid(&self) -> &MembraneSolid {
        &self.solid
    }

    /// θ of the exchange rule: ½ (midpoint) or 1 (implicit Euler).
    pub fn exchange_theta(&self) -> f64 {
        self.theta
    }

    fn points(&self) -> usize {
        self.grid.layer_size()
    }

    /// Solid unknowns per `Σ` cell.
    pub fn solid_block(&self) -> usize {
        match self.params.regime {
            GammaRegime::One => self.solid.cell.as_ref().map_or(0, |c| c.voxels.len()),
            _ => 1,
        }
    }

    pub fn solid_len(&self) -> usize {
        self.points() * self.solid_block()
    }

    /// Uniform initial data.
    pub fn uniform_state(&self, c_f: f64, c_s: f64) -> TransportState {
        TransportState {
            t: 0.0,
            c_f: vec![c_f; self.grid.num_cells()],
            c_s: vec![c_s; self.solid_len()],
        }
    }

    pub fn state(&self, c_f: Vec<f64>, c_s: Vec<f64>) -> Result<TransportState, TransportError> {
        let s = TransportState { t: 0.0, c_f, c_s };
        self.check(&s)?;
        Ok(s)
    }

    fn check(&self, s: &TransportState) -> Result<(), TransportError> {
        if s.c_f.len() != self.grid.num_cells() || s.c_s.len() != self.solid_len() {
            return Err(TransportError::StateMismatch(format!(
                "expected {} fluid and {} solid values, got {} and {}",
                self.grid.num_cells(),
                self.solid_len(),
                s.c_f.len(),
                s.c_s.len()
            )));
        }
        Ok(())
    }

    fn require(&self, regime: GammaRegime) -> Result<(), TransportError> {
        if self.params.regime != regime {
            return Err(TransportError::RegimeMismatch {
                expected: regime,
                got: self.params.regime,
            });
        }
        Ok(())
    }

    /// Fluid trace on `Σ` cell `p = i + n j`.
    pub fn fluid_trace(&self, c_f: &[f64], p: usize) -> f64 {
        let (below, above) = self.sigma_cells(p);
        0.5 * (c_f[below] + c_f[above])
    }

    fn sigma_cells(&self, p: usize) -> (usize, usize) {
        let ls = self.grid.layer_size();
        let nz = self.grid.n_z;
        ((nz - 1) * ls + p, nz * ls + p)
    }

    /// Solid volume and exchange area per unknown of a block.
    fn block_weights(&self) -> (Vec<f64>, Vec<f64>) {
        match (self.params.regime, &self.solid.cell) {
            (GammaRegime::One, Some(c)) => (vec![c.voxel_volume; c.voxels.len()], c.area.clone()),
            _ => (vec![self.solid.zs_measure], vec![self.solid.exchange_area]),
        }
    }
}

fn check_d_star(d: &[[f64; 2]; 2]) -> Result<(), TransportError> {
    let scale = d.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
    let bad = |msg: &str| Err(TransportError::InvalidParameter(format!("D* {msg}: {d:?}")));
    if d.iter().flatten().any(|x| !x.is_finite()) {
        return bad("is not finite");
    }
    if (d[0][1] - d[1][0]).abs() > 1e-12 * scale {
        return bad("is not symmetric");
    }
    let off = 0.5 * (d[0][1] + d[1][0]);
    let det = d[0][0] * d[1][1] - off * off;
    let tol = 1e-12 * scale * scale;
    if d[0][0] < 0.0 || d[1][1] < 0.0 || det < -tol {
        return bad("is not positive semi-definite");
    }
    Ok(())
}

/// `D_f`-weighted finite-volume Laplacian on the bulk cells: periodic
/// laterally, no flux through the top and bottom.
fn bulk_laplacian(g: &BulkGrid, d: f64) -> Vec<(usize, usize, f64)> {
    let n = g.n_sigma;
    let (hx, hz) = (g.hx(), g.hz());
    let lateral = d * hz;
    let vertical = d * hx * hx / hz;
    let mut t = Vec::with_capacity(13 * g.num_cells());
    let mut face = |a: usize, b: usize, w: f64| {
        t.push((a, a, w));
        t.push((b, b, w));
        t.push((a, b, -w));
        t.push((b, a, -w));
    };
    for k in 0..g.layers() {
        for j in 0..n {
            for i in 0..n {
                let c = g.cell(i, j, k);
                face(c, g.cell(g.next(i), j, k), lateral);
                face(c, g.cell(i, g.next(j), k), lateral);
                if k + 1 < g.layers() {
                    face(c, g.cell(i, j, k + 1), vertical);
                }
            }
        }
    }
    t
}

/// `-∇·(D ∇c)` on the periodic `Σ` grid integrated over cells, with the
/// cross derivatives on faces averaged from the four surrounding cells.
fn surface_laplacian(n: usize, d: &[[f64; 2]; 2]) -> Vec<(usize, usize, f64)> {
    let off = 0.25 * 0.5 * (d[0][1] + d[1][0]);
    let at = |i: usize, j: usize| (i % n) + n * (j % n);
    let mut t = Vec::with_capacity(18 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (jm, jp, im, ip) = (j + n - 1, j + 1, i + n - 1, i + 1);
            // Flux F from (i, j) to (i + 1, j) is -(stencil · c).
            let x_face = [
                (at(ip, j), d[0][0]),
                (at(i, j), -d[0][0]),
                (at(i, jp), off),
                (at(ip, jp), off),
                (at(i, jm), -off),
                (at(ip, jm), -off),
            ];
            let y_face = [
                (at(i, jp), d[1][1]),
                (at(i, j), -d[1][1]),
                (at(ip, j), off),
                (at(ip, jp), off),
                (at(im, j), -off),
                (at(im, jp), -off),
            ];
            for (lo, hi, stencil) in [(at(i, j), at(ip, j), x_face), (at(i, j), at(i, jp), y_face)]
            {
                for (c, v) in stencil {
                    if v != 0.0 {
                        t.push((lo, c, -v));
                        t.push((hi, c, v));
                    }
                }
            }
        }
    }
    t
}

/// Total fluid and solid mass.
pub fn total_mass(model: &TransportModel, state: &TransportState) -> MassLedger {
    let g = &model.grid;
    let fluid = g.cell_volume() * state.c_f.iter().sum::<f64>();
    let area = g.hx() * g.hx();
    let solid = match (model.params.regime, &model.solid.cell) {
        (GammaRegime::One, Some(c)) => area * c.voxel_volume * state.c_s.iter().sum::<f64>(),
        _ => area * model.solid.zs_measure * state.c_s.iter().sum::<f64>(),
    };
    MassLedger { fluid, solid }
}

/// Joint exchange sub-step: solves the exchange between the fluid trace and
/// the solid unknowns of every `Σ` point with the θ-rule and applies the same
/// amounts to both phases.
pub fn exchange_step(
    model: &TransportModel,
    state: &TransportState,
) -> Result<(TransportState, ExchangeLedger), TransportError> {
    model.check(state)?;
    let mut next = state.clone();
    if model.params.kinetics.is_zero() {
        return Ok((next, ExchangeLedger::default()));
    }
    let g = &model.grid;
    let dt = model.params.dt;
    let half_inv_hz = 0.5 / g.hz();
    let block = model.solid_block();
    let (volume, area) = model.block_weights();
    // Only unknowns with exchange area take part.
    let active: Vec<usize> = (0..block).filter(|&m| area[m] > 0.0).collect();
    let vol_a: Vec<f64> = active.iter().map(|&m| volume[m]).collect();
    let area_a: Vec<f64> = active.iter().map(|&m| area[m]).collect();
    let kin = model.params.kinetics;
    let theta = model.theta;

    let amounts: Vec<Result<Vec<f64>, f64>> = (0..model.points())
        .into_par_iter()
        .map(|p| {
            let solid: Vec<f64> = active.iter().map(|&m| state.c_s[p * block + m]).collect();
            let point = ExchangePoint {
                trace: model.fluid_trace(&state.c_f, p),
                solid: &solid,
                volume: &vol_a,
                area: &area_a,
            };
            let mut out = Vec::with_capacity(active.len());
            exchange_amounts(&kin, &point, dt, half_inv_hz, theta, &mut out).map(|_| out)
        })
        .collect();

    let mut exchanged = 0.0;
    for (p, res) in amounts.into_iter().enumerate() {
        let e = res.map_err(|residual| TransportError::Nonconvergence {
            t: state.t + dt,
            residual,
        })?;
        let sum: f64 = e.iter().sum();
        for (k, &m) in active.iter().enumerate() {
            next.c_s[p * block + m] += e[k] / vol_a[k];
        }
        let (below, above) = model.sigma_cells(p);
        next.c_f[below] -= sum * half_inv_hz;
        next.c_f[above] -= sum * half_inv_hz;
        exchanged += sum;
    }
    let moved = g.hx() * g.hx() * exchanged;
    Ok((
        next,
        ExchangeLedger {
            fluid_change: -moved,
            solid_change: moved,
        },
    ))
}

/// One step of the coupled model: joint exchange, solid diffusion for the
/// regime, then advection and diffusion of the fluid concentration.
pub fn coupled_step(
    model: &TransportModel,
    state: &TransportState,
    velocity: Option<&FlowState>,
) -> Result<(TransportState, ExchangeLedger), TransportError> {
    let (mut next, ledger) = exchange_step(model, state)?;
    let t1 = state.t + model.params.dt;
    match model.params.regime {
        GammaRegime::MinusOne => diffuse_surface(model, &mut next.c_s, t1)?,
        GammaRegime::Intermediate => {}
        GammaRegime::One => diffuse_cells(model, &mut next.c_s, t1)?,
    }
    next.c_f = transport_fluid(model, &next.c_f, velocity, t1)?;
    next.t = t1;
    finite(&next)?;
    Ok((next, ledger))
}

/// Fluid step on its own: the interface sink evaluated explicitly with the
/// current solid state, then advection and diffusion.
pub fn step_fluid(
    model: &TransportModel,
    state: &TransportState,
    velocity: Option<&FlowState>,
) -> Result<(TransportState, ExchangeLedger), TransportError> {
    model.check(state)?;
    let g = &model.grid;
    let dt = model.params.dt;
    let kin = &model.params.kinetics;
    let block = model.solid_block();
    let (_, area) = model.block_weights();
    let mut c_f = state.c_f.clone();
    let mut exchanged = 0.0;
    if !kin.is_zero() {
        for p in 0..model.points() {
            let tau = model.fluid_trace(&state.c_f, p);
            let sum: f64 = (0..block)
                .filter(|&m| area[m] > 0.0)
                .map(|m| dt * area[m] * eval_h(kin, tau, state.c_s[p * block + m]))
                .sum();
            let (below, above) = model.sigma_cells(p);
            c_f[below] -= 0.5 * sum / g.hz();
            c_f[above] -= 0.5 * sum / g.hz();
            exchanged += sum;
        }
    }
    let t1 = state.t + dt;
    let next = TransportState {
        t: t1,
        c_f: transport_fluid(model, &c_f, velocity, t1)?,
        c_s: state.c_s.clone(),
    };
    finite(&next)?;
    Ok((
        next,
        ExchangeLedger {
            fluid_change: -g.hx() * g.hx() * exchanged,
            solid_change: 0.0,
        },
    ))
}

/// Surface regime on its own: explicit source `|Γ| h` with the current fluid
/// trace, then implicit diffusion with `D*`.
pub fn step_solid_gamma_minus1(
    model: &TransportModel,
    state: &TransportState,
) -> Result<TransportState, TransportError> {
    model.require(GammaRegime::MinusOne)?;
    model.check(state)?;
    let mut next = explicit_solid_source(model, state);
    next.t = state.t + model.params.dt;
    diffuse_surface(model, &mut next.c_s, next.t)?;
    finite(&next)?;
    Ok(next)
}

/// Pointwise implicit Euler for `|Z_s| ∂_t c_s = |Γ| h(c_f|_Σ, c_s)` with the
/// fluid frozen.
pub fn step_solid_ode(
    model: &TransportModel,
    state: &TransportState,
) -> Result<TransportState, TransportError> {
    model.require(GammaRegime::Intermediate)?;
    model.check(state)?;
    let dt = model.params.dt;
    let mut next = state.clone();
    next.t = state.t + dt;
    for p in 0..model.points() {
        let a = model.fluid_trace(&state.c_f, p);
        next.c_s[p] = implicit_scalar(
            &model.params.kinetics,
            a,
            state.c_s[p],
            model.solid.zs_measure,
            model.solid.exchange_area,
            dt,
        )
        .map_err(|residual| TransportError::Nonconvergence {
            t: next.t,
            residual,
        })?;
    }
    finite(&next)?;
    Ok(next)
}

/// Cell regime on its own: explicit boundary source on the exchange faces,
/// then implicit diffusion in the solid part of every cell.
pub fn step_solid_gamma1(
    model: &TransportModel,
    state: &TransportState,
) -> Result<TransportState, TransportError> {
    model.require(GammaRegime::One)?;
    model.check(state)?;
    let mut next = explicit_solid_source(model, state);
    next.t = state.t + model.params.dt;
    diffuse_cells(model, &mut next.c_s, next.t)?;
    finite(&next)?;
    Ok(next)
}

fn explicit_solid_source(model: &TransportModel, state: &TransportState) -> TransportState {
    let dt = model.params.dt;
    let block = model.solid_block();
    let (volume, area) = model.block_weights();
    let mut next = state.clone();
    for p in 0..model.points() {
        let tau = model.fluid_trace(&state.c_f, p);
        for m in (0..block).filter(|&m| area[m] > 0.0) {
            let i = p * block + m;
            next.c_s[i] +=
                dt * area[m] * eval_h(&model.params.kinetics, tau, state.c_s[i]) / volume[m];
        }
    }
    next
}

fn finite(s: &TransportState) -> Result<(), TransportError> {
    if s.c_f.iter().chain(&s.c_s).all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TransportError::NonFinite { t: s.t })
    }
}

/// Solves `(m/dt + L) x = m c/dt` and restores `Σ x = Σ c` (equal weights),
/// which the CG tolerance only guarantees approximately.
fn implicit_solve(
    matrix: &CsrMatrix,
    weight_over_dt: f64,
    c: &mut [f64],
    tol: f64,
    t: f64,
) -> Result<(), TransportError> {
    let rhs: Vec<f64> = c.iter().map(|x| weight_over_dt * x).collect();
    let out = cg_solve_with(
        matrix,
        &rhs,
        tol,
        CgOptions {
            initial_guess: Some(c),
            ..Default::default()
        },
    )
    .map_err(|source| TransportError::Solver { t, source })?;
    let before: f64 = c.iter().sum();
    let after: f64 = out.x.iter().sum();
    let shift = (before - after) / c.len() as f64;
    for (ci, xi) in c.iter_mut().zip(out.x) {
        *ci = xi + shift;
    }
    Ok(())
}

fn diffuse_surface(model: &TransportModel, c_s: &mut [f64], t: f64) -> Result<(), TransportError> {
    let Some(matrix) = &model.surface_matrix else {
        return Ok(());
    };
    let g = &model.grid;
    let w = model.solid.zs_measure * g.hx() * g.hx() / model.params.dt;
    implicit_solve(matrix, w, c_s, model.tol, t)
}

fn diffuse_cells(model: &TransportModel, c_s: &mut [f64], t: f64) -> Result<(), TransportError> {
    let (Some(matrix), Some(cell)) = (&model.cell_matrix, &model.solid.cell) else {
        return Err(TransportError::MissingCell(GammaRegime::One));
    };
    let w = cell.voxel_volume / model.params.dt;
    let block = cell.voxels.len();
    c_s.par_chunks_mut(block)
        .map(|chunk| implicit_solve(matrix, w, chunk, model.tol, t))
        .collect::<Result<Vec<()>, _>>()?;
    Ok(())
}

/// Explicit first-order upwind advection followed by implicit diffusion.
/// The top and bottom faces carry no flux.
fn transport_fluid(
    model: &TransportModel,
    c_f: &[f64],
    velocity: Option<&FlowState>,
    t: f64,
) -> Result<Vec<f64>, TransportError> {
    let g = &model.grid;
    let dt = model.params.dt;
    let vol = g.cell_volume();
    let mut c = c_f.to_vec();
    if let Some(v) = velocity {
        if v.velocity.len() != g.num_slots() {
            return Err(TransportError::StateMismatch(format!(
                "velocity has {} slots, grid has {}",
                v.velocity.len(),
                g.num_slots()
            )));
        }
        let n = g.n_sigma;
        let (hx, hz) = (g.hx(), g.hz());
        let mut net = vec![0.0; g.num_cells()];
        let mut outflow = vec![0.0; g.num_cells()];
        let mut face = |lo: usize, hi: usize, u: f64, area: f64| {
            let q = u * area;
            let f = if q > 0.0 { q * c_f[lo] } else { q * c_f[hi] };
            net[lo] -= f;
            net[hi] += f;
            if q > 0.0 {
                outflow[lo] += q;
            } else {
                outflow[hi] -= q;
            }
        };
        for k in 0..g.layers() {
            for j in 0..n {
                for i in 0..n {
                    let c0 = g.cell(i, j, k);
                    face(
                        g.cell(g.prev(i), j, k),
                        c0,
                        v.velocity[g.u_slot(i, j, k)],
                        hx * hz,
                    );
                    face(
                        g.cell(i, g.prev(j), k),
                        c0,
                        v.velocity[g.v_slot(i, j, k)],
                        hx * hz,
                    );
                    if k > 0 {
                        face(
                            g.cell(i, j, k - 1),
                            c0,
                            v.velocity[g.w_slot(i, j, k)],
                            hx * hx,
                        );
                    }
                }
            }
        }
        let courant = outflow.iter().fold(0.0f64, |a, q| a.max(dt * q / vol));
        if courant > 1.0 {
            return Err(TransportError::Cfl { courant });
        }
        for (ci, ni) in c.iter_mut().zip(&net) {
            *ci += dt * ni / vol;
        }
    }
    implicit_solve(&model.fluid_matrix, vol / dt, &mut c, model.tol, t)?;
    Ok(c)
}

/// Per-step diagnostics of a transport run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransportRecord {
    pub t: f64,
    pub fluid_mass: f64,
    pub solid_mass: f64,
    pub c_f_min: f64,
    pub c_f_max: f64,
    pub c_s_min: f64,
    pub c_s_max: f64,
    /// Exchange imbalance of the step that produced this state.
    pub exchange_imbalance: f64,
}

pub fn transport_record(
    model: &TransportModel,
    state: &TransportState,
    ledger: &ExchangeLedger,
) -> TransportRecord {
    let mass = total_mass(model, state);
    let range = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
    };
    let (fmin, fmax) = range(&state.c_f);
    let (smin, smax) = range(&state.c_s);
    TransportRecord {
        t: state.t,
        fluid_mass: mass.fluid,
        solid_mass: mass.solid,
        c_f_min: fmin,
        c_f_max: fmax,
        c_s_min: smin,
        c_s_max: smax,
        exchange_imbalance: ledger.imbalance(),
    }
}
