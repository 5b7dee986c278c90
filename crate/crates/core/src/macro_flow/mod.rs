//! Transient Stokes flow in the two bulk boxes coupled across `Σ` by the
//! effective interface laws, integrated with implicit Euler.
//!
//! The interface conditions enter weakly through
//! `Σ_± ∫_Σ K^± v^±·φ^± + ∫_Σ M v⁻·φ⁺ + M v⁺·φ⁻`; the top and bottom are
//! stress-free (natural) and the lateral directions are periodic. In the
//! impermeable mode `Σ` is a no-slip wall and the boxes decouple.

mod grid;

pub use grid::BulkGrid;

use std::borrow::Cow;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell_flow::{coercivity_margin, darcy_velocity, EffectiveFlowTensors, Side};
use crate::solver::{default_max_iter, uzawa_solve_from, CsrMatrix, SaddleSystem, SolverError};
use grid::{trace_rows, BulkOperators};

/// Relative slack below zero tolerated for the coercivity margin; smaller
/// negative values are round-off of a positive semi-definite form.
const DEGENERATE_MARGIN: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MacroFlowError {
    #[error("invalid bulk grid: {0}")]
    InvalidGrid(String),
    #[error("interface tensors are not coercive (margin {margin:e})")]
    NonCoercive { margin: f64 },
    #[error("coupling tensor M is not symmetric (deviation {0:e})")]
    AsymmetricCoupling(f64),
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("flow state does not match the grid: {0}")]
    GridMismatch(String),
    #[error("flow solve failed at t = {t}: {source}")]
    Solver {
        t: f64,
        #[source]
        source: SolverError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    Coupled,
    Impermeable,
}

#[derive(Debug, Clone)]
pub struct InterfaceLaw {
    mode: FlowMode,
    tensors: Option<EffectiveFlowTensors>,
    margin: Option<f64>,
}

impl InterfaceLaw {
    /// Coupling through `K^±, M`. A coercivity margin that is zero up to
    /// round-off (a cell without obstacle) is accepted with a warning;
    /// clearly negative margins are rejected.
    pub fn coupled(tensors: EffectiveFlowTensors) -> Result<Self, MacroFlowError> {
        let margin = coercivity_margin(&tensors);
        let scale = tensors
            .k_plus
            .iter()
            .chain(&tensors.k_minus)
            .chain(&tensors.m)
            .flatten()
            .fold(0.0f64, |a, x| a.max(x.abs()));
        if margin < -DEGENERATE_MARGIN * (1.0 + scale) || !margin.is_finite() {
            return Err(MacroFlowError::NonCoercive { margin });
        }
        let asym = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (tensors.m[i][j] - tensors.m[j][i]).abs())
            .fold(0.0f64, f64::max);
        if asym > DEGENERATE_MARGIN * (1.0 + scale) {
            return Err(MacroFlowError::AsymmetricCoupling(asym));
        }
        if margin <= DEGENERATE_MARGIN * (1.0 + scale) {
            log::warn!("interface form is only semi-definite (margin {margin:e}); the macroscopic problem relies on the bulk viscosity");
        }
        Ok(InterfaceLaw {
            mode: FlowMode::Coupled,
            tensors: Some(tensors),
            margin: Some(margin),
        })
    }

    pub fn impermeable() -> Self {
        InterfaceLaw {
            mode: FlowMode::Impermeable,
            tensors: None,
            margin: None,
        }
    }

    pub fn mode(&self) -> FlowMode {
        self.mode
    }

    pub fn tensors(&self) -> Option<&EffectiveFlowTensors> {
        self.tensors.as_ref()
    }

    pub fn coercivity_margin(&self) -> Option<f64> {
        self.margin
    }
}

/// Body force per box, constant or ramped linearly from zero over `ramp_time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingSchedule {
    Constant {
        plus: [f64; 3],
        minus: [f64; 3],
    },
    Ramped {
        plus: [f64; 3],
        minus: [f64; 3],
        ramp_time: f64,
    },
}

impl Default for ForcingSchedule {
    fn default() -> Self {
        ForcingSchedule::Constant {
            plus: [0.0; 3],
            minus: [0.0; 3],
        }
    }
}

impl ForcingSchedule {
    pub fn at(&self, t: f64, side: Side) -> [f64; 3] {
        let (plus, minus, factor) = match *self {
            ForcingSchedule::Constant { plus, minus } => (plus, minus, 1.0),
            ForcingSchedule::Ramped {
                plus,
                minus,
                ramp_time,
            } => {
                let f = if ramp_time > 0.0 {
                    (t / ramp_time).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                (plus, minus, f)
            }
        };
        let v = match side {
            Side::Plus => plus,
            Side::Minus => minus,
        };
        v.map(|x| factor * x)
    }

    pub fn is_zero(&self) -> bool {
        let (ForcingSchedule::Constant { plus, minus }
        | ForcingSchedule::Ramped { plus, minus, .. }) = *self;
        plus.iter().chain(&minus).all(|&x| x == 0.0)
    }
}

/// Velocity and pressure on the stacked bulk grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    /// All velocity slots, see [`BulkGrid`] for the layout.
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
}

impl FlowState {
    pub fn zero(grid: &BulkGrid) -> Self {
        FlowState {
            t: 0.0,
            velocity: vec![0.0; grid.num_slots()],
            pressure: vec![0.0; grid.num_cells()],
        }
    }

    /// Discretely divergence-free field `curl ψ` of an edge potential.
    ///
    /// `psi_x` and `psi_y` live on x- and y-edges at z-levels `0..=2 n_z`
    /// (`n²(2 n_z + 1)` values), `psi_z` on z-edges at cell-center heights
    /// (`n²·2 n_z` values); all laid out as `i + n (j + n k)`.
    pub fn from_edge_potential(
        grid: &BulkGrid,
        psi_x: &[f64],
        psi_y: &[f64],
        psi_z: &[f64],
    ) -> Result<Self, MacroFlowError> {
        let n = grid.n_sigma;
        let nl = grid.layers();
        let ls = grid.layer_size();
        if psi_x.len() != ls * (nl + 1) || psi_y.len() != ls * (nl + 1) || psi_z.len() != ls * nl {
            return Err(MacroFlowError::GridMismatch("edge potential size".into()));
        }
        let (ix, iz) = (1.0 / grid.hx(), 1.0 / grid.hz());
        let at = |a: &[f64], i: usize, j: usize, k: usize| a[grid.cell(i, j, k)];
        let mut s = FlowState::zero(grid);
        for k in 0..nl {
            for j in 0..n {
                for i in 0..n {
                    let (ip, jp) = (grid.next(i), grid.next(j));
                    s.velocity[grid.u_slot(i, j, k)] = (at(psi_z, i, jp, k) - at(psi_z, i, j, k))
                        * ix
                        - (at(psi_y, i, j, k + 1) - at(psi_y, i, j, k)) * iz;
                    s.velocity[grid.v_slot(i, j, k)] =
                        (at(psi_x, i, j, k + 1) - at(psi_x, i, j, k)) * iz
                            - (at(psi_z, ip, j, k) - at(psi_z, i, j, k)) * ix;
                }
            }
        }
        for k in 0..=nl {
            for j in 0..n {
                for i in 0..n {
                    let (ip, jp) = (grid.next(i), grid.next(j));
                    s.velocity[grid.w_slot(i, j, k)] = (at(psi_y, ip, j, k) - at(psi_y, i, j, k))
                        * ix
                        - (at(psi_x, i, jp, k) - at(psi_x, i, j, k)) * ix;
                }
            }
        }
        Ok(s)
    }

    pub fn u(&self, grid: &BulkGrid, i: usize, j: usize, k: usize) -> f64 {
        self.velocity[grid.u_slot(i, j, k)]
    }

    pub fn v(&self, grid: &BulkGrid, i: usize, j: usize, k: usize) -> f64 {
        self.velocity[grid.v_slot(i, j, k)]
    }

    pub fn w(&self, grid: &BulkGrid, i: usize, j: usize, k: usize) -> f64 {
        self.velocity[grid.w_slot(i, j, k)]
    }

    /// Velocity averaged to the center of cell `(i, j, k)`.
    pub fn cell_velocity(&self, grid: &BulkGrid, i: usize, j: usize, k: usize) -> [f64; 3] {
        let (ip, jp) = (grid.next(i), grid.next(j));
        [
            0.5 * (self.u(grid, i, j, k) + self.u(grid, ip, j, k)),
            0.5 * (self.v(grid, i, j, k) + self.v(grid, i, jp, k)),
            0.5 * (self.w(grid, i, j, k) + self.w(grid, i, j, k + 1)),
        ]
    }

    /// `½ Σ m u²` with the lumped mass.
    pub fn energy(&self, grid: &BulkGrid) -> f64 {
        let ops_mass = lumped_mass(grid);
        0.5 * ops_mass
            .iter()
            .zip(&self.velocity)
            .map(|(m, u)| m * (u * u))
            .sum::<f64>()
    }

    /// Largest absolute discrete divergence over all cells.
    pub fn max_divergence(&self, grid: &BulkGrid) -> f64 {
        let n = grid.n_sigma;
        let (ix, iz) = (1.0 / grid.hx(), 1.0 / grid.hz());
        let mut worst: f64 = 0.0;
        for k in 0..grid.layers() {
            for j in 0..n {
                for i in 0..n {
                    let (ip, jp) = (grid.next(i), grid.next(j));
                    let d = (self.u(grid, ip, j, k) - self.u(grid, i, j, k)) * ix
                        + (self.v(grid, i, jp, k) - self.v(grid, i, j, k)) * ix
                        + (self.w(grid, i, j, k + 1) - self.w(grid, i, j, k)) * iz;
                    worst = worst.max(d.abs());
                }
            }
        }
        worst
    }
}

fn lumped_mass(grid: &BulkGrid) -> Vec<f64> {
    let vol = grid.cell_volume();
    let nl = grid.layers();
    let mut mass = vec![0.0; grid.num_slots()];
    for s in mass.iter_mut().take(2 * grid.num_cells()) {
        *s = vol;
    }
    for k in 0..=nl {
        let m = if k == 0 || k == nl { 0.5 * vol } else { vol };
        for c in 0..grid.layer_size() {
            mass[2 * grid.num_cells() + k * grid.layer_size() + c] = m;
        }
    }
    mass
}

/// Traces `(v⁺|_Σ, v⁻|_Σ)` at the center of every `Σ` cell, row-major `i + n j`.
/// The normal components are the same shared face value on both sides.
pub fn interface_traces(grid: &BulkGrid, state: &FlowState) -> Vec<([f64; 3], [f64; 3])> {
    let n = grid.n_sigma;
    let mut out = Vec::with_capacity(grid.layer_size());
    for j in 0..n {
        for i in 0..n {
            let rows = trace_rows(grid, i, j);
            let eval =
                |r: &Vec<(usize, f64)>| r.iter().map(|&(s, c)| c * state.velocity[s]).sum::<f64>();
            let vals: Vec<f64> = rows.iter().map(eval).collect();
            out.push(([vals[0], vals[1], vals[2]], [vals[3], vals[4], vals[5]]));
        }
    }
    out
}

/// The implicit-Euler saddle system for one grid, law and time step.
pub struct FlowSystem {
    grid: BulkGrid,
    law: InterfaceLaw,
    dt: f64,
    forcing: ForcingSchedule,
    mass: Vec<f64>,
    free_of_slot: Vec<Option<usize>>,
    slot_of_free: Vec<usize>,
    a: CsrMatrix,
    b: CsrMatrix,
}

/// Assembles `(M/dt + A_visc + A_Σ) u + Bᵀ p = M uⁿ/dt + F(t_{n+1})`, `B u = 0`.
pub fn assemble_flow_system(
    grid: &BulkGrid,
    law: &InterfaceLaw,
    dt: f64,
    forcing: ForcingSchedule,
) -> Result<FlowSystem, MacroFlowError> {
    grid.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(MacroFlowError::InvalidTimeStep(dt));
    }
    let ops = BulkOperators::new(grid);
    let nslots = grid.num_slots();
    let n = grid.n_sigma;

    let mut fixed = vec![false; nslots];
    if law.mode == FlowMode::Impermeable {
        for j in 0..n {
            for i in 0..n {
                fixed[grid.w_slot(i, j, grid.n_z)] = true;
                for side in Side::BOTH {
                    for comp in 0..2 {
                        fixed[grid.trace_slot(side, comp, i, j)] = true;
                    }
                }
            }
        }
    }
    let mut free_of_slot = vec![None; nslots];
    let mut slot_of_free = Vec::new();
    for s in 0..nslots {
        if !fixed[s] {
            free_of_slot[s] = Some(slot_of_free.len());
            slot_of_free.push(s);
        }
    }
    let nfree = slot_of_free.len();

    let restrict = |m: &CsrMatrix, restrict_rows: bool| {
        let mut t = Vec::with_capacity(m.nnz());
        for r in 0..m.nrows() {
            let rr = if restrict_rows {
                match free_of_slot[r] {
                    Some(x) => x,
                    None => continue,
                }
            } else {
                r
            };
            for (c, v) in m.row(r) {
                if let Some(cc) = free_of_slot[c] {
                    t.push((rr, cc, v));
                }
            }
        }
        let nrows = if restrict_rows { nfree } else { m.nrows() };
        CsrMatrix::from_triplets(nrows, nfree, t)
    };

    let strain_free = restrict(&ops.strain, false);
    let visc = crate::cell_flow::gram_matrix(&strain_free, &ops.weights);
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(visc.nnz() + nfree);
    for r in 0..nfree {
        for (c, v) in visc.row(r) {
            trip.push((r, c, v));
        }
        let m = ops.mass[slot_of_free[r]];
        if m > 0.0 {
            trip.push((r, r, m / dt));
        }
    }
    if let (FlowMode::Coupled, Some(t)) = (law.mode, law.tensors.as_ref()) {
        let mut k6 = [[0.0; 6]; 6];
        for a in 0..3 {
            for b in 0..3 {
                // Only the symmetric part of K^± enters the quadratic form.
                k6[a][b] = 0.5 * (t.k_plus[a][b] + t.k_plus[b][a]);
                k6[a + 3][b + 3] = 0.5 * (t.k_minus[a][b] + t.k_minus[b][a]);
                k6[a][b + 3] = t.m[a][b];
                k6[a + 3][b] = t.m[a][b];
            }
        }
        let area = grid.hx() * grid.hx();
        for j in 0..n {
            for i in 0..n {
                let rows = trace_rows(grid, i, j);
                for a in 0..6 {
                    for b in 0..6 {
                        let kab = area * k6[a][b];
                        if kab == 0.0 {
                            continue;
                        }
                        for &(sa, ca) in &rows[a] {
                            for &(sb, cb) in &rows[b] {
                                if let (Some(fa), Some(fb)) = (free_of_slot[sa], free_of_slot[sb]) {
                                    trip.push((fa, fb, kab * ca * cb));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let a = CsrMatrix::from_triplets(nfree, nfree, trip).with_symmetry(true);
    let b = restrict(&ops.div, false);
    Ok(FlowSystem {
        grid: *grid,
        law: law.clone(),
        dt,
        forcing,
        mass: ops.mass,
        free_of_slot,
        slot_of_free,
        a,
        b,
    })
}

impl FlowSystem {
    pub fn grid(&self) -> &BulkGrid {
        &self.grid
    }

    pub fn law(&self) -> &InterfaceLaw {
        &self.law
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Velocity block over free unknowns.
    pub fn velocity_block(&self) -> &CsrMatrix {
        &self.a
    }

    /// `-|cell| div` restricted to free unknowns.
    pub fn divergence_block(&self) -> &CsrMatrix {
        &self.b
    }

    pub fn free_slots(&self) -> &[usize] {
        &self.slot_of_free
    }

    /// Right-hand side `M uⁿ/dt + F(t)` over free unknowns.
    pub fn momentum_rhs(&self, state: &FlowState, t: f64) -> Vec<f64> {
        let g = &self.grid;
        let vol = g.cell_volume();
        let nl = g.layers();
        let fp = self.forcing.at(t, Side::Plus);
        let fm = self.forcing.at(t, Side::Minus);
        let force = |side: Side| if side == Side::Plus { fp } else { fm };
        let mut rhs: Vec<f64> = self
            .slot_of_free
            .iter()
            .map(|&s| self.mass[s] * state.velocity[s] / self.dt)
            .collect();
        if self.forcing.is_zero() {
            return rhs;
        }
        let n = g.n_sigma;
        for k in 0..nl {
            let f = force(g.side_of_layer(k));
            for j in 0..n {
                for i in 0..n {
                    for (slot, comp) in [(g.u_slot(i, j, k), 0), (g.v_slot(i, j, k), 1)] {
                        if let Some(fi) = self.free_of_slot[slot] {
                            rhs[fi] += vol * f[comp];
                        }
                    }
                }
            }
        }
        for k in 0..=nl {
            let load = if k == 0 {
                0.5 * vol * fm[2]
            } else if k == nl {
                0.5 * vol * fp[2]
            } else if k == g.n_z {
                0.5 * vol * (fp[2] + fm[2])
            } else {
                vol * force(g.side_of_layer(k))[2]
            };
            for j in 0..n {
                for i in 0..n {
                    if let Some(fi) = self.free_of_slot[g.w_slot(i, j, k)] {
                        rhs[fi] += load;
                    }
                }
            }
        }
        rhs
    }
}

/// Advances the state by one implicit-Euler step.
pub fn step_flow(
    state: &FlowState,
    system: &FlowSystem,
    tol: f64,
) -> Result<FlowState, MacroFlowError> {
    let g = &system.grid;
    if state.velocity.len() != g.num_slots() || state.pressure.len() != g.num_cells() {
        return Err(MacroFlowError::GridMismatch(format!(
            "state has {} velocity and {} pressure values",
            state.velocity.len(),
            state.pressure.len()
        )));
    }
    let t1 = state.t + system.dt;
    let f = system.momentum_rhs(state, t1);
    let sys = SaddleSystem {
        a: Cow::Borrowed(&system.a),
        b: Cow::Borrowed(&system.b),
        f,
        g: vec![0.0; g.num_cells()],
        pressure_mass: vec![g.cell_volume(); g.num_cells()],
        zero_mean_pressure: false,
    };
    let u0: Vec<f64> = system
        .slot_of_free
        .iter()
        .map(|&s| state.velocity[s])
        .collect();
    let sol = uzawa_solve_from(
        &sys,
        tol,
        default_max_iter(g.num_cells()),
        Some(&u0),
        Some(&state.pressure),
    )
    .map_err(|source| MacroFlowError::Solver { t: t1, source })?;
    let mut velocity = vec![0.0; g.num_slots()];
    for (fi, &s) in system.slot_of_free.iter().enumerate() {
        velocity[s] = sol.u[fi];
    }
    Ok(FlowState {
        t: t1,
        velocity,
        pressure: sol.p,
    })
}

/// Per-step diagnostics of a flow run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRecord {
    pub t: f64,
    pub energy: f64,
    pub max_divergence: f64,
    /// `Σ`-averaged Darcy velocity (coupled mode only).
    pub darcy: Option<[f64; 3]>,
    /// `Σ`-averaged tangential traces `(⟨v⁺₁⟩, ⟨v⁺₂⟩, ⟨v⁻₁⟩, ⟨v⁻₂⟩)`.
    pub mean_tangential_traces: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub records: Vec<FlowRecord>,
    /// States at the output cadence, always including the first and last.
    pub snapshots: Vec<FlowState>,
    pub last: FlowState,
}

/// `Σ`-averaged Darcy velocity of a state.
pub fn mean_darcy_velocity(
    grid: &BulkGrid,
    law: &InterfaceLaw,
    state: &FlowState,
) -> Option<[f64; 3]> {
    let tensors = law.tensors()?;
    let traces = interface_traces(grid, state);
    let mut acc = [0.0; 3];
    for (vp, vm) in &traces {
        // The normal components are one shared unknown, so this cannot fail.
        let d = darcy_velocity(tensors, *vp, *vm).expect("shared normal trace");
        for k in 0..3 {
            acc[k] += d[k];
        }
    }
    Some(acc.map(|x| x / traces.len() as f64))
}

pub fn flow_record(grid: &BulkGrid, law: &InterfaceLaw, state: &FlowState) -> FlowRecord {
    let traces = interface_traces(grid, state);
    let mut mt = [0.0; 4];
    for (vp, vm) in &traces {
        mt[0] += vp[0];
        mt[1] += vp[1];
        mt[2] += vm[0];
        mt[3] += vm[1];
    }
    FlowRecord {
        t: state.t,
        energy: state.energy(grid),
        max_divergence: state.max_divergence(grid),
        darcy: mean_darcy_velocity(grid, law, state),
        mean_tangential_traces: mt.map(|x| x / traces.len() as f64),
    }
}

/// Runs from `initial` to `t_end`, keeping every `cadence`-th state.
pub fn run_flow(
    system: &FlowSystem,
    initial: FlowState,
    t_end: f64,
    tol: f64,
    cadence: usize,
) -> Result<FlowRun, MacroFlowError> {
    let steps = (t_end / system.dt).round().max(0.0) as usize;
    run_flow_steps(system, initial, steps, tol, cadence, |_, _| {})
}

/// As [`run_flow`] with an explicit step count and a callback per accepted step.
pub fn run_flow_steps(
    system: &FlowSystem,
    initial: FlowState,
    steps: usize,
    tol: f64,
    cadence: usize,
    mut on_step: impl FnMut(usize, &FlowState),
) -> Result<FlowRun, MacroFlowError> {
    let g = system.grid;
    let cadence = cadence.max(1);
    let mut records = vec![flow_record(&g, &system.law, &initial)];
    let mut snapshots = vec![initial.clone()];
    let mut state = initial;
    for step in 1..=steps {
        state = step_flow(&state, system, tol)?;
        records.push(flow_record(&g, &system.law, &state));
        on_step(step, &state);
        if step % cadence == 0 || step == steps {
            snapshots.push(state.clone());
        }
    }
    Ok(FlowRun {
        records,
        snapshots,
        last: state,
    })
}
