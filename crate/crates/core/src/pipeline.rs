//! Orchestration behind the command-line tool: cell solves, tensor files and
//! the coupled macroscopic run.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::cell_diffusion::{
    assemble_d_star, solve_both_directions, DiffusionError, EffectiveDiffusionTensor,
};
use crate::cell_flow::{
    assemble_effective_tensors, coercivity_margin, solve_all_modes, CellFlowError,
    EffectiveFlowTensors,
};
use crate::geometry::{
    build_cell, validate_cell, GeometryError, MembraneMode, ReferenceCell, ValidationReport,
};
use crate::io::output::{write_json, write_vtk, SeriesWriter, VtkField, VtkGrid};
use crate::io::{CellValues, ConfigError, FluidInitial, LoadedConfig, OutputFormat, SolidInitial};
use crate::macro_flow::{
    assemble_flow_system, flow_record, step_flow, BulkGrid, FlowMode, FlowRecord, FlowState,
    FlowSystem, InterfaceLaw, MacroFlowError,
};
use crate::macro_transport::{
    coupled_step, total_mass, transport_record, ExchangeLedger, GammaRegime, MembraneSolid,
    TransportError, TransportModel, TransportParams, TransportState,
};

pub const CELL_FLOW_FILE: &str = "cell_flow.json";
pub const CELL_DIFFUSION_FILE: &str = "cell_diffusion.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("input {path}: {reason}")]
    Input { path: PathBuf, reason: String },
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    CellFlow(#[from] CellFlowError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Flow(#[from] MacroFlowError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

impl PipelineError {
    /// 2 for configuration, input and geometry problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        let numerical = match self {
            PipelineError::CellFlow(e) => matches!(e, CellFlowError::Solver { .. }),
            PipelineError::Diffusion(e) => matches!(e, DiffusionError::Solver { .. }),
            PipelineError::Flow(e) => matches!(e, MacroFlowError::Solver { .. }),
            PipelineError::Transport(e) => matches!(
                e,
                TransportError::Cfl { .. }
                    | TransportError::NonFinite { .. }
                    | TransportError::Nonconvergence { .. }
                    | TransportError::Solver { .. }
            ),
            _ => false,
        };
        if numerical {
            3
        } else {
            2
        }
    }
}

fn output_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Output {
        path: path.to_path_buf(),
        source,
    }
}

fn out_dir(cfg: &LoadedConfig) -> Result<PathBuf, PipelineError> {
    let dir = cfg.resolve(&cfg.config.outputs.directory);
    std::fs::create_dir_all(&dir).map_err(output_err(&dir))?;
    Ok(dir)
}

/// Builds the cell and runs the geometry checks of the configuration.
pub fn validate(cfg: &LoadedConfig) -> Result<(ReferenceCell, ValidationReport), PipelineError> {
    let cell = build_cell(&cfg.config.geometry)?;
    let report = validate_cell(&cell, cfg.config.geometry.clearance_check)?;
    Ok((cell, report))
}

/// One-line description of the interface mode selected by the geometry.
pub fn mode_summary(mode: MembraneMode) -> &'static str {
    match mode {
        MembraneMode::Coupled => "COUPLED eligible",
        MembraneMode::Impermeable => "IMPERMEABLE mode (|S_s^±|>0)",
        MembraneMode::MixedUnsupported => "MIXED mode (solid on one side only) is unsupported",
    }
}

pub struct CellFlowOutput {
    pub tensors: EffectiveFlowTensors,
    pub coercivity_margin: f64,
    pub path: PathBuf,
}

pub fn compute_flow_tensors(
    cell: &ReferenceCell,
    tol: f64,
) -> Result<(EffectiveFlowTensors, Vec<SolveInfo>), PipelineError> {
    let solutions = solve_all_modes(cell, tol)?;
    let tensors = assemble_effective_tensors(&solutions, cell)?;
    let info = solutions
        .iter()
        .map(|s| SolveInfo {
            problem: s.mode.to_string(),
            residual: s.momentum_residual,
            divergence_residual: Some(s.divergence_residual),
            iterations: s.iterations,
        })
        .collect();
    Ok((tensors, info))
}

/// Residual summary of one cell solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveInfo {
    pub problem: String,
    pub residual: f64,
    pub divergence_residual: Option<f64>,
    pub iterations: usize,
}

pub fn run_cell_flow(cfg: &LoadedConfig) -> Result<CellFlowOutput, PipelineError> {
    let (cell, report) = validate(cfg)?;
    let tol = cfg.config.numerics.cell_tol;
    let (tensors, solves) = compute_flow_tensors(&cell, tol)?;
    let margin = coercivity_margin(&tensors);
    let dir = out_dir(cfg)?;
    let path = dir.join(CELL_FLOW_FILE);
    let doc = json!({
        "config_hash": cfg.hash,
        "tensors": tensors,
        "provenance": {
            "resolution": cell.resolution(),
            "cell_tol": tol,
            "coercivity_margin": margin,
            "membrane_mode": report.mode,
            "measures": report.measures,
            "solves": solves,
        },
    });
    write_json(&path, &doc).map_err(output_err(&path))?;
    Ok(CellFlowOutput {
        tensors,
        coercivity_margin: margin,
        path,
    })
}

pub struct CellDiffusionOutput {
    pub tensor: EffectiveDiffusionTensor,
    pub path: PathBuf,
}

pub fn compute_diffusion_tensor(
    cell: &ReferenceCell,
    d_s: f64,
    tol: f64,
) -> Result<(EffectiveDiffusionTensor, Vec<SolveInfo>), PipelineError> {
    let sols = solve_both_directions(cell, d_s, tol)?;
    let tensor = assemble_d_star(&sols, cell, d_s)?;
    let info = sols
        .iter()
        .map(|s| SolveInfo {
            problem: format!("corrector {}", s.direction),
            residual: s.residual,
            divergence_residual: None,
            iterations: s.iterations,
        })
        .collect();
    Ok((tensor, info))
}

pub fn run_cell_diffusion(cfg: &LoadedConfig) -> Result<CellDiffusionOutput, PipelineError> {
    let (cell, _) = validate(cfg)?;
    let tol = cfg.config.numerics.cell_tol;
    let (tensor, solves) = compute_diffusion_tensor(&cell, cfg.config.physics.d_s, tol)?;
    let dir = out_dir(cfg)?;
    let path = dir.join(CELL_DIFFUSION_FILE);
    let doc = json!({
        "config_hash": cfg.hash,
        "tensor": tensor,
        "provenance": {
            "resolution": cell.resolution(),
            "cell_tol": tol,
            "solves": solves,
        },
    });
    write_json(&path, &doc).map_err(output_err(&path))?;
    Ok(CellDiffusionOutput { tensor, path })
}

fn read_document(path: &Path, key: &str) -> Result<serde_json::Value, PipelineError> {
    let input = |reason: String| PipelineError::Input {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| input(e.to_string()))?;
    let mut doc: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| input(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    doc.get_mut(key)
        .map(serde_json::Value::take)
        .ok_or_else(|| input(format!("missing \"{key}\"")))
}

pub fn load_flow_tensors(path: &Path) -> Result<EffectiveFlowTensors, PipelineError> {
    serde_json::from_value(read_document(path, "tensors")?).map_err(|e| PipelineError::Input {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn load_diffusion_tensor(path: &Path) -> Result<EffectiveDiffusionTensor, PipelineError> {
    serde_json::from_value(read_document(path, "tensor")?).map_err(|e| PipelineError::Input {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Final ledgers of a macroscopic run.
#[derive(Debug, Clone, Serialize)]
pub struct MacroSummary {
    pub config_hash: String,
    pub flow_mode: FlowMode,
    pub gamma_regime: GammaRegime,
    pub steps: usize,
    pub t_final: f64,
    pub mass_initial: f64,
    pub mass_final: f64,
    /// `|M(T) − M(0)| / max(|M(0)|, tiny)`.
    pub conservation_drift: f64,
    /// Largest `|fluid change + solid change|` of a single exchange.
    pub max_exchange_imbalance: f64,
    pub energy_initial: f64,
    pub energy_final: f64,
    /// Largest step-to-step energy increase (zero when the energy never grows).
    pub max_energy_increase: f64,
    pub max_divergence: f64,
}

impl MacroSummary {
    pub fn line(&self) -> String {
        let trend = if self.max_energy_increase > 0.0 {
            "non-monotone"
        } else {
            "non-increasing"
        };
        format!(
            "steps={} t={:.6} conservation_drift={:.3e} energy {:.6e} -> {:.6e} ({trend})",
            self.steps,
            self.t_final,
            self.conservation_drift,
            self.energy_initial,
            self.energy_final
        )
    }
}

struct Writers {
    flow: Option<SeriesWriter>,
    transport: Option<SeriesWriter>,
    vtk_dir: Option<PathBuf>,
}

const FLOW_HEADER: [&str; 10] = [
    "t",
    "energy",
    "max_divergence",
    "darcy_1",
    "darcy_2",
    "darcy_3",
    "trace_plus_1",
    "trace_plus_2",
    "trace_minus_1",
    "trace_minus_2",
];

const TRANSPORT_HEADER: [&str; 8] = [
    "t",
    "fluid_mass",
    "solid_mass",
    "c_f_min",
    "c_f_max",
    "c_s_min",
    "c_s_max",
    "exchange_imbalance",
];

fn flow_row(r: &FlowRecord) -> [f64; 10] {
    let d = r.darcy.unwrap_or([f64::NAN; 3]);
    let m = r.mean_tangential_traces;
    [
        r.t,
        r.energy,
        r.max_divergence,
        d[0],
        d[1],
        d[2],
        m[0],
        m[1],
        m[2],
        m[3],
    ]
}

/// Interface mode, law and flow system for the configuration.
fn flow_setup(
    cfg: &LoadedConfig,
    cell: &ReferenceCell,
    report: &ValidationReport,
    grid: &BulkGrid,
) -> Result<FlowSystem, PipelineError> {
    let c = &cfg.config;
    let mode = match (c.physics.flow_mode, report.mode) {
        (Some(m), MembraneMode::Coupled) => m,
        (Some(FlowMode::Impermeable), _) => FlowMode::Impermeable,
        (Some(FlowMode::Coupled), m) => {
            return Err(PipelineError::Unsupported(format!(
                "coupled flow requested but the geometry is {m:?}"
            )))
        }
        (None, MembraneMode::Coupled) => FlowMode::Coupled,
        (None, MembraneMode::Impermeable) => FlowMode::Impermeable,
        (None, MembraneMode::MixedUnsupported) => {
            return Err(PipelineError::Unsupported(mode_summary(report.mode).into()))
        }
    };
    let law = match mode {
        FlowMode::Impermeable => InterfaceLaw::impermeable(),
        FlowMode::Coupled => {
            let tensors = match &c.inputs.flow_tensors {
                Some(p) => load_flow_tensors(&cfg.resolve(p))?,
                None => compute_flow_tensors(cell, c.numerics.cell_tol)?.0,
            };
            InterfaceLaw::coupled(tensors)?
        }
    };
    Ok(assemble_flow_system(
        grid,
        &law,
        c.numerics.dt,
        c.physics.forcing,
    )?)
}

fn transport_setup(
    cfg: &LoadedConfig,
    cell: &ReferenceCell,
    grid: &BulkGrid,
) -> Result<(TransportModel, TransportState), PipelineError> {
    let c = &cfg.config;
    let mut solid = MembraneSolid::from_cell(cell)?;
    if c.physics.gamma_regime == GammaRegime::MinusOne {
        let tensor = match &c.inputs.diffusion_tensor {
            Some(p) => load_diffusion_tensor(&cfg.resolve(p))?,
            None => compute_diffusion_tensor(cell, c.physics.d_s, c.numerics.cell_tol)?.0,
        };
        solid = solid.with_diffusion_tensor(&tensor);
    }
    let params = TransportParams {
        regime: c.physics.gamma_regime,
        d_f: c.physics.d_f,
        d_s: c.physics.d_s,
        kinetics: c.physics.kinetics,
        dt: c.numerics.dt,
    };
    let model = TransportModel::new(*grid, params, solid)?;
    let c_f: Vec<f64> = match c.initial.c_f {
        FluidInitial::Uniform { value } => vec![value; grid.num_cells()],
        FluidInitial::Boxes { plus, minus } => (0..grid.num_cells())
            .map(|i| {
                if i / grid.layer_size() < grid.n_z {
                    minus
                } else {
                    plus
                }
            })
            .collect(),
    };
    let c_s: Vec<f64> = match &c.initial.c_s {
        SolidInitial::Mean { value } => vec![*value; model.solid_len()],
        SolidInitial::Cell {
            values: CellValues::Uniform(v),
        } => vec![*v; model.solid_len()],
        SolidInitial::Cell {
            values: CellValues::PerVoxel(v),
        } => {
            if v.len() != model.solid_block() {
                return Err(ConfigError::Invalid(format!(
                    "initial.c_s has {} values, the cell has {} solid voxels",
                    v.len(),
                    model.solid_block()
                ))
                .into());
            }
            v.repeat(grid.layer_size())
        }
    };
    let state = model.state(c_f, c_s)?;
    Ok((model, state))
}

/// Runs flow and transport together up to `t_end`, writing the configured outputs.
///
/// On a numerical failure the last good state is written before the error is
/// returned.
pub fn run_macro(cfg: &LoadedConfig) -> Result<MacroSummary, PipelineError> {
    let c = &cfg.config;
    let (cell, report) = validate(cfg)?;
    let n = &c.numerics;
    let grid = BulkGrid::new(n.sigma_cells, n.layers_per_box, n.sigma_extent, n.height)?;
    let system = flow_setup(cfg, &cell, &report, &grid)?;
    let (model, mut transport) = transport_setup(cfg, &cell, &grid)?;
    let dir = out_dir(cfg)?;

    let outputs = &c.outputs;
    let mut writers = Writers {
        flow: None,
        transport: None,
        vtk_dir: None,
    };
    if outputs.wants(OutputFormat::Csv) {
        let p = dir.join("flow.csv");
        writers.flow =
            Some(SeriesWriter::create(&p, &cfg.hash, &FLOW_HEADER).map_err(output_err(&p))?);
        let p = dir.join("transport.csv");
        writers.transport =
            Some(SeriesWriter::create(&p, &cfg.hash, &TRANSPORT_HEADER).map_err(output_err(&p))?);
    }
    if outputs.wants(OutputFormat::Vtk) {
        let p = dir.join("vtk");
        std::fs::create_dir_all(&p).map_err(output_err(&p))?;
        writers.vtk_dir = Some(p);
    }

    let law = system.law().clone();
    let mut flow = FlowState::zero(&grid);
    let flow_active = !c.physics.forcing.is_zero();
    let steps = c.steps();
    let mass0 = total_mass(&model, &transport).total();
    let mut record = flow_record(&grid, &law, &flow);
    let energy0 = record.energy;
    let mut max_increase: f64 = 0.0;
    let mut max_div = record.max_divergence;
    let mut max_imbalance: f64 = 0.0;

    let emit = |w: &mut Writers,
                step: usize,
                flow: &FlowState,
                fr: &FlowRecord,
                tr: &TransportState,
                ledger: &ExchangeLedger,
                snapshot: bool|
     -> Result<(), PipelineError> {
        if let Some(s) = w.flow.as_mut() {
            s.row(&flow_row(fr))
                .map_err(output_err(&dir.join("flow.csv")))?;
        }
        if let Some(s) = w.transport.as_mut() {
            let r = transport_record(&model, tr, ledger);
            s.row(&[
                r.t,
                r.fluid_mass,
                r.solid_mass,
                r.c_f_min,
                r.c_f_max,
                r.c_s_min,
                r.c_s_max,
                r.exchange_imbalance,
            ])
            .map_err(output_err(&dir.join("transport.csv")))?;
        }
        if snapshot {
            if let Some(d) = &w.vtk_dir {
                write_snapshots(d, &format!("{step:06}"), &cfg.hash, &grid, &model, flow, tr)?;
            }
        }
        Ok(())
    };

    emit(
        &mut writers,
        0,
        &flow,
        &record,
        &transport,
        &ExchangeLedger::default(),
        true,
    )?;
    let mut failure = None;
    for step in 1..=steps {
        let next_flow = if flow_active {
            match step_flow(&flow, &system, n.flow_tol) {
                Ok(f) => f,
                Err(e) => {
                    failure = Some(PipelineError::from(e));
                    break;
                }
            }
        } else {
            FlowState {
                t: flow.t + n.dt,
                ..flow.clone()
            }
        };
        let velocity = flow_active.then_some(&next_flow);
        let (next_transport, ledger) = match coupled_step(&model, &transport, velocity) {
            Ok(x) => x,
            Err(e) => {
                failure = Some(PipelineError::from(e));
                break;
            }
        };
        let next_record = flow_record(&grid, &law, &next_flow);
        max_increase = max_increase.max(next_record.energy - record.energy);
        max_div = max_div.max(next_record.max_divergence);
        max_imbalance = max_imbalance.max(ledger.imbalance().abs());
        flow = next_flow;
        transport = next_transport;
        record = next_record;
        let snapshot = step % outputs.cadence == 0 || step == steps;
        emit(
            &mut writers,
            step,
            &flow,
            &record,
            &transport,
            &ledger,
            snapshot,
        )?;
    }
    for w in [writers.flow.as_mut(), writers.transport.as_mut()]
        .into_iter()
        .flatten()
    {
        w.flush().map_err(output_err(&dir))?;
    }
    if let Some(e) = failure {
        if let Some(d) = &writers.vtk_dir {
            write_snapshots(d, "last_good", &cfg.hash, &grid, &model, &flow, &transport)?;
        }
        return Err(e);
    }

    let mass1 = total_mass(&model, &transport).total();
    let summary = MacroSummary {
        config_hash: cfg.hash.clone(),
        flow_mode: law.mode(),
        gamma_regime: c.physics.gamma_regime,
        steps,
        t_final: transport.t,
        mass_initial: mass0,
        mass_final: mass1,
        conservation_drift: (mass1 - mass0).abs() / mass0.abs().max(f64::MIN_POSITIVE),
        max_exchange_imbalance: max_imbalance,
        energy_initial: energy0,
        energy_final: record.energy,
        max_energy_increase: max_increase,
        max_divergence: max_div,
    };
    if outputs.wants(OutputFormat::Json) {
        let p = dir.join("summary.json");
        let v = serde_json::to_value(&summary).expect("summary serializes");
        write_json(&p, &v).map_err(output_err(&p))?;
    }
    Ok(summary)
}

fn write_snapshots(
    dir: &Path,
    tag: &str,
    hash: &str,
    grid: &BulkGrid,
    model: &TransportModel,
    flow: &FlowState,
    transport: &TransportState,
) -> Result<(), PipelineError> {
    let n = grid.n_sigma;
    let bulk = VtkGrid {
        cells: [n, n, grid.layers()],
        origin: [0.0, 0.0, -grid.height],
        spacing: [grid.hx(), grid.hx(), grid.hz()],
    };
    let mut velocity = Vec::with_capacity(grid.num_cells());
    for k in 0..grid.layers() {
        for j in 0..n {
            for i in 0..n {
                velocity.push(flow.cell_velocity(grid, i, j, k));
            }
        }
    }
    let title = format!("t={:.16e} config_hash={hash}", flow.t);
    let p = dir.join(format!("bulk_{tag}.vtk"));
    write_vtk(
        &p,
        &title,
        &bulk,
        &[
            VtkField::Vector("velocity", &velocity),
            VtkField::Scalar("pressure", &flow.pressure),
            VtkField::Scalar("c_f", &transport.c_f),
        ],
    )
    .map_err(output_err(&p))?;

    let block = model.solid_block();
    let means: Vec<f64> = transport
        .c_s
        .chunks(block)
        .map(|c| c.iter().sum::<f64>() / block as f64)
        .collect();
    let sigma = VtkGrid {
        cells: [n, n, 1],
        origin: [0.0, 0.0, 0.0],
        spacing: [grid.hx(), grid.hx(), 1.0],
    };
    let p = dir.join(format!("solid_{tag}.vtk"));
    write_vtk(&p, &title, &sigma, &[VtkField::Scalar("c_s", &means)]).map_err(output_err(&p))?;

    // The cell field at the first point of Σ, zero on fluid voxels.
    if let (Some(voxels), Some(res)) =
        (model.solid().cell_voxels(), model.solid().cell_resolution())
    {
        if model.params().regime == GammaRegime::One {
            let mut field = vec![0.0; res * res * 2 * res];
            for (m, &v) in voxels.iter().enumerate() {
                field[v] = transport.c_s[m];
            }
            let h = 1.0 / res as f64;
            let cell_grid = VtkGrid {
                cells: [res, res, 2 * res],
                origin: [0.0, 0.0, -1.0],
                spacing: [h, h, h],
            };
            let p = dir.join(format!("cell_{tag}.vtk"));
            write_vtk(&p, &title, &cell_grid, &[VtkField::Scalar("c_s", &field)])
                .map_err(output_err(&p))?;
        }
    }
    Ok(())
}
