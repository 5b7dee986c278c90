//! Run configuration: JSON document, schema and semantic validation.

use std::path::{Path, PathBuf};

use schemars::{schema_for, JsonSchema};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::MicrostructureSpec;
use crate::kinetics::KineticsSpec;
use crate::macro_flow::{FlowMode, ForcingSchedule};
use crate::macro_transport::GammaRegime;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed configuration at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: MicrostructureSpec,
    pub physics: Physics,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    pub d_f: f64,
    pub d_s: f64,
    pub gamma_regime: GammaRegime,
    pub kinetics: KineticsSpec,
    #[serde(default)]
    pub forcing: ForcingSchedule,
    /// Interface mode of the bulk flow; defaults to the mode detected from the geometry.
    #[serde(default)]
    pub flow_mode: Option<FlowMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    /// Relative tolerance of the cell problems.
    pub cell_tol: f64,
    /// Relative tolerance of the bulk flow solves.
    pub flow_tol: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Cells per lateral direction of `Σ`.
    pub sigma_cells: usize,
    /// Cell layers per bulk box.
    pub layers_per_box: usize,
    pub height: f64,
    pub sigma_extent: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            cell_tol: 1e-8,
            flow_tol: 1e-8,
            dt: 0.01,
            t_end: 0.1,
            sigma_cells: 8,
            layers_per_box: 4,
            height: 1.0,
            sigma_extent: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct InitialData {
    pub c_f: FluidInitial,
    pub c_s: SolidInitial,
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData {
            c_f: FluidInitial::Uniform { value: 0.0 },
            c_s: SolidInitial::Mean { value: 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FluidInitial {
    Uniform {
        value: f64,
    },
    /// Constant per box.
    Boxes {
        plus: f64,
        minus: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolidInitial {
    /// Mean solid concentration on `Σ` (regimes `minus_one`, `intermediate`).
    Mean { value: f64 },
    /// Field on the solid voxels of the cell, the same at every point of `Σ`
    /// (regime `one`): a single value or one value per solid voxel in
    /// ascending voxel order.
    Cell { values: CellValues },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum CellValues {
    Uniform(f64),
    PerVoxel(Vec<f64>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    /// Tensor file written by `cell-flow`; computed from the geometry when absent.
    pub flow_tensors: Option<PathBuf>,
    /// Tensor file written by `cell-diffusion`; computed when absent and needed.
    pub diffusion_tensor: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Vtk,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub directory: PathBuf,
    /// Snapshot every `cadence` steps.
    pub cadence: usize,
    pub formats: Vec<OutputFormat>,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            directory: PathBuf::from("out"),
            cadence: 10,
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
        }
    }
}

impl Outputs {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

/// A parsed configuration with its source location and hash.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Hex SHA-256 of the configuration file bytes.
    pub hash: String,
    /// Directory against which relative paths are resolved.
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let config = parse_config(&text)?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig {
        config,
        hash: config_hash(text.as_bytes()),
        base_dir,
    })
}

pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses and validates; syntax and type errors carry line and column.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

/// JSON schema of [`RunConfig`].
pub fn config_schema() -> serde_json::Value {
    serde_json::to_value(schema_for!(RunConfig)).expect("schema serializes")
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let positive = |name: &str, x: f64| -> Result<(), ConfigError> {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                bad(format!("{name} must be positive, got {x}"))
            }
        };
        positive("physics.d_f", self.physics.d_f)?;
        positive("physics.d_s", self.physics.d_s)?;
        self.physics
            .kinetics
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let n = &self.numerics;
        positive("numerics.cell_tol", n.cell_tol)?;
        positive("numerics.flow_tol", n.flow_tol)?;
        positive("numerics.dt", n.dt)?;
        positive("numerics.height", n.height)?;
        positive("numerics.sigma_extent", n.sigma_extent)?;
        if !(n.t_end >= 0.0 && n.t_end.is_finite()) {
            return bad(format!(
                "numerics.t_end must be non-negative, got {}",
                n.t_end
            ));
        }
        if n.sigma_cells < 2 || n.layers_per_box < 1 {
            return bad("numerics.sigma_cells ≥ 2 and numerics.layers_per_box ≥ 1 required".into());
        }
        if self.outputs.cadence == 0 {
            return bad("outputs.cadence must be at least 1".into());
        }
        let forcing_ok = match self.physics.forcing {
            ForcingSchedule::Constant { plus, minus } => {
                plus.iter().chain(&minus).all(|x| x.is_finite())
            }
            ForcingSchedule::Ramped {
                plus,
                minus,
                ramp_time,
            } => plus.iter().chain(&minus).all(|x| x.is_finite()) && ramp_time >= 0.0,
        };
        if !forcing_ok {
            return bad("physics.forcing must be finite with non-negative ramp_time".into());
        }
        let cell_data = matches!(self.initial.c_s, SolidInitial::Cell { .. });
        match (self.physics.gamma_regime, cell_data) {
            (GammaRegime::One, false) => {
                return bad("regime one needs initial.c_s of kind \"cell\"".into())
            }
            (GammaRegime::MinusOne | GammaRegime::Intermediate, true) => {
                return bad(
                    "regimes minus_one and intermediate need initial.c_s of kind \"mean\"".into(),
                )
            }
            _ => {}
        }
        let finite = match (&self.initial.c_f, &self.initial.c_s) {
            (FluidInitial::Uniform { value }, _) if !value.is_finite() => false,
            (FluidInitial::Boxes { plus, minus }, _)
                if !(plus.is_finite() && minus.is_finite()) =>
            {
                false
            }
            (_, SolidInitial::Mean { value }) => value.is_finite(),
            (
                _,
                SolidInitial::Cell {
                    values: CellValues::Uniform(v),
                },
            ) => v.is_finite(),
            (
                _,
                SolidInitial::Cell {
                    values: CellValues::PerVoxel(v),
                },
            ) => v.iter().all(|x| x.is_finite()),
        };
        if !finite {
            return bad("initial data must be finite".into());
        }
        Ok(())
    }

    /// Number of macroscopic time steps.
    pub fn steps(&self) -> usize {
        (self.numerics.t_end / self.numerics.dt).round() as usize
    }
}
