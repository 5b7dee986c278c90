//! Configuration parsing and output writers.

pub mod config;
pub mod output;

pub use config::{
    config_hash, config_schema, load_config, parse_config, CellValues, ConfigError, FluidInitial,
    InitialData, Inputs, LoadedConfig, Numerics, OutputFormat, Outputs, Physics, RunConfig,
    SolidInitial,
};
