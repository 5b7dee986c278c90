use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thinlayer_core::io::{load_config, LoadedConfig};
use thinlayer_core::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(
    name = "thinlayer",
    version,
    about = "Effective interface laws and macroscopic runs for thin porous membranes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the five cell Stokes problems and write the interface tensors.
    CellFlow(Common),
    /// Solve the solid corrector problems and write the effective diffusion tensor.
    CellDiffusion(Common),
    /// Run bulk flow and transport with the effective interface laws.
    MacroRun(Common),
    /// Check the microstructure and report measures and the interface mode.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `outputs.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relative solver tolerance for the cell problems and the bulk flow.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, env = "THINLAYER_THREADS")]
    threads: Option<usize>,
}

fn prepare(c: &Common) -> Result<LoadedConfig, PipelineError> {
    if let Some(n) = c.threads {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let mut cfg = load_config(&c.config)?;
    if let Some(out) = &c.out {
        // Relative to the working directory, not to the config file.
        cfg.config.outputs.directory = std::env::current_dir()
            .map(|d| d.join(out))
            .unwrap_or_else(|_| out.clone());
    }
    if let Some(tol) = c.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(thinlayer_core::io::ConfigError::Invalid(format!(
                "--tol must be positive, got {tol}"
            ))
            .into());
        }
        cfg.config.numerics.cell_tol = tol;
        cfg.config.numerics.flow_tol = tol;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::CellFlow(c) => {
            let cfg = prepare(&c)?;
            let out = pipeline::run_cell_flow(&cfg)?;
            let t = &out.tensors;
            println!(
                "K+11={:.10e} K-11={:.10e} M11={:.10e} coercivity_margin={:.10e}",
                t.k_plus[0][0], t.k_minus[0][0], t.m[0][0], out.coercivity_margin
            );
            println!("wrote {}", out.path.display());
        }
        Command::CellDiffusion(c) => {
            let cfg = prepare(&c)?;
            let out = pipeline::run_cell_diffusion(&cfg)?;
            let d = out.tensor.d_star;
            println!(
                "D*=[[{:.10e}, {:.10e}], [{:.10e}, {:.10e}]] |Z_s|={:.10e}",
                d[0][0], d[0][1], d[1][0], d[1][1], out.tensor.zs_measure
            );
            println!("wrote {}", out.path.display());
        }
        Command::MacroRun(c) => {
            let cfg = prepare(&c)?;
            let summary = pipeline::run_macro(&cfg)?;
            println!("{}", summary.line());
        }
        Command::Validate(c) => {
            let cfg = prepare(&c)?;
            let (_, report) = pipeline::validate(&cfg)?;
            let m = &report.measures;
            println!("{}", pipeline::mode_summary(report.mode));
            println!(
                "|Z_f|={:.10e} |Z_s|={:.10e} |Γ|={:.10e} |S_f+|={:.10e} |S_f-|={:.10e} |S_s+|={:.10e} |S_s-|={:.10e}",
                m.fluid_volume, m.solid_volume, m.gamma_area, m.s_plus_fluid, m.s_minus_fluid, m.s_plus_solid, m.s_minus_solid
            );
            println!(
                "fluid components={} solid components={} clearance={} corner contacts={}",
                report.fluid_components,
                report.solid_components,
                report.clearance,
                report.corner_contacts
            );
            for w in &report.warnings {
                println!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
