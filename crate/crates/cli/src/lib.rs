//! Command-line driver: configuration, orchestration and file output for the
//! `qwalk` pipelines.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Mode, QuenchKind, RunConfig};
pub use error::CliError;
pub use output::{OutputDir, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "qwalk", version, about = "Split-step quantum walk quench experiments")]
pub struct Cli {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true, env = "QWALK_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "QWALK_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "QWALK_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for the parallel kernels.
    #[arg(long, global = true, env = "QWALK_THREADS")]
    pub threads: Option<usize>,
    /// Momentum grid size.
    #[arg(long, global = true, env = "QWALK_GRID")]
    pub grid: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Gap and Berry phase over the (θ₁, θ₂) plane, with boundaries.
    PhaseDiagram,
    /// Per-step phases along the quench schedule.
    Quench {
        /// Overrides a quench mode set in the configuration.
        #[arg(long, value_enum, env = "QWALK_MODE")]
        mode: Option<QuenchKind>,
    },
    /// Excitation density against ramp velocity.
    Scaling,
    /// Simulated counts, likelihood fit and reconstructed phase.
    Tomography,
}

/// Configuration after applying flags, environment and subcommand.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(g) = cli.grid {
        cfg.grid = g;
    }
    cfg.mode = Some(match &cli.command {
        Command::PhaseDiagram => Mode::PhaseDiagram,
        Command::Quench { mode } => {
            let configured = cfg.mode.and_then(|m| m.quench_kind());
            mode.or(configured).unwrap_or(QuenchKind::Ensemble).into()
        }
        Command::Scaling => Mode::Scaling,
        Command::Tomography => Mode::TomographyRoundtrip,
    });
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the configured mode and writes its files, the resolved configuration
/// and the manifest into `cfg.out`.
pub fn execute(cfg: &RunConfig) -> Result<RunManifest, CliError> {
    cfg.validate()?;
    let mode = cfg.mode.ok_or_else(|| CliError::Config("no mode selected".into()))?;
    let run = || -> Result<RunManifest, CliError> {
        let mut out = OutputDir::create(&cfg.out)?;
        out.write_bytes("config.toml", cfg.to_toml().as_bytes())?;
        match mode {
            Mode::PhaseDiagram => {
                commands::phase_diagram(cfg, &mut out)?;
            }
            Mode::Scaling => {
                commands::scaling(cfg, &mut out)?;
            }
            Mode::TomographyRoundtrip => {
                commands::tomography(cfg, &mut out)?;
            }
            m => {
                let kind = m.quench_kind().expect("remaining modes are quenches");
                commands::quench(cfg, kind, &mut out)?;
            }
        }
        out.finish(mode.as_str(), cfg)
    };
    match cfg.threads {
        Some(n) => {
            rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?.install(run)
        }
        None => run(),
    }
}

pub fn run(cli: &Cli) -> Result<RunManifest, CliError> {
    execute(&resolve_config(cli)?)
}
