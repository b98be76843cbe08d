//! `spinamo`: batch front end for singlet and twin-Fock preparation runs.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use spinamo::operators::UnitConvention;

#[derive(Parser)]
#[command(name = "spinamo", version, about = "Spin-1 condensate state preparation by multilevel oscillations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`; not recorded in the manifest).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for all stochastic parts (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Unit convention: `angular` multiplies H by 2π, `plain` does not.
    #[arg(long, global = true)]
    convention: Option<UnitConvention>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run a fixed schedule and write observables along it.
    Evolve,
    /// Search for the hold sequence (AMO) or its mirrored extension (AMOA).
    Optimize,
    /// Quasi-static field and atom-number noise ensemble.
    Noise,
    /// Single-body loss by quantum-jump trajectories.
    Loss,
    /// Displaced harmonic oscillator half-period mirror.
    OscillatorDemo,
    /// Ground-state gap versus q for a list of N.
    PhaseDiagram,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Optimize => "optimize",
            Command::Noise => "noise",
            Command::Loss => "loss",
            Command::OscillatorDemo => "oscillator-demo",
            Command::PhaseDiagram => "phase-diagram",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(config::ConfigError),
    Io { path: String, message: String },
    Numeric(String),
    Resource(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn csv(path: &Path, e: csv::Error) -> Self {
        Self::io(path, e)
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Numeric(_) => 3,
            CliError::Resource(_) => 4,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Config(e) => json!({"error": "config", "path": e.path, "message": e.message}),
            CliError::Io { path, message } => json!({"error": "io", "path": path, "message": message}),
            CliError::Numeric(m) => json!({"error": "numeric", "message": m}),
            CliError::Resource(m) => json!({"error": "resource_cap", "message": m}),
        }
    }
}

impl From<spinamo::Error> for CliError {
    fn from(e: spinamo::Error) -> Self {
        match e {
            spinamo::Error::ResourceCap { .. } => CliError::Resource(e.to_string()),
            spinamo::Error::InvalidArgument(_) => CliError::Config(config::ConfigError {
                path: String::new(),
                message: e.to_string(),
            }),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn load_config(cli: &Cli) -> Result<config::Config, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(config::ConfigError {
                    path: String::new(),
                    message: format!("cannot read {}: {e}", path.display()),
                })
            })?;
            config::parse(&text)?
        }
        None => config::Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(c) = cli.convention {
        cfg.physics.convention = c;
    }
    cfg.propagate_seed();
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let started = std::time::Instant::now();
    let cfg = load_config(cli)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config(config::ConfigError {
                path: "--threads".into(),
                message: "must be at least 1".into(),
            }));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Numeric(e.to_string()))?;
    }
    let dir = match (&cli.out, &cfg.output.dir) {
        (Some(out), _) => out.clone(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => PathBuf::from("out"),
    };
    let out = output::OutDir::create(&dir)?;
    let resolved = match cli.command {
        Command::Evolve => commands::evolve(cfg, &out)?,
        Command::Optimize => commands::optimize(cfg, &out)?,
        Command::Noise => commands::noise(cfg, &out)?,
        Command::Loss => commands::loss(cfg, &out)?,
        Command::OscillatorDemo => commands::oscillator_demo(cfg, &out)?,
        Command::PhaseDiagram => commands::phase_diagram(cfg, &out)?,
    };
    let manifest = output::Manifest {
        command: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: resolved.seed,
        convention: resolved.physics.convention.name(),
        config: &resolved,
        runtime: output::Runtime {
            wall_clock_s: started.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        },
    };
    out.json("manifest.json", &manifest)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
