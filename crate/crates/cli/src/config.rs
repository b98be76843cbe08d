//! Run configuration: one JSON document fully determines one run.

use serde::{Deserialize, Serialize};
use spinamo::opensystem::LossConfig;
use spinamo::noise::NoiseConfig;
use spinamo::operators::UnitConvention;
use spinamo::optimizer::OptimizerConfig;
use spinamo::propagate::{Integrator, RotatingMode};
use spinamo::schedule::Schedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    Polar,
    Singlet,
    TwinFock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    /// Spin-dependent interaction c'₂ in Hz.
    pub c2p: f64,
    pub n_atoms: usize,
    pub convention: UnitConvention,
    pub initial_state: InitialState,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            c2p: 25.0,
            n_atoms: 1000,
            convention: UnitConvention::Angular,
            initial_state: InitialState::Polar,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Propagation {
    pub sample_dt: f64,
    pub integrator: Integrator,
    /// Ramp step in s; `null` uses the integrator default.
    pub dt: Option<f64>,
}

impl Default for Propagation {
    fn default() -> Self {
        Self {
            sample_dt: 1e-3,
            integrator: Integrator::Magnus,
            dt: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeMode {
    #[default]
    Amo,
    Amoa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSection {
    #[serde(flatten)]
    pub search: OptimizerConfig,
    pub mode: OptimizeMode,
    /// Adiabatic stage preceding the search.
    pub ramp: Schedule,
    /// Length of the q = 0 plateau between the two halves of AMOA, in s.
    pub plateau: f64,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        Self {
            search: OptimizerConfig::default(),
            mode: OptimizeMode::Amo,
            ramp: spinamo::schedule::default_adiabatic_ramp(),
            plateau: 0.32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Dephasing,
    Relaxation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    #[serde(flatten)]
    pub draws: NoiseConfig,
    pub kind: NoiseKind,
    pub mode: RotatingMode,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            draws: NoiseConfig::default(),
            kind: NoiseKind::Dephasing,
            mode: RotatingMode::Averaged,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    #[serde(flatten)]
    pub jumps: LossConfig,
    /// Apply loss from t = 0 instead of only after the leading ramp segments.
    pub lossy_ramp: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            jumps: LossConfig::default(),
            lossy_ramp: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OscillatorSection {
    pub mass: f64,
    pub omega: f64,
    pub alpha: f64,
    pub dim: usize,
    pub samples: usize,
}

impl Default for OscillatorSection {
    fn default() -> Self {
        Self {
            mass: 1.0,
            omega: 1.0,
            alpha: 10.0 / 2f64.sqrt(),
            dim: 150,
            samples: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseDiagramSection {
    pub n_list: Vec<usize>,
    /// Scan range in the scaled variable `qN²/c'₂`, so one range fits every N.
    pub scaled_q_min: f64,
    pub scaled_q_max: f64,
    pub points: usize,
}

impl Default for PhaseDiagramSection {
    fn default() -> Self {
        Self {
            n_list: vec![100, 1000],
            scaled_q_min: -20.0,
            scaled_q_max: 40.0,
            points: 601,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Output directory; overridden by `--out`.
    pub dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Seed for every stochastic component; overridden by `--seed`.
    pub seed: u64,
    pub physics: Physics,
    /// Control schedule. For `evolve`, `noise` and `loss` a missing schedule
    /// means "ramp followed by an optimizer search".
    pub schedule: Option<Schedule>,
    pub propagation: Propagation,
    pub optimizer: OptimizeSection,
    pub noise: NoiseSection,
    pub loss: LossSection,
    pub oscillator: OscillatorSection,
    pub phase_diagram: PhaseDiagramSection,
    pub output: OutputSection,
}

/// Config error with the JSON path where it occurred.
#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "at {}: {}", self.path, self.message)
        }
    }
}

pub fn parse(text: &str) -> Result<Config, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| ConfigError {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

impl Config {
    /// Push the top-level seed into every seeded section.
    pub fn propagate_seed(&mut self) {
        self.optimizer.search.seed = self.seed;
        self.noise.draws.seed = self.seed;
        self.loss.jumps.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |path: &str, message: String| ConfigError {
            path: path.to_string(),
            message,
        };
        if !(self.physics.c2p.is_finite() && self.physics.c2p > 0.0) {
            return Err(err("physics.c2p", "must be positive".into()));
        }
        if self.physics.n_atoms == 0 {
            return Err(err("physics.n_atoms", "must be at least 1".into()));
        }
        if !(self.propagation.sample_dt > 0.0) {
            return Err(err("propagation.sample_dt", "must be positive".into()));
        }
        if let Some(dt) = self.propagation.dt {
            if !(dt > 0.0) {
                return Err(err("propagation.dt", "must be positive".into()));
            }
        }
        if let Some(s) = &self.schedule {
            s.validate().map_err(|e| err("schedule", e.to_string()))?;
        }
        self.optimizer.ramp.validate().map_err(|e| err("optimizer.ramp", e.to_string()))?;
        self.optimizer.search.validate().map_err(|e| err("optimizer", e.to_string()))?;
        if !(self.optimizer.plateau >= 0.0) {
            return Err(err("optimizer.plateau", "must be non-negative".into()));
        }
        self.noise.draws.validate().map_err(|e| err("noise", e.to_string()))?;
        self.loss.jumps.validate().map_err(|e| err("loss", e.to_string()))?;
        let pd = &self.phase_diagram;
        if pd.points < 2 || pd.n_list.is_empty() || !(pd.scaled_q_max > pd.scaled_q_min) {
            return Err(err("phase_diagram", "needs at least 2 points, a non-empty range and one N".into()));
        }
        if let Some(i) = pd.n_list.iter().position(|&n| n < 4) {
            return Err(err(&format!("phase_diagram.n_list[{i}]"), "N must be at least 4".into()));
        }
        let osc = &self.oscillator;
        if !(osc.mass > 0.0 && osc.omega > 0.0) || osc.dim < 2 || osc.samples < 1 {
            return Err(err("oscillator", "needs positive mass and omega, dim >= 2, samples >= 1".into()));
        }
        Ok(())
    }
}
