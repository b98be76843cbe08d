//! Quasi-static stray-field and atom-number noise ensembles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{polar_state, FullBasis, PairBasis, StateVector};
use crate::error::{Error, Result};
use crate::observables::{ChainObserver, FullObserver, ObservableRecord};
use crate::operators::{ExtendedParams, FullOperators, PhysicsParams, SparseOp, UnitConvention};
use crate::propagate::{averaged_hamiltonian, chebyshev_expm, ChainModel, RotatingMode};
use crate::schedule::{run_schedule, RunOptions, SampleClock, Schedule, Segment};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Half-width of the uniform δB_z draw, in G.
    pub delta_bz_range: f64,
    /// Half-width of the uniform δB_x draw, in G.
    pub delta_bx_range: f64,
    /// Bias field B_z, in G.
    pub b_z_bias: f64,
    /// Quadratic Zeeman coefficient, in Hz/G².
    pub q_coefficient: f64,
    /// Draw N uniformly from the integers in `[N − √N, N + √N]`.
    pub atom_number_spread: bool,
    pub n_traj: usize,
    pub seed: u64,
    /// Apply the δB_z quadratic shift to q in relaxation runs; otherwise δB_z
    /// enters only through the linear Zeeman term p.
    pub relaxation_q_shift: bool,
    /// Largest |M| kept in relaxation runs.
    pub m_window: usize,
    /// Factor applied to p in exact rotating-frame runs.
    pub exact_p_scale: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            delta_bz_range: 1e-4,
            delta_bx_range: 1e-4,
            b_z_bias: 0.0,
            q_coefficient: 277.0,
            atom_number_spread: true,
            n_traj: 100,
            seed: 0,
            relaxation_q_shift: false,
            m_window: 2,
            exact_p_scale: 0.01,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_bz_range >= 0.0 && self.delta_bx_range >= 0.0) {
            return Err(Error::InvalidArgument("noise ranges must be non-negative".into()));
        }
        if self.n_traj == 0 {
            return Err(Error::InvalidArgument("n_traj must be at least 1".into()));
        }
        if !(self.exact_p_scale > 0.0) {
            return Err(Error::InvalidArgument("exact_p_scale must be positive".into()));
        }
        Ok(())
    }
}

/// One trajectory's quasi-static draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDraw {
    pub index: u64,
    pub delta_bz: f64,
    pub delta_bx: f64,
    pub n_atoms: usize,
}

/// Inclusive integer range `[⌈N − √N⌉, ⌊N + √N⌋]`.
pub fn atom_number_range(n: usize) -> (usize, usize) {
    let r = (n as f64).sqrt();
    let lo = ((n as f64 - r).ceil() as usize).max(1);
    let hi = (n as f64 + r).floor() as usize;
    (lo, hi)
}

/// Independent ChaCha stream per `(seed, index)`, so draws never depend on
/// scheduling order.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn symmetric(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.gen_range(-half_width..=half_width)
    }
}

pub fn sample_trajectory_config(cfg: &NoiseConfig, n_nominal: usize, index: u64) -> TrajectoryDraw {
    let mut rng = trajectory_rng(cfg.seed, index);
    let delta_bz = symmetric(&mut rng, cfg.delta_bz_range);
    let delta_bx = symmetric(&mut rng, cfg.delta_bx_range);
    let n_atoms = if cfg.atom_number_spread {
        let (lo, hi) = atom_number_range(n_nominal);
        rng.gen_range(lo..=hi)
    } else {
        n_nominal
    };
    TrajectoryDraw {
        index,
        delta_bz,
        delta_bx,
        n_atoms,
    }
}

/// Realized `q` when the microwave shift was set for the nominal field:
/// `nominal + coeff·((B_z + δB_z)² − B_z²)`.
pub fn effective_q(nominal_q: f64, delta_bz: f64, cfg: &NoiseConfig) -> f64 {
    nominal_q + q_shift(delta_bz, cfg)
}

pub fn q_shift(delta_bz: f64, cfg: &NoiseConfig) -> f64 {
    cfg.q_coefficient * delta_bz * (2.0 * cfg.b_z_bias + delta_bz)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    All,
    Even,
    Odd,
}

impl Parity {
    pub fn admits(self, n: usize) -> bool {
        match self {
            Parity::All => true,
            Parity::Even => n % 2 == 0,
            Parity::Odd => n % 2 == 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Parity::All => "all",
            Parity::Even => "even",
            Parity::Odd => "odd",
        }
    }
}

/// Columns aggregated over trajectories.
pub const STAT_COLUMNS: [&str; 7] = ["K", "F_singlet", "F_twinfock", "xi2", "pc", "norm", "n_current"];

fn columns(r: &ObservableRecord) -> [f64; 7] {
    [r.k as f64, r.f_singlet, r.f_twinfock, r.xi2, r.pc, r.norm, r.n_current]
}

/// Means and standard errors at one sample time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRow {
    pub t: f64,
    pub count: usize,
    pub mean: [f64; 7],
    pub stderr: [f64; 7],
}

impl EnsembleRow {
    pub fn get(&self, column: &str) -> Option<(f64, f64)> {
        STAT_COLUMNS
            .iter()
            .position(|c| *c == column)
            .map(|i| (self.mean[i], self.stderr[i]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub draw: TrajectoryDraw,
    pub records: Vec<ObservableRecord>,
}

/// Per-time mean and standard error over the trajectories admitted by `parity`,
/// in trajectory-index order.
pub fn aggregate(trajectories: &[Trajectory], parity: Parity) -> Result<Vec<EnsembleRow>> {
    let members: Vec<&Trajectory> = trajectories.iter().filter(|t| parity.admits(t.draw.n_atoms)).collect();
    let Some(first) = members.first() else {
        return Ok(Vec::new());
    };
    let len = first.records.len();
    if members.iter().any(|m| m.records.len() != len) {
        return Err(Error::Numeric("trajectories have different record counts".into()));
    }
    let n = members.len() as f64;
    Ok((0..len)
        .map(|i| {
            let mut sum = [0.0; 7];
            for m in &members {
                for (s, v) in sum.iter_mut().zip(columns(&m.records[i])) {
                    *s += v;
                }
            }
            let mean = sum.map(|s| s / n);
            let mut var = [0.0; 7];
            for m in &members {
                for ((v, x), mu) in var.iter_mut().zip(columns(&m.records[i])).zip(mean) {
                    *v += (x - mu) * (x - mu);
                }
            }
            let stderr = if members.len() > 1 {
                var.map(|v| (v / (n - 1.0) / n).sqrt())
            } else {
                [0.0; 7]
            };
            EnsembleRow {
                t: first.records[i].t,
                count: members.len(),
                mean,
                stderr,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub trajectories: Vec<Trajectory>,
    pub all: Vec<EnsembleRow>,
    pub even: Vec<EnsembleRow>,
    pub odd: Vec<EnsembleRow>,
}

impl EnsembleResult {
    fn from_trajectories(trajectories: Vec<Trajectory>) -> Result<Self> {
        Ok(Self {
            all: aggregate(&trajectories, Parity::All)?,
            even: aggregate(&trajectories, Parity::Even)?,
            odd: aggregate(&trajectories, Parity::Odd)?,
            trajectories,
        })
    }

    pub fn rows(&self, parity: Parity) -> &[EnsembleRow] {
        match parity {
            Parity::All => &self.all,
            Parity::Even => &self.even,
            Parity::Odd => &self.odd,
        }
    }

    pub fn count(&self, parity: Parity) -> usize {
        self.trajectories.iter().filter(|t| parity.admits(t.draw.n_atoms)).count()
    }
}

/// Physics shared by every trajectory of an ensemble.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleSetup {
    pub n_nominal: usize,
    pub c2p: f64,
    pub convention: UnitConvention,
    pub run: RunOptions,
}

/// Replay `schedule` from the polar state for every draw; each trajectory has
/// its own atom number and a constant q shift from δB_z.
pub fn run_dephasing_ensemble(schedule: &Schedule, setup: &EnsembleSetup, cfg: &NoiseConfig) -> Result<EnsembleResult> {
    cfg.validate()?;
    let trajectories = (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let draw = sample_trajectory_config(cfg, setup.n_nominal, i);
            let basis = PairBasis::new(draw.n_atoms)?;
            let model = ChainModel::new(basis, setup.c2p, setup.convention);
            let observer = ChainObserver::new(basis, setup.c2p)?;
            let opts = RunOptions {
                q_offset: setup.run.q_offset + q_shift(draw.delta_bz, cfg),
                ..setup.run
            };
            let (_, records) = run_schedule(&polar_state(basis), schedule, &model, &observer, opts)?;
            Ok(Trajectory { draw, records })
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleResult::from_trajectories(trajectories)
}

/// Hamiltonian for the rotating-frame study in internal units. Exact mode
/// returns the static lab-frame generator: every recorded observable is
/// invariant under rotations about z, so the frame phase never needs applying.
fn relaxation_hamiltonian(ops: &FullOperators, ext: &ExtendedParams, mode: RotatingMode) -> Result<SparseOp> {
    match mode {
        RotatingMode::Averaged => averaged_hamiltonian(ops, ext),
        RotatingMode::ExactScaledP => Ok(ops.hamiltonian(ext)),
    }
}

/// Evolve a full-basis state through `schedule` with static fields `ext`
/// (its `base.q` is ignored; q follows the schedule, shifted by `q_offset`).
pub fn run_schedule_full(
    psi0: &StateVector,
    schedule: &Schedule,
    ops: &FullOperators,
    ext: &ExtendedParams,
    mode: RotatingMode,
    observer: &FullObserver,
    opts: RunOptions,
) -> Result<(StateVector, Vec<ObservableRecord>)> {
    schedule.validate()?;
    if psi0.dim() != ops.basis.len() {
        return Err(Error::DimensionMismatch {
            expected: ops.basis.len(),
            got: psi0.dim(),
        });
    }
    let off = opts.q_offset;
    let h_at = |q: f64| {
        let mut e = *ext;
        e.base.q = q + off;
        relaxation_hamiltonian(ops, &e, mode)
    };
    let mut clock = SampleClock::new(opts.sample_dt)?;
    let mut records = Vec::new();
    let q_first = schedule.segments.first().map_or(0.0, |s| s.q_at(0.0));
    records.push(observer.record(ops, 0.0, q_first + off, psi0)?);
    let mut state = psi0.clone();
    let mut start = 0.0;
    let dq_norm = ext.base.scale() * ops.basis.n_atoms() as f64;
    for seg in &schedule.segments {
        let duration = seg.duration();
        let end = start + duration;
        match *seg {
            Segment::Hold { q, .. } => {
                let h = h_at(q)?;
                let mut now = start;
                for t in clock.take_before(end) {
                    state.amps = chebyshev_expm(&h, &state.amps, t - now);
                    state.normalize();
                    now = t;
                    records.push(observer.record(ops, t, q + off, &state)?);
                }
                state.amps = chebyshev_expm(&h, &state.amps, end - now);
                state.normalize();
            }
            _ => {
                let dt_req = opts.drive.dt.unwrap_or(1e-4);
                let steps = (duration / dt_req - 1e-9).ceil().max(1.0) as usize;
                let dt = duration / steps as f64;
                let rate = seg.max_rate() * dq_norm;
                if rate > 0.0 && dt * dt * rate > 0.1 {
                    return Err(Error::StepSize {
                        dt,
                        limit: (0.1 / rate).sqrt(),
                    });
                }
                for i in 0..steps {
                    let h = h_at(seg.q_at((i as f64 + 0.5) * dt))?;
                    state.amps = chebyshev_expm(&h, &state.amps, dt);
                    state.normalize();
                    let t = start + (i + 1) as f64 * dt;
                    if clock.reached(t, end) {
                        records.push(observer.record(ops, t, seg.q_at(t - start) + off, &state)?);
                    }
                }
            }
        }
        clock.skip_through(end);
        records.push(observer.record(ops, end, seg.q_at(duration) + off, &state)?);
        start = end;
    }
    Ok((state, records))
}

/// Transverse-field ensemble at fixed `N` in a full basis truncated to
/// `|M| ≤ m_window`.
pub fn run_relaxation_ensemble(
    schedule: &Schedule,
    setup: &EnsembleSetup,
    cfg: &NoiseConfig,
    mode: RotatingMode,
) -> Result<EnsembleResult> {
    cfg.validate()?;
    let basis = FullBasis::windowed(setup.n_nominal, cfg.m_window)?;
    let ops = FullOperators::new(basis);
    let observer = FullObserver::new(&ops.basis, setup.c2p)?;
    let chain = PairBasis::new(setup.n_nominal)?;
    let psi0 = polar_state(chain).to_full(&ops.basis)?;
    let base = PhysicsParams::new(setup.c2p, setup.n_nominal, 0.0).with_convention(setup.convention);
    let trajectories = (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut draw = sample_trajectory_config(cfg, setup.n_nominal, i);
            draw.n_atoms = setup.n_nominal;
            let mut ext = ExtendedParams::from_fields(base, cfg.b_z_bias, draw.delta_bz, draw.delta_bx);
            if mode == RotatingMode::ExactScaledP {
                ext.p *= cfg.exact_p_scale;
            }
            let shift = if cfg.relaxation_q_shift { q_shift(draw.delta_bz, cfg) } else { 0.0 };
            let opts = RunOptions {
                q_offset: setup.run.q_offset + shift,
                ..setup.run
            };
            let (_, records) = run_schedule_full(&psi0, schedule, &ops, &ext, mode, &observer, opts)?;
            Ok(Trajectory { draw, records })
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleResult::from_trajectories(trajectories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::adiabatic_ramp;

    #[test]
    fn zero_ranges_give_zero_draws() {
        let cfg = NoiseConfig {
            delta_bz_range: 0.0,
            delta_bx_range: 0.0,
            atom_number_spread: false,
            ..Default::default()
        };
        let d = sample_trajectory_config(&cfg, 100, 7);
        assert_eq!((d.delta_bz, d.delta_bx, d.n_atoms), (0.0, 0.0, 100));
    }

    #[test]
    fn draws_are_reproducible_and_in_range() {
        let cfg = NoiseConfig { seed: 42, ..Default::default() };
        assert_eq!(sample_trajectory_config(&cfg, 1000, 3), sample_trajectory_config(&cfg, 1000, 3));
        assert_ne!(sample_trajectory_config(&cfg, 1000, 3), sample_trajectory_config(&cfg, 1000, 4));
        let (lo, hi) = atom_number_range(1000);
        assert_eq!((lo, hi), (969, 1031));
        for i in 0..500 {
            let d = sample_trajectory_config(&cfg, 1000, i);
            assert!(d.delta_bz.abs() <= 1e-4 && d.delta_bx.abs() <= 1e-4);
            assert!((lo..=hi).contains(&d.n_atoms));
        }
    }

    #[test]
    fn mean_of_draws() {
        let cfg = NoiseConfig { seed: 9, ..Default::default() };
        let n = 10_000;
        let mean: f64 = (0..n).map(|i| sample_trajectory_config(&cfg, 100, i).delta_bz).sum::<f64>() / n as f64;
        let sigma = 1e-4 / (3.0 * n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn effective_q_shifts() {
        let cfg = NoiseConfig::default();
        assert_eq!(effective_q(0.3, 0.0, &cfg), 0.3);
        assert!((q_shift(1e-4, &cfg) / 2.77e-6 - 1.0).abs() < 1e-12);
        let biased = NoiseConfig { b_z_bias: 0.85, ..cfg };
        let exact = 277.0 * ((0.85f64 + 1e-4).powi(2) - 0.85f64.powi(2));
        assert!((q_shift(1e-4, &biased) - exact).abs() < 1e-12);
        assert!((exact - 2.0 * 277.0 * 0.85 * 1e-4).abs() < 1e-5);
        assert!((exact - 0.0471).abs() < 1e-4);
    }

    fn short_schedule() -> Schedule {
        adiabatic_ramp(20.0, 0.12, 0.1).then(&Schedule::new(vec![Segment::Hold { q: 0.2, duration: 0.05 }]))
    }

    fn setup(n: usize) -> EnsembleSetup {
        EnsembleSetup {
            n_nominal: n,
            c2p: 25.0,
            convention: UnitConvention::Angular,
            run: RunOptions::default(),
        }
    }

    #[test]
    fn single_noiseless_trajectory_is_deterministic_run() {
        let cfg = NoiseConfig {
            delta_bz_range: 0.0,
            delta_bx_range: 0.0,
            atom_number_spread: false,
            n_traj: 1,
            ..Default::default()
        };
        let s = short_schedule();
        let ens = run_dephasing_ensemble(&s, &setup(30), &cfg).unwrap();
        let b = PairBasis::new(30).unwrap();
        let model = ChainModel::new(b, 25.0, UnitConvention::Angular);
        let obs = ChainObserver::new(b, 25.0).unwrap();
        let (_, rec) = run_schedule(&polar_state(b), &s, &model, &obs, RunOptions::default()).unwrap();
        assert_eq!(ens.trajectories[0].records, rec);
        assert_eq!(ens.count(Parity::Even) + ens.count(Parity::Odd), 1);
        assert!(ens.all.iter().zip(&rec).all(|(a, r)| a.mean[3] == r.xi2));
    }

    #[test]
    fn parity_split_is_exhaustive() {
        let cfg = NoiseConfig { n_traj: 12, seed: 5, ..Default::default() };
        let ens = run_dephasing_ensemble(&short_schedule(), &setup(36), &cfg).unwrap();
        assert_eq!(ens.count(Parity::Even) + ens.count(Parity::Odd), 12);
        assert_eq!(ens.all[0].count, 12);
    }

    #[test]
    fn no_transverse_field_matches_chain() {
        let cfg = NoiseConfig {
            delta_bx_range: 0.0,
            b_z_bias: 0.85,
            relaxation_q_shift: true,
            atom_number_spread: false,
            n_traj: 3,
            seed: 11,
            ..Default::default()
        };
        let s = short_schedule();
        let relax = run_relaxation_ensemble(&s, &setup(16), &cfg, RotatingMode::Averaged).unwrap();
        let deph = run_dephasing_ensemble(&s, &setup(16), &cfg).unwrap();
        for (a, b) in relax.all.iter().zip(&deph.all) {
            assert_eq!(a.t, b.t);
            for c in [1, 3, 4] {
                assert!((a.mean[c] - b.mean[c]).abs() < 1e-9, "t={} col {c}: {} vs {}", a.t, a.mean[c], b.mean[c]);
            }
        }
    }

    #[test]
    fn window_convergence_in_exact_mode() {
        let run = |w: usize| {
            let cfg = NoiseConfig {
                atom_number_spread: false,
                b_z_bias: 0.85,
                n_traj: 1,
                seed: 2,
                m_window: w,
                ..Default::default()
            };
            run_relaxation_ensemble(&short_schedule(), &setup(12), &cfg, RotatingMode::ExactScaledP).unwrap()
        };
        let a = run(2);
        let b = run(4);
        let fa = a.all.last().unwrap().mean[1];
        let fb = b.all.last().unwrap().mean[1];
        assert!((fa - fb).abs() < 1e-8, "{fa} {fb}");
    }
}
