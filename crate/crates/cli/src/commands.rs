//! Subcommand bodies. Each returns the fully resolved configuration for the manifest.

use serde::Serialize;
use spinamo::noise::{self, EnsembleResult, Parity, STAT_COLUMNS};
use spinamo::opensystem::{self, LossRow};
use spinamo::optimizer::{self, AmoResult, StepResult};
use spinamo::schedule::{run_schedule, run_schedule_with};
use spinamo::spectra::{find_critical_q, gap_scan};
use spinamo::{
    polar_state, twin_fock_state, C64, ChainModel, ChainObserver, DriveOptions, PairBasis, PhysicsParams, RunOptions,
    Schedule, Segment, Space, StateVector,
};

use crate::config::{Config, InitialState, NoiseKind, OptimizeMode};
use crate::output::{float, OutDir};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn run_options(cfg: &Config) -> RunOptions {
    RunOptions {
        sample_dt: cfg.propagation.sample_dt,
        drive: DriveOptions {
            dt: cfg.propagation.dt,
            integrator: cfg.propagation.integrator,
        },
        q_offset: 0.0,
    }
}

struct Chain {
    model: ChainModel,
    observer: ChainObserver,
}

impl Chain {
    fn new(cfg: &Config, n: usize) -> Result<Self> {
        let basis = PairBasis::new(n)?;
        Ok(Self {
            model: ChainModel::new(basis, cfg.physics.c2p, cfg.physics.convention),
            observer: ChainObserver::new(basis, cfg.physics.c2p)?,
        })
    }

    fn basis(&self) -> PairBasis {
        self.model.basis
    }

    fn initial(&self, which: InitialState) -> Result<StateVector> {
        let basis = self.basis();
        match which {
            InitialState::Polar => Ok(polar_state(basis)),
            InitialState::TwinFock => Ok(twin_fock_state(basis)?),
            InitialState::Singlet => {
                let v = self.observer.singlet().ok_or_else(|| {
                    CliError::from(spinamo::Error::InvalidArgument("the singlet needs even N".into()))
                })?;
                Ok(StateVector::new(Space::Chain(basis), v.iter().map(|&x| C64::new(x, 0.0)).collect()))
            }
        }
    }
}

/// Ramp from the polar state, then the hold search.
fn search_holds(cfg: &Config, chain: &Chain) -> Result<AmoResult> {
    let post = run_schedule_with(
        &polar_state(chain.basis()),
        &cfg.optimizer.ramp,
        &chain.model,
        run_options(cfg),
        |_, _, _| {},
    )?;
    Ok(optimizer::run_amo(&post, &chain.model, &chain.observer, &cfg.optimizer.search)?)
}

/// The configured schedule, or ramp + optimized holds at `n` atoms.
fn resolve_schedule(cfg: &Config, n: usize) -> Result<Schedule> {
    if let Some(s) = &cfg.schedule {
        return Ok(s.clone());
    }
    let chain = Chain::new(cfg, n)?;
    let amo = search_holds(cfg, &chain)?;
    Ok(cfg.optimizer.ramp.clone().then(&amo.holds))
}

pub fn evolve(mut cfg: Config, out: &OutDir) -> Result<Config> {
    let n = cfg.physics.n_atoms;
    let schedule = resolve_schedule(&cfg, n)?;
    let chain = Chain::new(&cfg, n)?;
    let psi0 = chain.initial(cfg.physics.initial_state)?;
    let (_, records) = run_schedule(&psi0, &schedule, &chain.model, &chain.observer, run_options(&cfg))?;
    out.records("records.csv", &records)?;
    cfg.schedule = Some(schedule);
    Ok(cfg)
}

#[derive(Serialize)]
struct OptimizeSummary<'a> {
    mode: OptimizeMode,
    converged: bool,
    n_holds: usize,
    k_sequence: Vec<usize>,
    total_time: f64,
    final_f_singlet: f64,
    final_f_twinfock: f64,
    steps: &'a [StepResult],
}

pub fn optimize(mut cfg: Config, out: &OutDir) -> Result<Config> {
    let n = cfg.physics.n_atoms;
    let chain = Chain::new(&cfg, n)?;
    let psi0 = polar_state(chain.basis());
    let opts = run_options(&cfg);
    let (schedule, amo) = match cfg.optimizer.mode {
        OptimizeMode::Amo => {
            let amo = search_holds(&cfg, &chain)?;
            (cfg.optimizer.ramp.clone().then(&amo.holds), amo)
        }
        OptimizeMode::Amoa => {
            let (s, _, amo) = optimizer::run_amoa(
                &psi0,
                &cfg.optimizer.ramp,
                cfg.optimizer.plateau,
                &chain.model,
                &chain.observer,
                &cfg.optimizer.search,
                opts,
            )?;
            (s, amo)
        }
    };
    out.json("schedule.json", &schedule)?;

    let mut diag = out.csv("diagnostics.csv", &["step", "q", "K", "t", "score", "kind", "refined"])?;
    for (i, step) in amo.steps.iter().enumerate() {
        for p in &step.diagnostics {
            diag.row(&[
                i.to_string(),
                float(p.q),
                p.k.to_string(),
                float(p.t),
                float(p.score),
                serde_json::to_value(p.kind).unwrap().as_str().unwrap_or("").to_string(),
                step.refined.to_string(),
            ])?;
        }
    }
    diag.finish()?;

    let (_, records) = run_schedule(&psi0, &schedule, &chain.model, &chain.observer, opts)?;
    out.records("records.csv", &records)?;
    let last = records.last().expect("at least one record");
    let mut k_sequence = vec![amo.steps.first().map_or(last.k, |s| s.k_before)];
    k_sequence.extend(amo.steps.iter().filter(|s| s.accepted).map(|s| s.k_star));
    let summary = OptimizeSummary {
        mode: cfg.optimizer.mode,
        converged: amo.converged,
        n_holds: amo.holds.segments.len(),
        k_sequence,
        total_time: schedule.duration(),
        final_f_singlet: last.f_singlet,
        final_f_twinfock: last.f_twinfock,
        steps: &amo.steps,
    };
    out.json("summary.json", &summary)?;
    cfg.schedule = Some(schedule);
    Ok(cfg)
}

fn write_ensemble(out: &OutDir, result: &EnsembleResult) -> Result<()> {
    let mut header = vec!["t".to_string(), "count".to_string()];
    for c in STAT_COLUMNS {
        header.push(c.to_string());
        header.push(format!("{c}_stderr"));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    for parity in [Parity::All, Parity::Even, Parity::Odd] {
        let mut f = out.csv(&format!("noise_{}.csv", parity.name()), &header)?;
        for row in result.rows(parity) {
            let mut fields = vec![float(row.t), row.count.to_string()];
            for j in 0..STAT_COLUMNS.len() {
                fields.push(float(row.mean[j]));
                fields.push(float(row.stderr[j]));
            }
            f.row(&fields)?;
        }
        f.finish()?;
    }
    let mut draws = out.csv("draws.csv", &["index", "n_atoms", "delta_bz", "delta_bx"])?;
    for t in &result.trajectories {
        let d = t.draw;
        draws.row(&[d.index.to_string(), d.n_atoms.to_string(), float(d.delta_bz), float(d.delta_bx)])?;
    }
    draws.finish()
}

pub fn noise(mut cfg: Config, out: &OutDir) -> Result<Config> {
    let n = cfg.physics.n_atoms;
    let schedule = resolve_schedule(&cfg, n)?;
    let setup = noise::EnsembleSetup {
        n_nominal: n,
        c2p: cfg.physics.c2p,
        convention: cfg.physics.convention,
        run: run_options(&cfg),
    };
    let result = match cfg.noise.kind {
        NoiseKind::Dephasing => noise::run_dephasing_ensemble(&schedule, &setup, &cfg.noise.draws)?,
        NoiseKind::Relaxation => noise::run_relaxation_ensemble(&schedule, &setup, &cfg.noise.draws, cfg.noise.mode)?,
    };
    write_ensemble(out, &result)?;
    cfg.schedule = Some(schedule);
    Ok(cfg)
}

/// Leading segments that are not holds: the ramp that precedes the lossy stage.
fn ramp_prefix(schedule: &Schedule) -> usize {
    schedule
        .segments
        .iter()
        .position(|s| matches!(s, Segment::Hold { .. }))
        .unwrap_or(schedule.segments.len())
}

fn write_loss_rows(out: &OutDir, name: &str, rows: &[LossRow], t_offset: f64, n0: f64, gamma: f64) -> Result<()> {
    let header = [
        "t", "count", "n_mean", "n_stderr", "n_expected", "F_singlet", "F_singlet_stderr", "n0", "n0_stderr", "xi2",
        "xi2_stderr",
    ];
    let mut f = out.csv(name, &header)?;
    for r in rows {
        f.row(&[
            float(r.t + t_offset),
            r.count.to_string(),
            float(r.n_mean),
            float(r.n_stderr),
            float(n0 * (-2.0 * gamma * r.t).exp()),
            float(r.f_singlet),
            float(r.f_singlet_stderr),
            float(r.n0),
            float(r.n0_stderr),
            float(r.xi2),
            float(r.xi2_stderr),
        ])?;
    }
    f.finish()
}

#[derive(Serialize)]
struct JumpLog<'a> {
    index: u64,
    n_initial: usize,
    terminated: bool,
    jumps: &'a [opensystem::Jump],
}

#[derive(Serialize)]
struct LossSummary {
    t_loss_start: f64,
    trajectories: usize,
    no_loss_selected: usize,
    no_loss_fraction: f64,
    final_f_singlet: f64,
    final_f_singlet_no_loss: Option<f64>,
    final_n_mean: f64,
}

pub fn loss(mut cfg: Config, out: &OutDir) -> Result<Config> {
    let n = cfg.loss.jumps.n_initial;
    let schedule = resolve_schedule(&cfg, n)?;
    let chain = Chain::new(&cfg, n)?;
    let opts = run_options(&cfg);
    let split = if cfg.loss.lossy_ramp { 0 } else { ramp_prefix(&schedule) };
    let ramp = Schedule::new(schedule.segments[..split].to_vec());
    let lossy = Schedule::new(schedule.segments[split..].to_vec());
    let start = run_schedule_with(&polar_state(chain.basis()), &ramp, &chain.model, opts, |_, _, _| {})?;
    let study = opensystem::run_loss_study(
        &start,
        &lossy,
        cfg.physics.c2p,
        cfg.physics.convention,
        &cfg.loss.jumps,
        &cfg.noise.draws,
        opts,
    )?;
    let t0 = ramp.duration();
    let gamma = cfg.loss.jumps.gamma;
    write_loss_rows(out, "loss.csv", &study.rows, t0, n as f64, gamma)?;
    write_loss_rows(out, "loss_no_jumps.csv", &study.no_loss.rows, t0, n as f64, gamma)?;
    let log: Vec<JumpLog> = study
        .trajectories
        .iter()
        .map(|t| JumpLog {
            index: t.index,
            n_initial: t.n_initial,
            terminated: t.terminated,
            jumps: &t.jumps,
        })
        .collect();
    out.json("jumps.json", &log)?;
    let last = study.rows.last().expect("at least one row");
    out.json(
        "summary.json",
        &LossSummary {
            t_loss_start: t0,
            trajectories: study.trajectories.len(),
            no_loss_selected: study.no_loss.selected,
            no_loss_fraction: study.no_loss.survival_fraction,
            final_f_singlet: last.f_singlet,
            final_f_singlet_no_loss: study.no_loss.rows.last().map(|r| r.f_singlet),
            final_n_mean: last.n_mean,
        },
    )?;
    cfg.schedule = Some(schedule);
    Ok(cfg)
}

pub fn oscillator_demo(cfg: Config, out: &OutDir) -> Result<Config> {
    let o = &cfg.oscillator;
    let run = spinamo::propagate::oscillator_demo(o.mass, o.omega, o.alpha, o.dim, o.samples)?;
    let mut f = out.csv("oscillator.csv", &["t", "mean_x", "mirror_fidelity"])?;
    for i in 0..run.times.len() {
        f.row(&[float(run.times[i]), float(run.mean_x[i]), float(run.mirror_fidelity[i])])?;
    }
    f.finish()?;
    Ok(cfg)
}

pub fn phase_diagram(cfg: Config, out: &OutDir) -> Result<Config> {
    let pd = &cfg.phase_diagram;
    let c2p = cfg.physics.c2p;
    let mut gaps = out.csv("gap.csv", &["N", "q", "scaled_q", "gap"])?;
    let mut crit = out.csv("critical.csv", &["N", "q_min_gap", "q_estimate", "ratio"])?;
    for &n in &pd.n_list {
        let scale = c2p / (n as f64).powi(2);
        let xs: Vec<f64> = (0..pd.points)
            .map(|i| pd.scaled_q_min + (pd.scaled_q_max - pd.scaled_q_min) * i as f64 / (pd.points - 1) as f64)
            .collect();
        let qs: Vec<f64> = xs.iter().map(|x| x * scale).collect();
        let base = PhysicsParams::new(c2p, n, 0.0).with_convention(cfg.physics.convention);
        for ((x, q), g) in xs.iter().zip(&qs).zip(gap_scan(&base, &qs)?) {
            gaps.row(&[n.to_string(), float(*q), float(*x), float(g)])?;
        }
        let q_min = find_critical_q(n, c2p)?;
        let est = spinamo::spectra::critical_q_estimate(n, c2p);
        crit.row(&[n.to_string(), float(q_min), float(est), float(q_min / est)])?;
    }
    gaps.finish()?;
    crit.finish()?;
    Ok(cfg)
}
