//! One-body atom loss: quantum-jump trajectories in `(N, M)` chain sectors and
//! a dense master-equation oracle for small `N`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{FullBasis, Occupation, PairBasis, Space, StateVector};
use crate::error::{Error, Result};
use crate::noise::{q_shift, sample_trajectory_config, trajectory_rng, NoiseConfig};
use crate::observables::{ChainObserver, ObservableRecord};
use crate::operators::{hamiltonian_chain, FullOperators, HermitianOp, SparseOp, TriMatrix, UnitConvention};
use crate::propagate::{chebyshev_expm, SpectralPropagator};
use crate::schedule::{RunOptions, SampleClock, Schedule, Segment};

/// Largest initial `N` accepted by the dense oracle.
pub const DENSE_MAX_ATOMS: usize = 8;
/// Largest initial `N` accepted by the trajectory study.
pub const LOSS_MAX_ATOMS: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// One-body loss rate Γ in s⁻¹; the total jump rate is 2ΓN.
    pub gamma: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// Atom number at the start of the lossy stage.
    pub n_initial: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 0.005,
            n_traj: 2000,
            seed: 0,
            n_initial: 100,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument("gamma must be non-negative".into()));
        }
        if self.n_traj == 0 {
            return Err(Error::InvalidArgument("n_traj must be at least 1".into()));
        }
        Ok(())
    }
}

/// Physics of the lossy evolution. The pair coupling `c'₂/N₀` is fixed by the
/// initial atom number and does not change as atoms leave.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossModel {
    pub c2p: f64,
    pub n_reference: usize,
    pub convention: UnitConvention,
    pub gamma: f64,
}

impl LossModel {
    fn pair_coupling(&self) -> f64 {
        self.c2p / self.n_reference as f64
    }

    pub fn chain_hamiltonian(&self, basis: PairBasis, q: f64) -> TriMatrix {
        let c_eff = self.pair_coupling() * basis.n_atoms() as f64;
        hamiltonian_chain(basis, c_eff, q, self.convention)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub t: f64,
    /// Zeeman component of the lost atom.
    pub channel: i8,
    pub n_after: usize,
    pub m_after: i64,
}

/// Per-sample record plus the raw moments needed for ensemble squeezing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    pub record: ObservableRecord,
    pub l2: f64,
    pub magnetization: f64,
    pub n0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTrajectory {
    pub index: u64,
    pub n_initial: usize,
    pub jumps: Vec<Jump>,
    /// All atoms were lost before the schedule ended.
    pub terminated: bool,
    pub samples: Vec<LossSample>,
    #[serde(skip)]
    pub final_state: Option<StateVector>,
}

impl LossTrajectory {
    pub fn final_n(&self) -> usize {
        self.n_initial - self.jumps.len()
    }
}

/// Reference observers keyed by sector, shared between trajectories.
#[derive(Default)]
pub struct ObserverCache {
    c2p: f64,
    map: Mutex<HashMap<(usize, i64), Arc<ChainObserver>>>,
}

impl ObserverCache {
    pub fn new(c2p: f64) -> Self {
        Self {
            c2p,
            map: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, basis: PairBasis) -> Result<Arc<ChainObserver>> {
        let key = (basis.n_atoms(), basis.magnetization());
        if let Some(o) = self.map.lock().expect("cache lock").get(&key) {
            return Ok(o.clone());
        }
        let o = Arc::new(ChainObserver::new(basis, self.c2p)?);
        Ok(self.map.lock().expect("cache lock").entry(key).or_insert(o).clone())
    }
}

/// `⟨n_m⟩/N` for `m = −1, 0, +1`.
pub fn channel_probabilities(psi: &StateVector) -> Result<[f64; 3]> {
    let basis = chain_basis(psi)?;
    let n = basis.n_atoms() as f64;
    let nrm = psi.norm_sqr();
    let mut p = [0.0; 3];
    for (k, a) in psi.amps.iter().enumerate() {
        let o = basis.occupation(k);
        let w = a.norm_sqr() / nrm;
        p[0] += w * o.minus as f64;
        p[1] += w * o.zero as f64;
        p[2] += w * o.plus as f64;
    }
    Ok(p.map(|x| x / n))
}

fn chain_basis(psi: &StateVector) -> Result<PairBasis> {
    psi.pair_basis()
        .ok_or_else(|| Error::InvalidArgument("loss trajectories need a chain-sector state".into()))
}

/// Apply `a_m` and move to sector `(N − 1, M − m)`; the result is unnormalized.
pub fn apply_annihilation(psi: &StateVector, channel: i8) -> Result<StateVector> {
    let basis = chain_basis(psi)?;
    if basis.n_atoms() == 1 {
        return Err(Error::InvalidArgument("cannot remove the last atom into a chain sector".into()));
    }
    let target = PairBasis::with_magnetization(basis.n_atoms() - 1, basis.magnetization() - channel as i64)?;
    let mut out = vec![C64::new(0.0, 0.0); target.size()];
    for (k, a) in psi.amps.iter().enumerate() {
        let o = basis.occupation(k);
        let (count, lowered) = match channel {
            -1 => (o.minus, o.minus.checked_sub(1).map(|m| Occupation { minus: m, ..o })),
            0 => (o.zero, o.zero.checked_sub(1).map(|z| Occupation { zero: z, ..o })),
            1 => (o.plus, o.plus.checked_sub(1).map(|p| Occupation { plus: p, ..o })),
            _ => return Err(Error::InvalidArgument(format!("invalid channel {channel}"))),
        };
        if let Some(lo) = lowered {
            let j = target
                .index_of(lo)
                .ok_or_else(|| Error::Numeric("annihilated configuration outside target sector".into()))?;
            out[j] += a * (count as f64).sqrt();
        }
    }
    Ok(StateVector::new(Space::Chain(target), out))
}

struct Sector {
    n: usize,
    psi: StateVector,
}

fn sample(observer: &ChainObserver, t: f64, q: f64, s: &Sector) -> LossSample {
    if s.n == 0 {
        return LossSample {
            record: ObservableRecord {
                t,
                q,
                k: 0,
                f_singlet: 0.0,
                f_twinfock: 0.0,
                xi2: 0.0,
                pc: 0.0,
                norm: 1.0,
                n_current: 0.0,
            },
            l2: 0.0,
            magnetization: 0.0,
            n0: 0.0,
        };
    }
    let record = observer.record(t, q, &s.psi.amps);
    LossSample {
        record,
        l2: observer.l2_expectation(&s.psi.amps),
        magnetization: observer.basis.magnetization() as f64,
        n0: observer.n0_expectation(&s.psi.amps),
    }
}

fn draw_wait(rng: &mut ChaCha20Rng, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let u: f64 = rng.gen::<f64>();
    -(1.0 - u).ln() / rate
}

/// One quantum-jump unraveling of the loss master equation along `schedule`.
pub fn gillespie_trajectory(
    psi0: &StateVector,
    schedule: &Schedule,
    model: &LossModel,
    cache: &ObserverCache,
    opts: RunOptions,
    rng: &mut ChaCha20Rng,
    index: u64,
) -> Result<LossTrajectory> {
    schedule.validate()?;
    let basis0 = chain_basis(psi0)?;
    let mut sec = Sector {
        n: basis0.n_atoms(),
        psi: psi0.clone(),
    };
    sec.psi.normalize();
    let off = opts.q_offset;
    let mut clock = SampleClock::new(opts.sample_dt)?;
    let mut samples = Vec::new();
    let mut jumps = Vec::new();
    let mut observer = cache.get(basis0)?;
    let q_first = schedule.segments.first().map_or(0.0, |s| s.q_at(0.0)) + off;
    samples.push(sample(&observer, 0.0, q_first, &sec));
    let mut start = 0.0;
    let mut terminated = false;

    let jump = |sec: &mut Sector, t: f64, rng: &mut ChaCha20Rng, jumps: &mut Vec<Jump>| -> Result<()> {
        let p = channel_probabilities(&sec.psi)?;
        let u: f64 = rng.gen::<f64>();
        let channel: i8 = if u < p[0] {
            -1
        } else if u < p[0] + p[1] {
            0
        } else {
            1
        };
        let m_after = sec.psi.pair_basis().unwrap().magnetization() - channel as i64;
        sec.n -= 1;
        if sec.n > 0 {
            sec.psi = apply_annihilation(&sec.psi, channel)?;
            sec.psi.normalize();
        }
        jumps.push(Jump {
            t,
            channel,
            n_after: sec.n,
            m_after,
        });
        Ok(())
    };

    for seg in &schedule.segments {
        let duration = seg.duration();
        let end = start + duration;
        let mut now = start;
        match *seg {
            Segment::Hold { q, .. } => {
                let q = q + off;
                while now < end {
                    let rate = 2.0 * model.gamma * sec.n as f64;
                    let t_jump = now + draw_wait(rng, rate);
                    let stop = t_jump.min(end);
                    if sec.n > 0 {
                        let b = sec.psi.pair_basis().unwrap();
                        let prop = SpectralPropagator::new(&model.chain_hamiltonian(b, q))?;
                        let c = prop.coefficients(&sec.psi.amps);
                        for t in clock.take_before(stop) {
                            let s = Sector {
                                n: sec.n,
                                psi: StateVector::new(sec.psi.space, prop.reconstruct(&c, t - now)),
                            };
                            samples.push(sample(&observer, t, q, &s));
                        }
                        sec.psi.amps = prop.reconstruct(&c, stop - now);
                        sec.psi.normalize();
                    } else {
                        for t in clock.take_before(end) {
                            samples.push(sample(&observer, t, q, &sec));
                        }
                    }
                    now = stop;
                    if t_jump < end && sec.n > 0 {
                        jump(&mut sec, t_jump, rng, &mut jumps)?;
                        if sec.n == 0 {
                            terminated = true;
                        } else {
                            observer = cache.get(sec.psi.pair_basis().unwrap())?;
                        }
                    }
                }
            }
            _ => {
                let dt_req = opts.drive.dt.unwrap_or(1e-4);
                let steps = (duration / dt_req - 1e-9).ceil().max(1.0) as usize;
                let dt = duration / steps as f64;
                let mut t_jump = now + draw_wait(rng, 2.0 * model.gamma * sec.n as f64);
                for i in 0..steps {
                    let ta = start + i as f64 * dt;
                    let tb = start + (i + 1) as f64 * dt;
                    let q_mid = seg.q_at((i as f64 + 0.5) * dt) + off;
                    let mut t = ta;
                    while sec.n > 0 && t_jump < tb {
                        let h = model.chain_hamiltonian(sec.psi.pair_basis().unwrap(), q_mid);
                        sec.psi.amps = chebyshev_expm(&h, &sec.psi.amps, t_jump - t);
                        sec.psi.normalize();
                        t = t_jump;
                        jump(&mut sec, t_jump, rng, &mut jumps)?;
                        if sec.n == 0 {
                            terminated = true;
                        } else {
                            observer = cache.get(sec.psi.pair_basis().unwrap())?;
                        }
                        t_jump = t + draw_wait(rng, 2.0 * model.gamma * sec.n as f64);
                    }
                    if sec.n > 0 {
                        let h = model.chain_hamiltonian(sec.psi.pair_basis().unwrap(), q_mid);
                        sec.psi.amps = chebyshev_expm(&h, &sec.psi.amps, tb - t);
                        sec.psi.normalize();
                    }
                    if clock.reached(tb, end) {
                        samples.push(sample(&observer, tb, seg.q_at(tb - start) + off, &sec));
                    }
                }
            }
        }
        clock.skip_through(end);
        samples.push(sample(&observer, end, seg.q_at(duration) + off, &sec));
        start = end;
    }
    Ok(LossTrajectory {
        index,
        n_initial: basis0.n_atoms(),
        jumps,
        terminated,
        samples,
        final_state: (sec.n > 0).then_some(sec.psi),
    })
}

/// Ensemble statistics at one sample time. `xi2` uses ensemble-averaged
/// moments normalized by the ensemble-mean atom number; its error is a
/// jackknife estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub t: f64,
    pub count: usize,
    pub n_mean: f64,
    pub n_stderr: f64,
    pub f_singlet: f64,
    pub f_singlet_stderr: f64,
    pub n0: f64,
    pub n0_stderr: f64,
    pub xi2: f64,
    pub xi2_stderr: f64,
}

fn mean_stderr(xs: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn ensemble_xi2(l2: f64, m: f64, n: f64) -> f64 {
    if n > 0.0 {
        ((l2 - m * m) / n).max(0.0)
    } else {
        0.0
    }
}

pub fn aggregate_loss(trajectories: &[&LossTrajectory]) -> Result<Vec<LossRow>> {
    let Some(first) = trajectories.first() else {
        return Ok(Vec::new());
    };
    let len = first.samples.len();
    if trajectories.iter().any(|t| t.samples.len() != len) {
        return Err(Error::Numeric("trajectories have different sample counts".into()));
    }
    let n = trajectories.len() as f64;
    Ok((0..len)
        .map(|i| {
            let s = trajectories.iter().map(move |t| t.samples[i]);
            let (n_mean, n_stderr) = mean_stderr(s.clone().map(|x| x.record.n_current), n);
            let (f, f_err) = mean_stderr(s.clone().map(|x| x.record.f_singlet), n);
            let (n0, n0_err) = mean_stderr(s.clone().map(|x| x.n0), n);
            let sum_l2: f64 = s.clone().map(|x| x.l2).sum();
            let sum_m: f64 = s.clone().map(|x| x.magnetization).sum();
            let sum_n: f64 = s.clone().map(|x| x.record.n_current).sum();
            let xi2 = ensemble_xi2(sum_l2 / n, sum_m / n, sum_n / n);
            let xi2_stderr = if n > 1.0 {
                let loo: Vec<f64> = s
                    .clone()
                    .map(|x| {
                        let k = n - 1.0;
                        ensemble_xi2((sum_l2 - x.l2) / k, (sum_m - x.magnetization) / k, (sum_n - x.record.n_current) / k)
                    })
                    .collect();
                let mu = loo.iter().sum::<f64>() / n;
                ((n - 1.0) / n * loo.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>()).sqrt()
            } else {
                0.0
            };
            LossRow {
                t: first.samples[i].record.t,
                count: trajectories.len(),
                n_mean,
                n_stderr,
                f_singlet: f,
                f_singlet_stderr: f_err,
                n0,
                n0_stderr: n0_err,
                xi2,
                xi2_stderr,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: usize,
    pub total: usize,
    pub survival_fraction: f64,
    /// Empty when no trajectory passed the predicate.
    pub rows: Vec<LossRow>,
}

impl Selection {
    pub fn is_empty(&self) -> bool {
        self.selected == 0
    }
}

pub fn postselect(trajectories: &[LossTrajectory], predicate: impl Fn(&LossTrajectory) -> bool) -> Result<Selection> {
    let chosen: Vec<&LossTrajectory> = trajectories.iter().filter(|t| predicate(t)).collect();
    Ok(Selection {
        selected: chosen.len(),
        total: trajectories.len(),
        survival_fraction: chosen.len() as f64 / trajectories.len().max(1) as f64,
        rows: aggregate_loss(&chosen)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossStudy {
    pub trajectories: Vec<LossTrajectory>,
    pub rows: Vec<LossRow>,
    /// Trajectories that lost no atoms.
    pub no_loss: Selection,
}

/// Quantum-jump ensemble along `schedule` starting from `psi0`, with one
/// quasi-static δB_z draw per trajectory from `noise` (atom-number spread is
/// not applied: the initial N is fixed by `psi0`).
pub fn run_loss_study(
    psi0: &StateVector,
    schedule: &Schedule,
    c2p: f64,
    convention: UnitConvention,
    loss: &LossConfig,
    noise: &NoiseConfig,
    opts: RunOptions,
) -> Result<LossStudy> {
    loss.validate()?;
    let basis = chain_basis(psi0)?;
    if basis.n_atoms() > LOSS_MAX_ATOMS {
        return Err(Error::ResourceCap {
            what: "loss-study atom number",
            value: basis.n_atoms(),
            cap: LOSS_MAX_ATOMS,
        });
    }
    let model = LossModel {
        c2p,
        n_reference: basis.n_atoms(),
        convention,
        gamma: loss.gamma,
    };
    let cache = ObserverCache::new(c2p);
    let trajectories = (0..loss.n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let draw = sample_trajectory_config(noise, basis.n_atoms(), i);
            let mut rng = trajectory_rng(loss.seed, i);
            let run = RunOptions {
                q_offset: opts.q_offset + q_shift(draw.delta_bz, noise),
                ..opts
            };
            gillespie_trajectory(psi0, schedule, &model, &cache, run, &mut rng, i)
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&LossTrajectory> = trajectories.iter().collect();
    let rows = aggregate_loss(&all)?;
    let no_loss = postselect(&trajectories, |t| t.jumps.is_empty())?;
    Ok(LossStudy {
        trajectories,
        rows,
        no_loss,
    })
}

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

impl Dense {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    fn from_sparse(op: &SparseOp) -> Self {
        let d = op.dim();
        let mut m = Self::zeros(d, d);
        for (r, c, v) in op.triplets() {
            m.data[r * d + c] += v;
        }
        m
    }

    pub fn at(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.cols + c]
    }

    fn mul(&self, other: &Dense) -> Dense {
        let mut out = Dense::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out.data[i * other.cols..(i + 1) * other.cols].iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    fn adjoint(&self) -> Dense {
        let mut out = Dense::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j].conj();
            }
        }
        out
    }

    fn axpy(&mut self, a: C64, x: &Dense) {
        for (y, v) in self.data.iter_mut().zip(&x.data) {
            *y += a * v;
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows).map(|i| self.at(i, i)).sum()
    }

    /// `Tr(self · op)` for an operator of the same dimension.
    fn trace_with(&self, op: &SparseOp) -> C64 {
        op.triplets().map(|(r, c, v)| self.at(c, r) * v).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let mut e = 0.0f64;
        for i in 0..self.rows {
            for j in 0..self.cols {
                e = e.max((self.at(i, j) - self.at(j, i).conj()).norm());
            }
        }
        e
    }

    /// Cholesky of `self + shift·I`; succeeds iff the shifted matrix is
    /// positive definite (for Hermitian input).
    pub fn is_positive_with_shift(&self, shift: f64) -> bool {
        let n = self.rows;
        let mut l = vec![C64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let mut d = self.at(j, j).re + shift;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if d <= 0.0 {
                return false;
            }
            let d = d.sqrt();
            l[j * n + j] = C64::new(d, 0.0);
            for i in j + 1..n {
                let mut s = self.at(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / d;
            }
        }
        true
    }
}

/// Operators of one fixed-N block of the oracle.
struct Block {
    n: usize,
    ops: Option<FullOperators>,
    singlet: Option<Vec<C64>>,
    /// `a_m` from block `n + 1` into this block, for `m = −1, 0, +1`.
    lowering: Vec<Dense>,
}

fn lowering_matrix(from: &FullBasis, to_len: usize, to: Option<&FullBasis>, channel: i8) -> Dense {
    let mut m = Dense::zeros(to_len, from.len());
    for (c, o) in from.states().iter().enumerate() {
        let (count, lowered) = match channel {
            -1 => (o.minus, o.minus.checked_sub(1).map(|x| Occupation { minus: x, ..*o })),
            0 => (o.zero, o.zero.checked_sub(1).map(|x| Occupation { zero: x, ..*o })),
            _ => (o.plus, o.plus.checked_sub(1).map(|x| Occupation { plus: x, ..*o })),
        };
        if let Some(lo) = lowered {
            let r = match to {
                Some(b) => b.index_of(lo).expect("lowered state in basis"),
                None => 0,
            };
            m.data[r * from.len() + c] += C64::new((count as f64).sqrt(), 0.0);
        }
    }
    m
}

/// Density matrix as a direct sum of fixed-N blocks `N' = 0..=N₀`; loss never
/// creates coherences between different atom numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDensity {
    pub blocks: Vec<Dense>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseRecord {
    pub t: f64,
    pub trace: f64,
    pub n_mean: f64,
    pub n0: f64,
    pub xi2: f64,
    pub f_singlet: f64,
}

pub struct DenseLindblad {
    blocks: Vec<Block>,
    model: LossModel,
}

impl DenseLindblad {
    pub fn new(n0: usize, model: LossModel) -> Result<Self> {
        if n0 > DENSE_MAX_ATOMS {
            return Err(Error::ResourceCap {
                what: "dense oracle atom number",
                value: n0,
                cap: DENSE_MAX_ATOMS,
            });
        }
        let bases: Vec<Option<FullBasis>> = (0..=n0).map(|n| (n > 0).then(|| FullBasis::new(n).expect("small basis"))).collect();
        let mut blocks = Vec::new();
        for n in 0..=n0 {
            let ops = bases[n].clone().map(FullOperators::new);
            let singlet = match &bases[n] {
                Some(b) if n % 2 == 0 => {
                    let chain = PairBasis::new(n)?;
                    let obs = ChainObserver::new(chain, model.c2p)?;
                    let s = StateVector::new(
                        Space::Chain(chain),
                        obs.reference.vector(0).iter().map(|&x| C64::new(x, 0.0)).collect(),
                    );
                    Some(s.to_full(b)?.amps)
                }
                _ => None,
            };
            let lowering = if n < n0 {
                let from = bases[n + 1].as_ref().unwrap();
                let to_len = bases[n].as_ref().map_or(1, |b| b.len());
                [-1i8, 0, 1]
                    .iter()
                    .map(|&m| lowering_matrix(from, to_len, bases[n].as_ref(), m))
                    .collect()
            } else {
                Vec::new()
            };
            blocks.push(Block { n, ops, singlet, lowering });
        }
        Ok(Self { blocks, model })
    }

    fn block_len(&self, n: usize) -> usize {
        self.blocks[n].ops.as_ref().map_or(1, |o| o.basis.len())
    }

    /// Pure chain state of the top block as a block density.
    pub fn pure_state(&self, psi: &StateVector) -> Result<BlockDensity> {
        let top = self.blocks.len() - 1;
        let ops = self.blocks[top]
            .ops
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("oracle needs N₀ ≥ 1".into()))?;
        let mut v = psi.to_full(&ops.basis)?;
        v.normalize();
        let mut blocks: Vec<Dense> = (0..=top).map(|n| Dense::zeros(self.block_len(n), self.block_len(n))).collect();
        let d = v.dim();
        for i in 0..d {
            for j in 0..d {
                blocks[top].data[i * d + j] = v.amps[i] * v.amps[j].conj();
            }
        }
        Ok(BlockDensity { blocks })
    }

    fn hamiltonians(&self, q: f64) -> Vec<Option<Dense>> {
        let s = self.model.convention.scale();
        let c = self.model.pair_coupling();
        self.blocks
            .iter()
            .map(|b| {
                b.ops.as_ref().map(|o| {
                    Dense::from_sparse(&SparseOp::linear_combination(&[
                        (C64::new(s * c, 0.0), &o.l2),
                        (C64::new(-s * q, 0.0), &o.n0),
                    ]))
                })
            })
            .collect()
    }

    fn derivative(&self, h: &[Option<Dense>], rho: &BlockDensity) -> BlockDensity {
        let g = self.model.gamma;
        let top = self.blocks.len() - 1;
        let mut out = Vec::with_capacity(rho.blocks.len());
        for (n, r) in rho.blocks.iter().enumerate() {
            let mut d = Dense::zeros(r.rows, r.cols);
            if let Some(hn) = &h[n] {
                let hr = hn.mul(r);
                let rh = r.mul(hn);
                d.axpy(C64::new(0.0, -1.0), &hr);
                d.axpy(C64::new(0.0, 1.0), &rh);
            }
            d.axpy(C64::new(-2.0 * g * n as f64, 0.0), r);
            if n < top {
                let above = &rho.blocks[n + 1];
                for a in &self.blocks[n].lowering {
                    let t = a.mul(above).mul(&a.adjoint());
                    d.axpy(C64::new(2.0 * g, 0.0), &t);
                }
            }
            out.push(d);
        }
        BlockDensity { blocks: out }
    }

    fn combine(base: &BlockDensity, k: &BlockDensity, a: f64) -> BlockDensity {
        let mut out = base.clone();
        for (o, x) in out.blocks.iter_mut().zip(&k.blocks) {
            o.axpy(C64::new(a, 0.0), x);
        }
        out
    }

    fn rk4(&self, rho: &BlockDensity, q_at: &impl Fn(f64) -> f64, t: f64, dt: f64) -> BlockDensity {
        let h0 = self.hamiltonians(q_at(t));
        let hm = self.hamiltonians(q_at(t + 0.5 * dt));
        let h1 = self.hamiltonians(q_at(t + dt));
        let k1 = self.derivative(&h0, rho);
        let k2 = self.derivative(&hm, &Self::combine(rho, &k1, 0.5 * dt));
        let k3 = self.derivative(&hm, &Self::combine(rho, &k2, 0.5 * dt));
        let k4 = self.derivative(&h1, &Self::combine(rho, &k3, dt));
        let mut out = rho.clone();
        for (i, o) in out.blocks.iter_mut().enumerate() {
            o.axpy(C64::new(dt / 6.0, 0.0), &k1.blocks[i]);
            o.axpy(C64::new(dt / 3.0, 0.0), &k2.blocks[i]);
            o.axpy(C64::new(dt / 3.0, 0.0), &k3.blocks[i]);
            o.axpy(C64::new(dt / 6.0, 0.0), &k4.blocks[i]);
        }
        out
    }

    pub fn observe(&self, t: f64, rho: &BlockDensity) -> DenseRecord {
        let mut trace = 0.0;
        let mut n_mean = 0.0;
        let (mut n0, mut l2, mut lz, mut lx, mut ly, mut fs) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (b, r) in self.blocks.iter().zip(&rho.blocks) {
            let tr = r.trace().re;
            trace += tr;
            n_mean += tr * b.n as f64;
            if let Some(o) = &b.ops {
                n0 += r.trace_with(&o.n0).re;
                l2 += r.trace_with(&o.l2).re;
                lz += r.trace_with(&o.lz).re;
                lx += r.trace_with(&o.lx).re;
                ly += r.trace_with(&o.ly).re;
            }
            if let Some(s) = &b.singlet {
                let d = s.len();
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..d {
                    for j in 0..d {
                        acc += s[i].conj() * r.at(i, j) * s[j];
                    }
                }
                fs += acc.re;
            }
        }
        DenseRecord {
            t,
            trace,
            n_mean,
            n0,
            xi2: ensemble_xi2(l2, (lx * lx + ly * ly + lz * lz).sqrt(), n_mean),
            f_singlet: fs,
        }
    }

    /// RK4 integration along `schedule`, recording at `t = 0`, every
    /// `sample_dt` and every segment end.
    pub fn run(&self, rho0: &BlockDensity, schedule: &Schedule, dt: f64, sample_dt: f64) -> Result<(BlockDensity, Vec<DenseRecord>)> {
        schedule.validate()?;
        let mut clock = SampleClock::new(sample_dt)?;
        let mut rho = rho0.clone();
        let mut recs = vec![self.observe(0.0, &rho)];
        let mut start = 0.0;
        for seg in &schedule.segments {
            let duration = seg.duration();
            let end = start + duration;
            let steps = (duration / dt - 1e-9).ceil().max(1.0) as usize;
            let h = duration / steps as f64;
            let q_at = |t: f64| seg.q_at(t - start);
            for i in 0..steps {
                let ta = start + i as f64 * h;
                rho = self.rk4(&rho, &q_at, ta, h);
                let tb = ta + h;
                if clock.reached(tb, end) {
                    recs.push(self.observe(tb, &rho));
                }
            }
            clock.skip_through(end);
            recs.push(self.observe(end, &rho));
            start = end;
        }
        Ok((rho, recs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::polar_state;
    use crate::schedule::run_schedule;

    fn model(n: usize, gamma: f64) -> LossModel {
        LossModel {
            c2p: 25.0,
            n_reference: n,
            convention: UnitConvention::Angular,
            gamma,
        }
    }

    fn hold(q: f64, d: f64) -> Schedule {
        Schedule::new(vec![Segment::Hold { q, duration: d }])
    }

    #[test]
    fn zero_loss_matches_unitary_run() {
        let b = PairBasis::new(20).unwrap();
        let psi = polar_state(b);
        let s = hold(0.3, 0.2).then(&hold(0.01, 0.1));
        let cache = ObserverCache::new(25.0);
        let mut rng = trajectory_rng(1, 0);
        let tr = gillespie_trajectory(&psi, &s, &model(20, 0.0), &cache, RunOptions::default(), &mut rng, 0).unwrap();
        assert!(tr.jumps.is_empty());
        let m = crate::propagate::ChainModel::new(b, 25.0, UnitConvention::Angular);
        let obs = ChainObserver::new(b, 25.0).unwrap();
        let (_, rec) = run_schedule(&psi, &s, &m, &obs, RunOptions::default()).unwrap();
        assert_eq!(rec.len(), tr.samples.len());
        for (a, r) in tr.samples.iter().zip(&rec) {
            assert_eq!(a.record.t, r.t);
            assert!((a.record.f_singlet - r.f_singlet).abs() < 1e-10);
            assert!((a.record.xi2 - r.xi2).abs() < 1e-10);
        }
    }

    #[test]
    fn channel_probabilities_sum_to_one() {
        let b = PairBasis::with_magnetization(13, 3).unwrap();
        let amps: Vec<C64> = (0..b.size()).map(|k| C64::from_polar(1.0 + k as f64, 0.4 * k as f64)).collect();
        let p = channel_probabilities(&StateVector::new(Space::Chain(b), amps)).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn annihilation_matches_full_basis() {
        let n = 6;
        let b = PairBasis::with_magnetization(n, 1).unwrap();
        let amps: Vec<C64> = (0..b.size()).map(|k| C64::new(0.3 + k as f64, -0.2 * k as f64)).collect();
        let psi = StateVector::new(Space::Chain(b), amps);
        let from = FullBasis::new(n).unwrap();
        let to = FullBasis::new(n - 1).unwrap();
        let full = psi.to_full(&from).unwrap();
        for m in [-1i8, 0, 1] {
            let a = lowering_matrix(&from, to.len(), Some(&to), m);
            let dense: Vec<C64> = (0..to.len()).map(|r| (0..from.len()).map(|c| a.at(r, c) * full.amps[c]).sum()).collect();
            let chain = apply_annihilation(&psi, m).unwrap();
            let embedded = chain.to_full(&to).unwrap();
            for (x, y) in dense.iter().zip(&embedded.amps) {
                assert!((x - y).norm() < 1e-12);
            }
            let pn = chain.norm_sqr() / psi.norm_sqr() / n as f64;
            assert!((pn - channel_probabilities(&psi).unwrap()[(m + 1) as usize]).abs() < 1e-12);
        }
    }

    #[test]
    fn sector_bookkeeping_and_gamma_independence() {
        let b = PairBasis::new(12).unwrap();
        let psi = polar_state(b);
        let s = hold(0.0, 3.0);
        let cache = ObserverCache::new(25.0);
        let mut rng = trajectory_rng(3, 1);
        let tr = gillespie_trajectory(&psi, &s, &model(12, 0.2), &cache, RunOptions::default(), &mut rng, 1).unwrap();
        assert!(!tr.jumps.is_empty());
        for (j, jump) in tr.jumps.iter().enumerate() {
            assert_eq!(jump.n_after, 12 - j - 1);
        }
        let last = tr.samples.last().unwrap();
        assert_eq!(last.record.n_current as usize, tr.final_n());
        let t0 = tr.jumps[0].t;
        let pre = tr.samples.iter().filter(|x| x.record.t < t0).last().unwrap();
        let mut rng = trajectory_rng(3, 1);
        let free = gillespie_trajectory(&psi, &s, &model(12, 0.0), &cache, RunOptions::default(), &mut rng, 1).unwrap();
        let same = free.samples.iter().find(|x| x.record.t == pre.record.t).unwrap();
        assert!((same.record.f_singlet - pre.record.f_singlet).abs() < 1e-10);
        assert!((same.l2 - pre.l2).abs() < 1e-10);
    }

    #[test]
    fn dense_oracle_without_loss_is_unitary() {
        let n = 4;
        let b = PairBasis::new(n).unwrap();
        let psi = polar_state(b);
        let oracle = DenseLindblad::new(n, model(n, 0.0)).unwrap();
        let rho0 = oracle.pure_state(&psi).unwrap();
        let s = hold(0.5, 0.2);
        let (rho, recs) = oracle.run(&rho0, &s, 2e-5, 0.05).unwrap();
        let m = crate::propagate::ChainModel::new(b, 25.0, UnitConvention::Angular);
        let (end, _) = run_schedule(&psi, &s, &m, &ChainObserver::new(b, 25.0).unwrap(), RunOptions::default()).unwrap();
        let full = FullBasis::new(n).unwrap();
        let v = end.to_full(&full).unwrap();
        let top = &rho.blocks[n];
        let mut f = C64::new(0.0, 0.0);
        for i in 0..v.dim() {
            for j in 0..v.dim() {
                f += v.amps[i].conj() * top.at(i, j) * v.amps[j];
            }
        }
        assert!(f.re > 1.0 - 1e-8, "fidelity {}", f.re);
        assert!(recs.iter().all(|r| (r.trace - 1.0).abs() < 1e-8));
    }

    #[test]
    fn dense_oracle_trace_hermitian_positive() {
        let n = 5;
        let psi = polar_state(PairBasis::new(n).unwrap());
        let oracle = DenseLindblad::new(n, model(n, 0.3)).unwrap();
        let rho0 = oracle.pure_state(&psi).unwrap();
        let (rho, recs) = oracle.run(&rho0, &hold(0.1, 0.5), 1e-5, 0.1).unwrap();
        assert!(recs.iter().all(|r| (r.trace - 1.0).abs() < 1e-8));
        let expect = n as f64 * (-2.0f64 * 0.3 * 0.5).exp();
        assert!((recs.last().unwrap().n_mean - expect).abs() < 1e-6);
        for b in &rho.blocks {
            assert!(b.hermiticity_error() <= 1e-10);
            assert!(b.is_positive_with_shift(1e-8));
        }
        assert!(DenseLindblad::new(9, model(9, 0.1)).is_err());
    }

    #[test]
    fn always_true_selection_equals_full_aggregate() {
        let psi = polar_state(PairBasis::new(10).unwrap());
        let loss = LossConfig {
            gamma: 0.1,
            n_traj: 20,
            seed: 4,
            n_initial: 10,
        };
        let study = run_loss_study(&psi, &hold(0.0, 0.5), 25.0, UnitConvention::Angular, &loss, &NoiseConfig::default(), RunOptions::default()).unwrap();
        let sel = postselect(&study.trajectories, |_| true).unwrap();
        assert_eq!(sel.rows, study.rows);
        assert_eq!(sel.survival_fraction, 1.0);
        let none = postselect(&study.trajectories, |_| false).unwrap();
        assert!(none.is_empty() && none.rows.is_empty());
    }
}
