//! Stepwise search for multilevel-oscillation holds that shrink the number
//! of occupied `q = 0` levels.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::StateVector;
use crate::error::{Error, Result};
use crate::observables::{ChainObserver, DEFAULT_K_THRESHOLD};
use crate::propagate::ChainModel;
use crate::schedule::{mirror_schedule, Schedule, Segment};
use crate::spectra::eigensolve_tridiagonal;

/// Geometric grid `q_min · 10^{i/ppd}` up to the current upper bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QGrid {
    pub q_min: f64,
    /// Upper bound for the first step; later steps use the previous `q*`.
    pub q_max: f64,
    pub points_per_decade: usize,
}

impl QGrid {
    pub fn points(&self, q_upper: f64) -> Vec<f64> {
        geometric(self.q_min, q_upper, self.points_per_decade as f64)
    }
}

fn geometric(lo: f64, hi: f64, ppd: f64) -> Vec<f64> {
    if !(lo > 0.0 && hi >= lo) {
        return Vec::new();
    }
    let n = ((hi / lo).log10() * ppd + 1e-9).floor() as usize + 1;
    (0..n).map(|i| lo * 10f64.powf(i as f64 / ppd)).collect()
}

/// Secondary ranking among grid points that reach the same `K`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Population of the `q = 0` ground level.
    #[default]
    GroundPopulation,
    /// Summed population of the two lowest `q = 0` levels.
    LowestTwo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub q_grid: QGrid,
    pub dwell_window: usize,
    pub sample_dt: f64,
    pub step_time_cap: f64,
    pub max_steps: usize,
    #[serde(rename = "K_threshold")]
    pub k_threshold: f64,
    pub tie_break: TieBreak,
    /// Refinement factor of the single retry when no grid point lowers `K`.
    pub refine_factor: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            q_grid: QGrid {
                q_min: 1e-4,
                q_max: crate::schedule::default_adiabatic_ramp().q_at(crate::schedule::RAMP_T_END),
                points_per_decade: 40,
            },
            dwell_window: 50,
            sample_dt: 1e-3,
            step_time_cap: 3.0,
            max_steps: 4,
            k_threshold: DEFAULT_K_THRESHOLD,
            tie_break: TieBreak::GroundPopulation,
            refine_factor: 4,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.q_grid.q_min > 0.0) {
            return bad("q_grid.q_min must be positive");
        }
        if !(self.q_grid.q_max >= self.q_grid.q_min) {
            return bad("q_grid.q_max must be at least q_min");
        }
        if self.q_grid.points_per_decade == 0 {
            return bad("q_grid.points_per_decade must be positive");
        }
        if !(self.step_time_cap.is_finite() && self.step_time_cap > 0.0) {
            return bad("step_time_cap must be finite and positive");
        }
        if !(self.sample_dt > 0.0 && self.sample_dt <= self.step_time_cap) {
            return bad("sample_dt must be positive and below step_time_cap");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if self.refine_factor == 0 {
            return bad("refine_factor must be at least 1");
        }
        Ok(())
    }
}

/// How the returned point of a hold was found.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinimumKind {
    /// First dwell-window local minimum below the starting `K`.
    Local,
    /// `K` never changed over the capped window.
    Flat,
    /// No local minimum below the start before the cap; best capped sample.
    Capped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HoldOutcome {
    pub k: usize,
    pub t: f64,
    pub score: f64,
    pub kind: MinimumKind,
    pub psi: StateVector,
}

/// Per-grid-point diagnostics row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub q: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub t: f64,
    pub score: f64,
    pub kind: MinimumKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub q_star: f64,
    pub t_star: f64,
    #[serde(rename = "K_star")]
    pub k_star: usize,
    #[serde(rename = "K_before")]
    pub k_before: usize,
    pub score: f64,
    pub kind: MinimumKind,
    /// The step lowered `K` and was applied.
    pub accepted: bool,
    /// The refined retry grid was needed.
    pub refined: bool,
    #[serde(skip)]
    pub psi_out: Option<StateVector>,
    pub diagnostics: Vec<GridPoint>,
}

/// Fast population evaluator for one hold: the state is expanded in the hold
/// eigenbasis, negligible components dropped, and the `q = 0` overlaps
/// precomputed.
struct HoldEvaluator<'a> {
    values: Vec<f64>,
    coeffs: Vec<C64>,
    /// Row `j`: hold eigenvector of the `j`-th kept component.
    vectors: Vec<Vec<f64>>,
    /// Row `l`: overlaps `⟨r_l|v_j⟩` over kept `j`.
    overlap: Vec<f64>,
    total: f64,
    observer: &'a ChainObserver,
    threshold: f64,
    tie_break: TieBreak,
}

impl<'a> HoldEvaluator<'a> {
    fn new(psi: &StateVector, model: &ChainModel, q: f64, observer: &'a ChainObserver, cfg: &OptimizerConfig) -> Result<Self> {
        let eig = eigensolve_tridiagonal(&model.hamiltonian(q))?;
        let d = eig.dim();
        let mut values = Vec::new();
        let mut coeffs = Vec::new();
        let mut vectors = Vec::new();
        for j in 0..d {
            let v = eig.vector(j);
            let c: C64 = v.iter().zip(&psi.amps).map(|(a, b)| b * *a).sum();
            if c.norm_sqr() > 1e-18 {
                values.push(eig.values[j]);
                coeffs.push(c);
                vectors.push(v.to_vec());
            }
        }
        let kept = coeffs.len();
        let reference = &observer.reference;
        let mut overlap = vec![0.0; d * kept];
        for l in 0..d {
            let r = reference.vector(l);
            for (j, v) in vectors.iter().enumerate() {
                overlap[l * kept + j] = r.iter().zip(v).map(|(a, b)| a * b).sum();
            }
        }
        let total = coeffs.iter().map(|c| c.norm_sqr()).sum();
        Ok(Self {
            values,
            coeffs,
            vectors,
            overlap,
            total,
            observer,
            threshold: cfg.k_threshold,
            tie_break: cfg.tie_break,
        })
    }

    fn phased(&self, t: f64) -> Vec<C64> {
        self.coeffs
            .iter()
            .zip(&self.values)
            .map(|(c, w)| c * C64::from_polar(1.0, -w * t))
            .collect()
    }

    /// `(K, tie-break score)` at time `t`.
    fn evaluate(&self, t: f64) -> (usize, f64) {
        let c = self.phased(t);
        let kept = c.len();
        let d = self.observer.reference.dim();
        let mut seen = 0.0;
        let mut k = 0;
        let mut low = [0.0; 2];
        for l in 0..d {
            if l >= 2 && self.total - seen <= self.threshold {
                break;
            }
            let row = &self.overlap[l * kept..(l + 1) * kept];
            let a: C64 = row.iter().zip(&c).map(|(m, x)| x * *m).sum();
            let p = a.norm_sqr();
            if l < 2 {
                low[l] = p;
            }
            seen += p;
            if p > self.threshold {
                k += 1;
            }
        }
        let score = match self.tie_break {
            TieBreak::GroundPopulation => low[0],
            TieBreak::LowestTwo => low[0] + low[1],
        };
        (k, score)
    }

    fn state_at(&self, psi: &StateVector, t: f64) -> StateVector {
        let c = self.phased(t);
        let mut out = vec![C64::new(0.0, 0.0); psi.dim()];
        for (a, v) in c.iter().zip(&self.vectors) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += a * *x;
            }
        }
        let mut s = StateVector::new(psi.space, out);
        s.normalize();
        s
    }
}

/// Hold at constant `q` and stop at the first dwell-window local minimum of `K`
/// that lies below the starting value.
pub fn first_local_min_k(
    psi: &StateVector,
    q: f64,
    model: &ChainModel,
    observer: &ChainObserver,
    cfg: &OptimizerConfig,
) -> Result<HoldOutcome> {
    let ev = HoldEvaluator::new(psi, model, q, observer, cfg)?;
    let w = cfg.dwell_window.max(1);
    let n = (cfg.step_time_cap / cfg.sample_dt + 1e-9).floor() as usize;
    let time = |i: usize| i as f64 * cfg.sample_dt;
    let mut ks = Vec::with_capacity(n + 1);
    let mut scores = Vec::with_capacity(n + 1);
    let is_min = |ks: &[usize], i: usize, upto: usize| {
        let ki = ks[i];
        ki < ks[0] && ks[i.saturating_sub(w)..i].iter().all(|&x| ki <= x) && ks[i + 1..=upto].iter().all(|&x| x >= ki)
    };
    let mut found = None;
    for j in 0..=n {
        let (k, s) = ev.evaluate(time(j));
        ks.push(k);
        scores.push(s);
        if j >= w + 1 && is_min(&ks, j - w, j) {
            found = Some(j - w);
            break;
        }
    }
    if found.is_none() {
        let start = (n + 1).saturating_sub(w).max(1);
        found = (start..=n).find(|&i| is_min(&ks, i, n));
    }
    let (idx, kind) = match found {
        Some(i) => (i, MinimumKind::Local),
        None if ks.iter().all(|&k| k == ks[0]) => (0, MinimumKind::Flat),
        None => {
            let kmin = *ks.iter().min().unwrap();
            let mut best = None::<usize>;
            for (i, &k) in ks.iter().enumerate() {
                if k == kmin && best.map_or(true, |b| scores[i] > scores[b]) {
                    best = Some(i);
                }
            }
            (best.unwrap(), MinimumKind::Capped)
        }
    };
    Ok(HoldOutcome {
        k: ks[idx],
        t: time(idx),
        score: scores[idx],
        kind,
        psi: ev.state_at(psi, time(idx)),
    })
}

/// `(K, score)` of a state in the reference basis.
pub fn k_and_score(psi: &StateVector, observer: &ChainObserver, cfg: &OptimizerConfig) -> (usize, f64) {
    let pops = crate::observables::level_populations(&psi.amps, &observer.reference);
    let k = pops.iter().filter(|&&p| p > cfg.k_threshold).count();
    let score = match cfg.tie_break {
        TieBreak::GroundPopulation => pops[0],
        TieBreak::LowestTwo => pops[0] + pops.get(1).copied().unwrap_or(0.0),
    };
    (k, score)
}

fn better(a: &HoldOutcome, b: &HoldOutcome) -> bool {
    (a.k, -a.score, a.t) < (b.k, -b.score, b.t)
}

fn sweep(
    psi: &StateVector,
    grid: &[f64],
    model: &ChainModel,
    observer: &ChainObserver,
    cfg: &OptimizerConfig,
) -> Result<Vec<(f64, HoldOutcome)>> {
    grid.par_iter()
        .map(|&q| first_local_min_k(psi, q, model, observer, cfg).map(|o| (q, o)))
        .collect()
}

fn pick(results: &[(f64, HoldOutcome)]) -> usize {
    let mut best = 0;
    for i in 1..results.len() {
        if better(&results[i].1, &results[best].1) {
            best = i;
        }
    }
    best
}

/// One optimization step over the grid `[q_min, q_upper]`; retried once on a
/// refined grid around the best point when no grid point lowers `K`.
pub fn optimize_step(
    psi: &StateVector,
    q_upper: f64,
    model: &ChainModel,
    observer: &ChainObserver,
    cfg: &OptimizerConfig,
) -> Result<StepResult> {
    cfg.validate()?;
    let grid = cfg.q_grid.points(q_upper);
    if grid.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty q grid: q_upper {q_upper} below q_min {}",
            cfg.q_grid.q_min
        )));
    }
    let (k_before, _) = k_and_score(psi, observer, cfg);
    let mut results = sweep(psi, &grid, model, observer, cfg)?;
    let mut best = pick(&results);
    let mut refined = false;
    if results[best].1.k >= k_before && cfg.refine_factor > 1 {
        refined = true;
        let ppd = cfg.q_grid.points_per_decade as f64;
        let q_b = results[best].0;
        let lo = (q_b * 10f64.powf(-1.0 / ppd)).max(cfg.q_grid.q_min);
        let hi = (q_b * 10f64.powf(1.0 / ppd)).min(q_upper);
        let fine: Vec<f64> = geometric(lo, hi, ppd * cfg.refine_factor as f64)
            .into_iter()
            .filter(|q| !grid.iter().any(|g| (g - q).abs() <= 1e-12 * g))
            .collect();
        results.extend(sweep(psi, &fine, model, observer, cfg)?);
        best = pick(&results);
    }
    let diagnostics = results
        .iter()
        .map(|(q, o)| GridPoint {
            q: *q,
            k: o.k,
            t: o.t,
            score: o.score,
            kind: o.kind,
        })
        .collect();
    let (q_star, o) = results.swap_remove(best);
    Ok(StepResult {
        q_star,
        t_star: o.t,
        k_star: o.k,
        k_before,
        score: o.score,
        kind: o.kind,
        accepted: o.k < k_before,
        refined,
        psi_out: Some(o.psi),
        diagnostics,
    })
}

#[derive(Clone, Debug)]
pub struct AmoResult {
    /// Accepted holds, in order.
    pub holds: Schedule,
    pub psi: StateVector,
    pub steps: Vec<StepResult>,
    /// Final `K` reached 1.
    pub converged: bool,
}

/// Repeated [`optimize_step`] calls, each bounded above by the previous `q*`,
/// until `K = 1`, no step lowers `K`, or `max_steps` holds were emitted.
pub fn run_amo(psi_post_ramp: &StateVector, model: &ChainModel, observer: &ChainObserver, cfg: &OptimizerConfig) -> Result<AmoResult> {
    cfg.validate()?;
    let mut psi = psi_post_ramp.clone();
    let mut holds = Vec::new();
    let mut steps = Vec::new();
    let mut q_upper = cfg.q_grid.q_max;
    let (mut k, _) = k_and_score(&psi, observer, cfg);
    while k > 1 && holds.len() < cfg.max_steps && q_upper >= cfg.q_grid.q_min {
        let step = optimize_step(&psi, q_upper, model, observer, cfg)?;
        let accepted = step.accepted;
        if accepted {
            holds.push(Segment::Hold {
                q: step.q_star,
                duration: step.t_star,
            });
            psi = step.psi_out.clone().expect("step state");
            k = step.k_star;
            q_upper = step.q_star;
        }
        steps.push(step);
        if !accepted {
            break;
        }
    }
    Ok(AmoResult {
        holds: Schedule::new(holds),
        psi,
        steps,
        converged: k == 1,
    })
}

/// `ramp + holds + Hold(0, plateau) + mirror(ramp + holds)`.
pub fn amoa_schedule(ramp: &Schedule, holds: &Schedule, plateau: f64) -> Schedule {
    let amo = ramp.clone().then(holds);
    let mut s = amo.clone();
    if plateau > 0.0 {
        s.segments.push(Segment::Hold { q: 0.0, duration: plateau });
    }
    s.then(&mirror_schedule(&amo))
}

/// Singlet-preparation search followed by its mirror image into the twin-Fock state.
pub fn run_amoa(
    psi0: &StateVector,
    ramp: &Schedule,
    plateau: f64,
    model: &ChainModel,
    observer: &ChainObserver,
    cfg: &OptimizerConfig,
    opts: crate::schedule::RunOptions,
) -> Result<(Schedule, StateVector, AmoResult)> {
    if psi0.n_atoms() % 2 != 0 {
        return Err(Error::InvalidArgument("twin-Fock preparation needs even N".into()));
    }
    let post = crate::schedule::run_schedule_with(psi0, ramp, model, opts, |_, _, _| {})?;
    let amo = run_amo(&post, model, observer, cfg)?;
    let full = amoa_schedule(ramp, &amo.holds, plateau);
    let tail = Schedule::new(full.segments[ramp.segments.len() + amo.holds.segments.len()..].to_vec());
    let mut end = crate::schedule::run_schedule_with(&amo.psi, &tail, model, opts, |_, _, _| {})?;
    end.normalize();
    Ok((full, end, amo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{PairBasis, Space};
    use crate::operators::UnitConvention;

    fn setup(n: usize) -> (ChainModel, ChainObserver) {
        let b = PairBasis::new(n).unwrap();
        (ChainModel::new(b, 25.0, UnitConvention::Angular), ChainObserver::new(b, 25.0).unwrap())
    }

    fn real_state(b: PairBasis, v: &[f64]) -> StateVector {
        StateVector::new(Space::Chain(b), v.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    #[test]
    fn grid_endpoints() {
        let g = QGrid { q_min: 1e-4, q_max: 1.0, points_per_decade: 40 };
        let p = g.points(1.0);
        assert_eq!(p.len(), 161);
        assert!((p[160] - 1.0).abs() < 1e-12);
        assert_eq!(g.points(1e-4).len(), 1);
        assert!(g.points(1e-5).is_empty());
    }

    #[test]
    fn singlet_is_flat_with_k1() {
        let (model, obs) = setup(40);
        let s = real_state(model.basis, obs.reference.vector(0));
        let cfg = OptimizerConfig { step_time_cap: 0.2, ..Default::default() };
        let o = first_local_min_k(&s, 0.01, &model, &obs, &cfg).unwrap();
        assert_eq!(o.k, 1);
        assert!(o.t <= cfg.dwell_window as f64 * cfg.sample_dt);
        let r = run_amo(&s, &model, &obs, &cfg).unwrap();
        assert!(r.holds.segments.is_empty() && r.converged);
    }

    #[test]
    fn eigenstate_of_hold_is_flat() {
        let (model, obs) = setup(40);
        let eig = eigensolve_tridiagonal(&model.hamiltonian(0.5)).unwrap();
        let mut v = eig.vector(0).to_vec();
        for (a, b) in v.iter_mut().zip(eig.vector(1)) {
            *a = (*a + b) * std::f64::consts::FRAC_1_SQRT_2;
        }
        let e0 = real_state(model.basis, eig.vector(0));
        let cfg = OptimizerConfig { step_time_cap: 0.3, ..Default::default() };
        let o = first_local_min_k(&e0, 0.5, &model, &obs, &cfg).unwrap();
        assert_eq!(o.kind, MinimumKind::Flat);
        assert_eq!(o.t, 0.0);
    }

    #[test]
    fn single_point_grid_and_monotone_steps() {
        let (model, obs) = setup(60);
        let eig = eigensolve_tridiagonal(&model.hamiltonian(0.9)).unwrap();
        let psi = real_state(model.basis, eig.vector(0));
        let cfg = OptimizerConfig {
            q_grid: QGrid { q_min: 0.05, q_max: 0.05, points_per_decade: 40 },
            refine_factor: 1,
            step_time_cap: 1.0,
            ..Default::default()
        };
        let step = optimize_step(&psi, 0.05, &model, &obs, &cfg).unwrap();
        assert_eq!(step.diagnostics.len(), 1);
        assert_eq!(step.q_star, 0.05);
        let direct = first_local_min_k(&psi, 0.05, &model, &obs, &cfg).unwrap();
        assert_eq!((direct.k, direct.t), (step.k_star, step.t_star));

        let cfg = OptimizerConfig {
            q_grid: QGrid { q_min: 1e-3, q_max: 0.9, points_per_decade: 10 },
            step_time_cap: 1.0,
            ..Default::default()
        };
        let amo = run_amo(&psi, &model, &obs, &cfg).unwrap();
        let mut k = amo.steps[0].k_before;
        for s in amo.steps.iter().filter(|s| s.accepted) {
            assert!(s.k_star < k);
            k = s.k_star;
        }
        for seg in &amo.holds.segments {
            if let Segment::Hold { q, .. } = seg {
                assert!(*q >= 1e-3 && *q <= 0.9);
            }
        }
    }

    #[test]
    fn evaluator_matches_direct_populations() {
        let (model, obs) = setup(50);
        let eig = eigensolve_tridiagonal(&model.hamiltonian(2.0)).unwrap();
        let psi = real_state(model.basis, eig.vector(0));
        let cfg = OptimizerConfig::default();
        let ev = HoldEvaluator::new(&psi, &model, 0.1, &obs, &cfg).unwrap();
        for t in [0.0, 0.05, 0.31] {
            let (k, score) = ev.evaluate(t);
            let st = ev.state_at(&psi, t);
            let (k2, s2) = k_and_score(&st, &obs, &cfg);
            assert_eq!(k, k2);
            assert!((score - s2).abs() < 1e-10);
        }
    }
}
