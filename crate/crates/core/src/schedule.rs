//! Piecewise control schedules `q(t)` and the runner that drives them.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::basis::StateVector;
use crate::error::{Error, Result};
use crate::observables::{ChainObserver, ObservableRecord};
use crate::propagate::{evolve_driven, ChainModel, DriveOptions, SpectralPropagator};

/// Default sampling interval of recorded observables, in s.
pub const DEFAULT_SAMPLE_DT: f64 = 1e-3;

/// One piece of a schedule. All `q` values in Hz, times in s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Segment {
    /// `q(τ) = q0 (1 − τ/T0)²` with the ramp parameter `τ` running over
    /// `[t_begin, t_end]`, or backwards when `reversed`.
    ParabolicRamp {
        q0: f64,
        #[serde(rename = "T0")]
        t0: f64,
        t_begin: f64,
        t_end: f64,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        reversed: bool,
    },
    Hold {
        q: f64,
        duration: f64,
    },
    LinearSweep {
        q_from: f64,
        q_to: f64,
        duration: f64,
    },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match *self {
            Segment::ParabolicRamp { t_begin, t_end, .. } => t_end - t_begin,
            Segment::Hold { duration, .. } | Segment::LinearSweep { duration, .. } => duration,
        }
    }

    /// `q` at elapsed time `tau` since the segment start.
    pub fn q_at(&self, tau: f64) -> f64 {
        match *self {
            Segment::ParabolicRamp {
                q0,
                t0,
                t_begin,
                t_end,
                reversed,
            } => {
                let x = if reversed { t_end - tau } else { t_begin + tau };
                let u = 1.0 - x / t0;
                q0 * u * u
            }
            Segment::Hold { q, .. } => q,
            Segment::LinearSweep {
                q_from,
                q_to,
                duration,
            } => q_from + (q_to - q_from) * (tau / duration),
        }
    }

    /// Upper bound on `|dq/dt|` over the segment.
    pub fn max_rate(&self) -> f64 {
        match *self {
            Segment::ParabolicRamp {
                q0, t0, t_begin, t_end, ..
            } => {
                let edge = |x: f64| (2.0 * q0 / t0 * (1.0 - x / t0)).abs();
                edge(t_begin).max(edge(t_end))
            }
            Segment::Hold { .. } => 0.0,
            Segment::LinearSweep {
                q_from,
                q_to,
                duration,
            } => ((q_to - q_from) / duration).abs(),
        }
    }

    pub fn mirrored(&self) -> Segment {
        match *self {
            Segment::ParabolicRamp {
                q0,
                t0,
                t_begin,
                t_end,
                reversed,
            } => Segment::ParabolicRamp {
                q0: -q0,
                t0,
                t_begin,
                t_end,
                reversed: !reversed,
            },
            Segment::Hold { q, duration } => Segment::Hold { q: -q, duration },
            Segment::LinearSweep {
                q_from,
                q_to,
                duration,
            } => Segment::LinearSweep {
                q_from: -q_to,
                q_to: -q_from,
                duration,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.duration();
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::InvalidArgument(format!("segment duration must be positive, got {d}")));
        }
        if let Segment::ParabolicRamp { t0, .. } = self {
            if !(t0.is_finite() && *t0 > 0.0) {
                return Err(Error::InvalidArgument(format!("ramp T0 must be positive, got {t0}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub segments: Vec<Segment>,
}

impl Schedule {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    pub fn validate(&self) -> Result<()> {
        self.segments.iter().try_for_each(Segment::validate)
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    /// Absolute start times of every segment plus the final end time.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.segments.len() + 1);
        let mut t = 0.0;
        out.push(t);
        for s in &self.segments {
            t += s.duration();
            out.push(t);
        }
        out
    }

    /// `q(t)`; at a boundary the later segment wins. Outside the schedule
    /// the nearest end value is returned.
    pub fn q_at(&self, t: f64) -> f64 {
        let mut start = 0.0;
        for (i, s) in self.segments.iter().enumerate() {
            let end = start + s.duration();
            if t < end || i + 1 == self.segments.len() {
                return s.q_at((t - start).clamp(0.0, s.duration()));
            }
            start = end;
        }
        0.0
    }

    pub fn then(mut self, other: &Schedule) -> Schedule {
        self.segments.extend(other.segments.iter().cloned());
        self
    }
}

pub const RAMP_Q0: f64 = 277.0;
pub const RAMP_T0: f64 = 0.955;
pub const RAMP_T_END: f64 = 0.9;

/// `q = 277 (1 − t/0.955)²` Hz over `t ∈ [0, 0.9]` s.
pub fn default_adiabatic_ramp() -> Schedule {
    adiabatic_ramp(RAMP_Q0, RAMP_T0, RAMP_T_END)
}

pub fn adiabatic_ramp(q0: f64, t0: f64, t_end: f64) -> Schedule {
    Schedule::new(vec![Segment::ParabolicRamp {
        q0,
        t0,
        t_begin: 0.0,
        t_end,
        reversed: false,
    }])
}

/// Time-reversed segment order with `q ↦ −q`.
pub fn mirror_schedule(s: &Schedule) -> Schedule {
    Schedule::new(s.segments.iter().rev().map(Segment::mirrored).collect())
}

/// Linear sweep from `q0` to `−q0`.
pub fn landau_zener(q0: f64, duration: f64) -> Result<Schedule> {
    if !(duration > 0.0) {
        return Err(Error::InvalidArgument("sweep duration must be positive".into()));
    }
    Ok(Schedule::new(vec![Segment::LinearSweep {
        q_from: q0,
        q_to: -q0,
        duration,
    }]))
}

/// Global sample grid `k·dt`, consumed in time order.
#[derive(Clone, Copy, Debug)]
pub struct SampleClock {
    dt: f64,
    next: u64,
}

impl SampleClock {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("sample_dt must be positive, got {dt}")));
        }
        Ok(Self { dt, next: 1 })
    }

    fn tol(&self) -> f64 {
        1e-9 * self.dt
    }

    fn peek(&self) -> f64 {
        self.next as f64 * self.dt
    }

    /// Grid times strictly inside `(.., end)`, excluding any within tolerance of `end`.
    pub fn take_before(&mut self, end: f64) -> Vec<f64> {
        let mut out = Vec::new();
        while self.peek() < end - self.tol() {
            out.push(self.peek());
            self.next += 1;
        }
        out
    }

    /// True if a grid time has been reached by `t` (and lies before `end`);
    /// consumes every grid time up to `t`.
    pub fn reached(&mut self, t: f64, end: f64) -> bool {
        let mut hit = false;
        while self.peek() <= t + self.tol() && self.peek() < end - self.tol() {
            hit = true;
            self.next += 1;
        }
        hit
    }

    /// Drop grid times up to and including `end`.
    pub fn skip_through(&mut self, end: f64) {
        while self.peek() <= end + self.tol() {
            self.next += 1;
        }
    }
}

/// Options for [`run_schedule`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    pub sample_dt: f64,
    pub drive: DriveOptions,
    /// Constant shift added to every scheduled `q` (e.g. a stray-field Zeeman shift).
    pub q_offset: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            sample_dt: DEFAULT_SAMPLE_DT,
            drive: DriveOptions::default(),
            q_offset: 0.0,
        }
    }
}

/// Evolve a chain state through `schedule`, recording at `t = 0`, on the
/// global `sample_dt` grid and at every segment end. Inside driven segments
/// a record is taken at the first integrator step at or after each grid time.
pub fn run_schedule(
    psi0: &StateVector,
    schedule: &Schedule,
    model: &ChainModel,
    observer: &ChainObserver,
    opts: RunOptions,
) -> Result<(StateVector, Vec<ObservableRecord>)> {
    let mut records = Vec::new();
    let end = run_schedule_with(psi0, schedule, model, opts, |t, q, psi| {
        records.push(observer.record(t, q, &psi.amps));
    })?;
    Ok((end, records))
}

/// Like [`run_schedule`] but hands every sampled state to `sink`.
pub fn run_schedule_with(
    psi0: &StateVector,
    schedule: &Schedule,
    model: &ChainModel,
    opts: RunOptions,
    mut sink: impl FnMut(f64, f64, &StateVector),
) -> Result<StateVector> {
    schedule.validate()?;
    if psi0.dim() != model.basis.size() {
        return Err(Error::DimensionMismatch {
            expected: model.basis.size(),
            got: psi0.dim(),
        });
    }
    let mut clock = SampleClock::new(opts.sample_dt)?;
    let off = opts.q_offset;
    let q_first = schedule.segments.first().map_or(0.0, |s| s.q_at(0.0)) + off;
    sink(0.0, q_first, psi0);
    let mut state = psi0.clone();
    let mut start = 0.0;
    for seg in &schedule.segments {
        let duration = seg.duration();
        let end = start + duration;
        match *seg {
            Segment::Hold { q, .. } => {
                let q = q + off;
                let prop = SpectralPropagator::new(&model.hamiltonian(q))?;
                let coeffs = prop.coefficients(&state.amps);
                for t in clock.take_before(end) {
                    let amps = prop.reconstruct(&coeffs, t - start);
                    sink(t, q, &StateVector::new(state.space, amps));
                }
                state.amps = prop.reconstruct(&coeffs, duration);
                state.normalize();
            }
            _ => {
                let local = seg.clone();
                state = evolve_driven(
                    &state,
                    model,
                    |t| local.q_at(t - start) + off,
                    seg.max_rate(),
                    start,
                    end,
                    opts.drive,
                    |t, psi| {
                        if clock.reached(t, end) {
                            sink(t, local.q_at(t - start) + off, psi);
                        }
                    },
                )?;
            }
        }
        clock.skip_through(end);
        sink(end, seg.q_at(duration) + off, &state);
        start = end;
    }
    Ok(state)
}

/// Hold `psi` at constant `q` and return the states at the requested elapsed times.
pub fn hold_states(psi: &StateVector, model: &ChainModel, q: f64, times: &[f64]) -> Result<Vec<Vec<C64>>> {
    let prop = SpectralPropagator::new(&model.hamiltonian(q))?;
    let coeffs = prop.coefficients(&psi.amps);
    Ok(times.iter().map(|&t| prop.reconstruct(&coeffs, t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{polar_state, PairBasis, Space};
    use crate::operators::UnitConvention;

    #[test]
    fn default_ramp_values() {
        let s = default_adiabatic_ramp();
        assert_eq!(s.q_at(0.0), 277.0);
        let qf = 277.0 * (1.0 - 0.9 / 0.955_f64).powi(2);
        assert!((s.q_at(0.9) - qf).abs() < 1e-12);
        assert!((qf - 0.919).abs() < 1e-3);
        let full = adiabatic_ramp(277.0, 0.955, 0.955);
        assert!(full.q_at(0.955).abs() < 1e-12);
    }

    #[test]
    fn mirror_properties() {
        let amo = default_adiabatic_ramp().then(&Schedule::new(vec![
            Segment::Hold { q: 0.04, duration: 0.2 },
            Segment::Hold { q: 5e-4, duration: 1.0 },
        ]));
        let m = mirror_schedule(&amo);
        assert_eq!(m.segments[0], Segment::Hold { q: -5e-4, duration: 1.0 });
        assert_eq!(mirror_schedule(&m), amo);
        assert!((m.duration() - amo.duration()).abs() < 1e-15);
        let t = amo.duration();
        for x in [0.0, 0.3, 0.85, 0.899] {
            assert!((m.q_at(t - x) + amo.q_at(x)).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn landau_zener_sweep() {
        let s = landau_zener(277.0, 8.63).unwrap();
        assert_eq!(s.q_at(0.0), 277.0);
        assert!(s.q_at(4.315).abs() < 1e-12);
        assert!((s.q_at(8.63) + 277.0).abs() < 1e-12);
        assert!(landau_zener(277.0, 0.0).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let s = default_adiabatic_ramp().then(&mirror_schedule(&default_adiabatic_ramp()));
        let json = serde_json::to_string(&s).unwrap();
        let back: Schedule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(json.contains("\"T0\""));
    }

    #[test]
    fn empty_schedule_single_record() {
        let b = PairBasis::new(10).unwrap();
        let model = ChainModel::new(b, 25.0, UnitConvention::Angular);
        let obs = ChainObserver::new(b, 25.0).unwrap();
        let (_, rec) = run_schedule(&polar_state(b), &Schedule::default(), &model, &obs, RunOptions::default()).unwrap();
        assert_eq!(rec.len(), 1);
        assert_eq!(rec[0].t, 0.0);
    }

    #[test]
    fn singlet_hold_at_zero() {
        let b = PairBasis::new(30).unwrap();
        let model = ChainModel::new(b, 25.0, UnitConvention::Angular);
        let obs = ChainObserver::new(b, 25.0).unwrap();
        let s = StateVector::new(
            Space::Chain(b),
            obs.reference.vector(0).iter().map(|&x| C64::new(x, 0.0)).collect(),
        );
        let sched = Schedule::new(vec![Segment::Hold { q: 0.0, duration: 0.25 }]);
        let (_, rec) = run_schedule(&s, &sched, &model, &obs, RunOptions::default()).unwrap();
        assert_eq!(rec.len(), 251);
        assert!(rec.iter().all(|r| (r.f_singlet - 1.0).abs() < 1e-10 && r.k == 1));
    }

    #[test]
    fn halved_sampling_is_superset() {
        let b = PairBasis::new(24).unwrap();
        let model = ChainModel::new(b, 25.0, UnitConvention::Angular);
        let obs = ChainObserver::new(b, 25.0).unwrap();
        let sched = adiabatic_ramp(20.0, 0.1, 0.05).then(&Schedule::new(vec![
            Segment::Hold { q: 0.3, duration: 0.0123 },
            Segment::LinearSweep { q_from: 0.3, q_to: -0.3, duration: 0.01 },
        ]));
        let run = |dt: f64| {
            run_schedule(&polar_state(b), &sched, &model, &obs, RunOptions { sample_dt: dt, ..Default::default() })
                .unwrap()
                .1
        };
        let coarse = run(2e-3);
        let fine = run(1e-3);
        assert!(fine.len() > coarse.len());
        for r in &coarse {
            let hit = fine.iter().find(|f| f.t.to_bits() == r.t.to_bits()).expect("missing time");
            assert_eq!(hit, r);
        }
    }
}
