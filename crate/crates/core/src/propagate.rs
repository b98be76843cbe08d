//! Time evolution.
//!
//! Constant chain Hamiltonians are propagated exactly through their spectral
//! decomposition. Everything else goes through a Chebyshev expansion of
//! `exp(−iHt)`, which is exact to round-off for a static generator; smoothly
//! varying `q(t)` is handled by midpoint (second-order Magnus) steps or by
//! classical RK4.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::basis::{PairBasis, Space, StateVector};
use crate::error::{Error, Result};
use crate::operators::{
    hamiltonian_chain, ExtendedParams, FullOperators, HermitianOp, SparseOp, TriMatrix,
    UnitConvention,
};
use crate::spectra::{eigensolve_tridiagonal, EigenSystem};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// `J_0(x) … J_{n−1}(x)` for `x ≥ 0` by Miller's backward recurrence.
pub fn bessel_j_sequence(x: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let start = (n.max(x as usize) + 20 + (x.sqrt() * 10.0) as usize) | 1;
    let start = start + 1; // even starting order
    let mut j_next = 0.0;
    let mut j_cur = 1e-300;
    let mut norm = 0.0;
    let mut tmp = vec![0.0; start + 1];
    tmp[start] = j_cur;
    for k in (1..=start).rev() {
        let j_prev = 2.0 * k as f64 / x * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        tmp[k - 1] = j_cur;
        if j_cur.abs() > 1e250 {
            for v in tmp.iter_mut().skip(k - 1) {
                *v *= 1e-250;
            }
            j_cur *= 1e-250;
            j_next *= 1e-250;
        }
    }
    for (k, v) in tmp.iter().enumerate() {
        if k == 0 {
            norm += v;
        } else if k % 2 == 0 {
            norm += 2.0 * v;
        }
    }
    for k in 0..n {
        out[k] = tmp[k] / norm;
    }
    out
}

/// `exp(−i H t) ψ` by Chebyshev expansion on the Gershgorin interval of `H`.
pub fn chebyshev_expm(op: &impl HermitianOp, psi: &[C64], t: f64) -> Vec<C64> {
    let n = op.dim();
    assert_eq!(psi.len(), n);
    let (lo, hi) = op.spectral_bounds();
    let center = 0.5 * (lo + hi);
    let radius = 0.5 * (hi - lo);
    let global = C64::from_polar(1.0, -center * t);
    let x = radius * t.abs();
    if x < 1e-300 {
        return psi.iter().map(|a| a * global).collect();
    }
    let sign = t.signum();
    let nterms = (x + 12.0 * x.cbrt() + 24.0).ceil() as usize;
    let j = bessel_j_sequence(x, nterms);

    let mut v_prev: Vec<C64> = psi.to_vec();
    let mut v_cur = vec![ZERO; n];
    let mut scratch = vec![ZERO; n];
    let inv_r = 1.0 / radius;
    // v₁ = H̃ ψ
    op.apply(&v_prev, &mut scratch);
    for i in 0..n {
        v_cur[i] = (scratch[i] - v_prev[i] * center) * inv_r;
    }
    let mut acc: Vec<C64> = v_prev.iter().map(|a| a * j[0]).collect();
    // (−i·sign)^k
    let step_phase = C64::new(0.0, -sign);
    let mut phase = step_phase;
    let mut k = 1;
    loop {
        let coef = phase * (2.0 * j[k]);
        for i in 0..n {
            acc[i] += v_cur[i] * coef;
        }
        k += 1;
        if k >= nterms || (k as f64 > x && j[k - 1].abs() < 1e-17 && j[k].abs() < 1e-17) {
            break;
        }
        op.apply(&v_cur, &mut scratch);
        for i in 0..n {
            let next = (scratch[i] - v_cur[i] * center) * (2.0 * inv_r) - v_prev[i];
            v_prev[i] = v_cur[i];
            v_cur[i] = next;
        }
        phase *= step_phase;
    }
    acc.iter_mut().for_each(|a| *a *= global);
    acc
}

/// Exact propagator of a constant chain Hamiltonian.
#[derive(Clone, Debug)]
pub struct SpectralPropagator {
    pub eigen: EigenSystem,
}

impl SpectralPropagator {
    pub fn new(h: &TriMatrix) -> Result<Self> {
        Ok(Self {
            eigen: eigensolve_tridiagonal(h)?,
        })
    }

    pub fn from_eigen(eigen: EigenSystem) -> Self {
        Self { eigen }
    }

    /// Expansion coefficients `⟨v_j|ψ⟩`.
    pub fn coefficients(&self, psi: &[C64]) -> Vec<C64> {
        let d = self.eigen.dim();
        (0..d)
            .map(|j| {
                self.eigen
                    .vector(j)
                    .iter()
                    .zip(psi)
                    .map(|(v, a)| a * *v)
                    .sum()
            })
            .collect()
    }

    /// `Σ_j c_j e^{−iλ_j t} v_j`.
    pub fn reconstruct(&self, coeffs: &[C64], t: f64) -> Vec<C64> {
        let d = self.eigen.dim();
        let mut out = vec![ZERO; d];
        for (j, c) in coeffs.iter().enumerate() {
            if *c == ZERO {
                continue;
            }
            let a = c * C64::from_polar(1.0, -self.eigen.values[j] * t);
            for (o, v) in out.iter_mut().zip(self.eigen.vector(j)) {
                *o += a * *v;
            }
        }
        out
    }

    pub fn evolve(&self, psi: &StateVector, t: f64) -> Result<StateVector> {
        check_dim(self.eigen.dim(), psi.dim())?;
        let c = self.coefficients(&psi.amps);
        Ok(StateVector::new(psi.space, self.reconstruct(&c, t)))
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// `exp(−iHt)ψ` for a constant chain Hamiltonian, via its spectral decomposition.
pub fn evolve_constant(psi: &StateVector, h: &TriMatrix, t: f64) -> Result<StateVector> {
    check_dim(h.dim(), psi.dim())?;
    SpectralPropagator::new(h)?.evolve(psi, t)
}

/// `exp(−iHt)ψ` for any Hermitian operator, via Chebyshev expansion.
pub fn evolve_constant_op(psi: &StateVector, h: &impl HermitianOp, t: f64) -> Result<StateVector> {
    check_dim(h.dim(), psi.dim())?;
    let mut out = StateVector::new(psi.space, chebyshev_expm(h, &psi.amps, t));
    out.normalize();
    Ok(out)
}

/// Time stepper for driven chain evolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Midpoint Hamiltonian per step, exponentiated exactly (second-order Magnus).
    #[default]
    Magnus,
    /// Classical fourth-order Runge–Kutta on the center-shifted generator.
    Rk4,
}

/// Default step for a ramp, `min(1e-4 s, 0.05/‖H‖)`; the norm bound is the
/// half-width of the spectrum, since the center only contributes a phase.
pub fn default_ramp_dt(h_norm: f64) -> f64 {
    if h_norm <= 0.0 {
        1e-4
    } else {
        (1e-4f64).min(0.05 / h_norm)
    }
}

fn half_width(op: &impl HermitianOp) -> f64 {
    let (lo, hi) = op.spectral_bounds();
    0.5 * (hi - lo)
}

/// Chain Hamiltonian `H(q)` for a fixed basis, rebuilt cheaply per step.
#[derive(Clone, Debug)]
pub struct ChainModel {
    pub basis: PairBasis,
    pub c2p: f64,
    pub convention: UnitConvention,
    l2_scaled: TriMatrix,
    n0: Vec<f64>,
}

impl ChainModel {
    pub fn new(basis: PairBasis, c2p: f64, convention: UnitConvention) -> Self {
        let h0 = hamiltonian_chain(basis, c2p, 0.0, convention);
        Self {
            basis,
            c2p,
            convention,
            l2_scaled: h0,
            n0: basis.n_zero(),
        }
    }

    pub fn hamiltonian(&self, q: f64) -> TriMatrix {
        self.l2_scaled
            .add_diagonal(-self.convention.scale() * q, &self.n0)
    }

    /// `‖dH/dq‖` in internal units.
    pub fn dq_norm(&self) -> f64 {
        self.convention.scale() * self.n0.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }
}

/// Options for time-dependent chain evolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriveOptions {
    /// Step size in s; `None` uses the default for the integrator.
    pub dt: Option<f64>,
    pub integrator: Integrator,
}

impl Default for DriveOptions {
    fn default() -> Self {
        Self {
            dt: None,
            integrator: Integrator::Magnus,
        }
    }
}

/// Evolve `psi` from `t0` to `t1` under `H(q(t))`. `observer` is called with
/// `(t, &state)` after every step (not at `t0`). Returns the final state.
///
/// RK4 requires `dt ≤ 0.1/‖H‖`; Magnus steps require `dt² ‖dH/dt‖ ≤ 0.1`.
/// Both renormalize after each step.
pub fn evolve_driven(
    psi: &StateVector,
    model: &ChainModel,
    q_of_t: impl Fn(f64) -> f64,
    dq_dt_max: f64,
    t0: f64,
    t1: f64,
    opts: DriveOptions,
    mut observer: impl FnMut(f64, &StateVector),
) -> Result<StateVector> {
    check_dim(model.basis.size(), psi.dim())?;
    let duration = t1 - t0;
    if duration <= 0.0 {
        return Ok(psi.clone());
    }
    let h_start = model.hamiltonian(q_of_t(t0));
    let h_end = model.hamiltonian(q_of_t(t1));
    let hnorm = half_width(&h_start).max(half_width(&h_end));
    let dt_req = match (opts.dt, opts.integrator) {
        (Some(dt), _) => dt,
        (None, Integrator::Rk4) => default_ramp_dt(hnorm),
        (None, Integrator::Magnus) => 1e-4,
    };
    let steps = (duration / dt_req - 1e-9).ceil().max(1.0) as usize;
    let dt = duration / steps as f64;
    match opts.integrator {
        Integrator::Rk4 => {
            let limit = 0.1 / hnorm.max(f64::MIN_POSITIVE);
            if dt > limit {
                return Err(Error::StepSize { dt, limit });
            }
        }
        Integrator::Magnus => {
            let rate = dq_dt_max.abs() * model.dq_norm();
            if rate > 0.0 && dt * dt * rate > 0.1 {
                return Err(Error::StepSize {
                    dt,
                    limit: (0.1 / rate).sqrt(),
                });
            }
        }
    }
    let mut state = psi.clone();
    for i in 0..steps {
        let ta = t0 + i as f64 * dt;
        match opts.integrator {
            Integrator::Magnus => {
                let h = model.hamiltonian(q_of_t(ta + 0.5 * dt));
                state.amps = chebyshev_expm(&h, &state.amps, dt);
            }
            Integrator::Rk4 => {
                rk4_chain_step(&mut state.amps, model, &q_of_t, ta, dt);
            }
        }
        state.normalize();
        observer(t0 + (i + 1) as f64 * dt, &state);
    }
    Ok(state)
}

fn rk4_chain_step(y: &mut [C64], model: &ChainModel, q_of_t: &impl Fn(f64) -> f64, t: f64, dt: f64) {
    let n = y.len();
    let ha = model.hamiltonian(q_of_t(t));
    let hm = model.hamiltonian(q_of_t(t + 0.5 * dt));
    let hb = model.hamiltonian(q_of_t(t + dt));
    // shift every stage by the same constant; restore its phase exactly
    let (lo, hi) = hm.spectral_bounds();
    let c = 0.5 * (lo + hi);
    let f = |h: &TriMatrix, x: &[C64], out: &mut [C64]| {
        h.apply(x, out);
        for i in 0..n {
            out[i] = (out[i] - x[i] * c) * C64::new(0.0, -1.0);
        }
    };
    let mut k1 = vec![ZERO; n];
    let mut k2 = vec![ZERO; n];
    let mut k3 = vec![ZERO; n];
    let mut k4 = vec![ZERO; n];
    let mut tmp = vec![ZERO; n];
    f(&ha, y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + k1[i] * (0.5 * dt);
    }
    f(&hm, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + k2[i] * (0.5 * dt);
    }
    f(&hm, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + k3[i] * dt;
    }
    f(&hb, &tmp, &mut k4);
    let phase = C64::from_polar(1.0, -c * dt);
    for i in 0..n {
        y[i] = (y[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0)) * phase;
    }
}

/// How the fast linear-Zeeman rotation is treated in [`evolve_rotating`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotatingMode {
    /// Exact propagation of `c'₂L²/N − q n₀ − pL_z − hL_x`, then transformed to the
    /// frame rotating at `p`. Cost grows with `p`, so only practical with `p` scaled down.
    ExactScaledP,
    /// Rotating-wave average: the transverse term is replaced by its
    /// second-order effective contribution `−(h²/2p) L_z`.
    Averaged,
}

/// Largest `|h/p|` accepted by the averaged mode.
pub const AVERAGED_MAX_RATIO: f64 = 1e-2;

/// Frame phase `exp(∓i p L_z t)` applied in place (`sign = −1` goes lab → rotating).
pub fn rotate_about_z(psi: &mut StateVector, ops: &FullOperators, angle: f64) {
    for (a, occ) in psi.amps.iter_mut().zip(ops.basis.states()) {
        *a *= C64::from_polar(1.0, -angle * occ.magnetization() as f64);
    }
}

/// Hamiltonian governing the rotating-frame state in averaged mode, in internal units.
pub fn averaged_hamiltonian(ops: &FullOperators, ext: &ExtendedParams) -> Result<SparseOp> {
    if ext.p == 0.0 || (ext.h / ext.p).abs() > AVERAGED_MAX_RATIO {
        return Err(Error::InvalidArgument(format!(
            "averaged rotating-frame mode needs |h/p| <= {AVERAGED_MAX_RATIO} (h = {}, p = {})",
            ext.h, ext.p
        )));
    }
    let s = ext.base.scale();
    let n = ops.basis.n_atoms() as f64;
    Ok(SparseOp::linear_combination(&[
        (C64::new(s * ext.base.c2p / n, 0.0), &ops.l2),
        (C64::new(-s * ext.base.q, 0.0), &ops.n0),
        (C64::new(-s * ext.h * ext.h / (2.0 * ext.p), 0.0), &ops.lz),
    ]))
}

/// Evolve a rotating-frame full-basis state for time `t` at constant parameters.
/// `t_frame` is the lab time at the start of the interval (the frame phase
/// depends on absolute time in exact mode).
pub fn evolve_rotating(
    psi: &StateVector,
    ops: &FullOperators,
    ext: &ExtendedParams,
    t_frame: f64,
    t: f64,
    mode: RotatingMode,
) -> Result<StateVector> {
    check_dim(ops.basis.len(), psi.dim())?;
    if !matches!(psi.space, Space::Full { .. }) {
        return Err(Error::InvalidArgument("rotating-frame evolution needs a full-basis state".into()));
    }
    match mode {
        RotatingMode::Averaged => {
            let h = averaged_hamiltonian(ops, ext)?;
            evolve_constant_op(psi, &h, t)
        }
        RotatingMode::ExactScaledP => {
            let s = ext.base.scale();
            let mut lab = psi.clone();
            rotate_about_z(&mut lab, ops, -s * ext.p * t_frame);
            let h = ops.hamiltonian(ext);
            let mut out = evolve_constant_op(&lab, &h, t)?;
            rotate_about_z(&mut out, ops, s * ext.p * (t_frame + t));
            Ok(out)
        }
    }
}

/// Result of the displaced-oscillator demonstration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillatorRun {
    pub times: Vec<f64>,
    pub mean_x: Vec<f64>,
    /// Squared overlap with the mirror-image displaced ground state.
    pub mirror_fidelity: Vec<f64>,
    pub x0: f64,
}

/// Ground state of a trap tilted so that it sits at `−x0` (coherent amplitude
/// `alpha`), released into the untilted trap for half a period `π/ω`.
pub fn oscillator_demo(mass: f64, omega: f64, alpha: f64, dim: usize, samples: usize) -> Result<OscillatorRun> {
    use crate::operators::{oscillator_hamiltonian, oscillator_position};
    if !(mass > 0.0 && omega > 0.0) || dim < 2 || samples < 1 {
        return Err(Error::InvalidArgument("oscillator needs positive mass and frequency, dim >= 2".into()));
    }
    let x0 = 2.0 * alpha * (1.0 / (2.0 * mass * omega)).sqrt();
    let f0 = mass * omega * omega * x0;
    let ground = |f: f64| -> Result<Vec<C64>> {
        let e = eigensolve_tridiagonal(&oscillator_hamiltonian(mass, omega, f, dim))?;
        Ok(e.vector(0).iter().map(|&v| C64::new(v, 0.0)).collect())
    };
    let start = ground(f0)?;
    let mirror = ground(-f0)?;
    let prop = SpectralPropagator::new(&oscillator_hamiltonian(mass, omega, 0.0, dim))?;
    let coeffs = prop.coefficients(&start);
    let x = oscillator_position(mass, omega, dim);
    let period_half = std::f64::consts::PI / omega;
    let mut run = OscillatorRun {
        times: Vec::new(),
        mean_x: Vec::new(),
        mirror_fidelity: Vec::new(),
        x0,
    };
    let mut y = vec![ZERO; dim];
    for i in 0..=samples {
        let t = period_half * i as f64 / samples as f64;
        let psi = prop.reconstruct(&coeffs, t);
        x.apply(&psi, &mut y);
        run.times.push(t);
        run.mean_x.push(psi.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum());
        run.mirror_fidelity.push(mirror.iter().zip(&psi).map(|(m, a)| m.conj() * a).sum::<C64>().norm_sqr());
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::polar_state;
    use crate::operators::{hamiltonian_pair, PhysicsParams};

    #[test]
    fn bessel_values() {
        let j = bessel_j_sequence(1.0, 4);
        assert!((j[0] - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!((j[1] - 0.440_050_585_744_933_5).abs() < 1e-14);
        assert!((j[2] - 0.114_903_484_931_900_5).abs() < 1e-14);
        let j = bessel_j_sequence(50.0, 3);
        assert!((j[0] - 0.055_812_327_669_251_85).abs() < 1e-13);
    }

    #[test]
    fn chebyshev_matches_spectral() {
        let p = PhysicsParams::new(25.0, 60, 0.8);
        let h = hamiltonian_pair(&p);
        let psi = polar_state(PairBasis::new(60).unwrap());
        for t in [0.0, 1e-3, 0.37, 2.0] {
            let a = evolve_constant(&psi, &h, t).unwrap();
            let b = evolve_constant_op(&psi, &h, t).unwrap();
            let d: f64 = a.amps.iter().zip(&b.amps).map(|(x, y)| (x - y).norm()).sum();
            assert!(d < 1e-9, "t={t} d={d}");
        }
    }

    #[test]
    fn eigenstate_is_stationary() {
        let p = PhysicsParams::new(25.0, 40, 0.3);
        let h = hamiltonian_pair(&p);
        let prop = SpectralPropagator::new(&h).unwrap();
        let v: Vec<C64> = prop.eigen.vector(3).iter().map(|&x| C64::new(x, 0.0)).collect();
        let psi = StateVector::new(Space::Chain(PairBasis::new(40).unwrap()), v);
        let out = prop.evolve(&psi, 1.7).unwrap();
        assert!((psi.overlap_sqr(&out) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let h = hamiltonian_pair(&PhysicsParams::new(25.0, 10, 0.0));
        let psi = polar_state(PairBasis::new(12).unwrap());
        assert!(matches!(
            evolve_constant(&psi, &h, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rk4_step_limit_enforced() {
        let basis = PairBasis::new(20).unwrap();
        let model = ChainModel::new(basis, 25.0, UnitConvention::Angular);
        let psi = polar_state(basis);
        let r = evolve_driven(
            &psi,
            &model,
            |_| 10.0,
            0.0,
            0.0,
            0.1,
            DriveOptions {
                dt: Some(1e-2),
                integrator: Integrator::Rk4,
            },
            |_, _| {},
        );
        assert!(matches!(r, Err(Error::StepSize { .. })));
    }

    #[test]
    fn oscillator_half_period_mirrors() {
        let run = oscillator_demo(1.0, 1.0, 10.0 / 2f64.sqrt(), 150, 8).unwrap();
        assert!((run.mean_x[0] + run.x0).abs() < 1e-6 * run.x0);
        assert!((run.mean_x[8] - run.x0).abs() < 1e-3 * run.x0);
        assert!(*run.mirror_fidelity.last().unwrap() >= 0.999);
        assert!(run.mirror_fidelity[4] < 1e-6);
    }

    #[test]
    fn constant_segment_by_stepping_matches_spectral() {
        let basis = PairBasis::new(40).unwrap();
        let model = ChainModel::new(basis, 25.0, UnitConvention::Angular);
        let psi = polar_state(basis);
        let exact = evolve_constant(&psi, &model.hamiltonian(0.7), 0.05).unwrap();
        for integrator in [Integrator::Magnus, Integrator::Rk4] {
            let opts = DriveOptions { dt: Some(1e-5), integrator };
            let stepped = evolve_driven(&psi, &model, |_| 0.7, 0.0, 0.0, 0.05, opts, |_, _| {}).unwrap();
            assert!(stepped.overlap_sqr(&exact) > 1.0 - 1e-8, "{integrator:?}");
        }
    }

    #[test]
    fn ramp_step_halving() {
        let basis = PairBasis::new(60).unwrap();
        let model = ChainModel::new(basis, 25.0, UnitConvention::Angular);
        let psi = polar_state(basis);
        let q = |t: f64| 30.0 * (1.0 - t / 0.25).powi(2);
        let run = |dt: f64| {
            evolve_driven(&psi, &model, q, 240.0, 0.0, 0.2, DriveOptions { dt: Some(dt), integrator: Integrator::Magnus }, |_, _| {}).unwrap()
        };
        let a = run(1e-4);
        let b = run(5e-5);
        assert!((a.overlap_sqr(&b) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn composition_and_energy_conservation() {
        let p = PhysicsParams::new(25.0, 50, 0.4);
        let h = hamiltonian_pair(&p);
        let psi = polar_state(PairBasis::new(50).unwrap());
        let once = evolve_constant_op(&psi, &h, 0.3).unwrap();
        let twice = evolve_constant_op(&evolve_constant_op(&psi, &h, 0.1).unwrap(), &h, 0.2).unwrap();
        assert!(once.overlap_sqr(&twice) >= 1.0 - 1e-9);
        let energy = |s: &StateVector| {
            let mut y = vec![ZERO; s.dim()];
            h.apply(&s.amps, &mut y);
            s.amps.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum::<f64>()
        };
        assert!((energy(&once) - energy(&psi)).abs() <= 1e-8 * h.norm_bound());
        assert!((once.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rotating_modes() {
        use crate::basis::FullBasis;
        use crate::operators::ExtendedParams;
        let n = 6;
        let full = FullBasis::new(n).unwrap();
        let ops = FullOperators::new(full.clone());
        let psi = polar_state(PairBasis::new(n).unwrap()).to_full(&full).unwrap();
        let base = PhysicsParams::new(25.0, n, 0.3);
        let no_h = ExtendedParams { base, p: 1000.0, h: 0.0 };
        let avg = evolve_rotating(&psi, &ops, &no_h, 0.0, 0.2, RotatingMode::Averaged).unwrap();
        let chain = evolve_constant(&polar_state(PairBasis::new(n).unwrap()), &hamiltonian_pair(&base), 0.2).unwrap();
        assert!(avg.overlap_sqr(&chain.to_full(&full).unwrap()) > 1.0 - 1e-10);
        let static_h = ExtendedParams { base, p: 0.0, h: 3.0 };
        let ex = evolve_rotating(&psi, &ops, &static_h, 0.0, 0.2, RotatingMode::ExactScaledP).unwrap();
        let direct = evolve_constant_op(&psi, &ops.hamiltonian(&static_h), 0.2).unwrap();
        assert!(ex.overlap_sqr(&direct) > 1.0 - 1e-10);
        let strong = ExtendedParams { base, p: 100.0, h: 3.0 };
        assert!(evolve_rotating(&psi, &ops, &strong, 0.0, 0.1, RotatingMode::Averaged).is_err());
    }
}
