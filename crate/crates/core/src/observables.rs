//! Scalar diagnostics of chain and full-basis states.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::basis::{FullBasis, PairBasis, Space, StateVector};
use crate::error::{Error, Result};
use crate::operators::{hamiltonian_chain, l2_chain, FullOperators, HermitianOp, UnitConvention};
use crate::spectra::{eigensolve_tridiagonal, EigenSystem};

/// Population threshold above which a reference level counts as occupied.
pub const DEFAULT_K_THRESHOLD: f64 = 1e-3;

/// One time-stamped row of diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub t: f64,
    pub q: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "F_singlet")]
    pub f_singlet: f64,
    #[serde(rename = "F_twinfock")]
    pub f_twinfock: f64,
    pub xi2: f64,
    pub pc: f64,
    pub norm: f64,
    pub n_current: f64,
}

/// `|⟨v_j|ψ⟩|²` for every reference level.
pub fn level_populations(psi: &[C64], reference: &EigenSystem) -> Vec<f64> {
    (0..reference.dim())
        .map(|j| overlap_real(reference.vector(j), psi).norm_sqr())
        .collect()
}

fn overlap_real(v: &[f64], psi: &[C64]) -> C64 {
    v.iter().zip(psi).map(|(a, b)| b * *a).sum()
}

/// Number of reference levels holding more than `threshold` population.
///
/// Levels are visited in ascending energy; once the unvisited remainder of
/// the norm drops below `threshold` no further level can qualify.
pub fn occupied_levels(psi: &StateVector, reference: &EigenSystem, threshold: f64) -> Result<usize> {
    if psi.dim() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            got: psi.dim(),
        });
    }
    let total = psi.norm_sqr();
    Ok(count_occupied(&psi.amps, reference, threshold, total))
}

pub(crate) fn count_occupied(psi: &[C64], reference: &EigenSystem, threshold: f64, total: f64) -> usize {
    let mut seen = 0.0;
    let mut k = 0;
    for j in 0..reference.dim() {
        if total - seen <= threshold {
            break;
        }
        let p = overlap_real(reference.vector(j), psi).norm_sqr();
        seen += p;
        if p > threshold {
            k += 1;
        }
    }
    k
}

/// q = 0 eigenbasis of one chain sector plus the operators needed for all
/// chain diagnostics.
#[derive(Clone, Debug)]
pub struct ChainObserver {
    pub basis: PairBasis,
    pub reference: EigenSystem,
    l2: crate::operators::TriMatrix,
    n0: Vec<f64>,
    pub k_threshold: f64,
}

impl ChainObserver {
    pub fn new(basis: PairBasis, c2p: f64) -> Result<Self> {
        let h0 = hamiltonian_chain(basis, c2p, 0.0, UnitConvention::Plain);
        Ok(Self {
            basis,
            reference: eigensolve_tridiagonal(&h0)?,
            l2: l2_chain(basis),
            n0: basis.n_zero(),
            k_threshold: DEFAULT_K_THRESHOLD,
        })
    }

    /// Singlet is the `l = 0` ground level; exists only for even `N`, `M = 0`.
    pub fn has_singlet(&self) -> bool {
        self.basis.magnetization() == 0 && self.basis.n_atoms() % 2 == 0
    }

    pub fn singlet(&self) -> Option<&[f64]> {
        self.has_singlet().then(|| self.reference.vector(0))
    }

    pub fn occupied_levels(&self, psi: &[C64]) -> usize {
        let total: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
        count_occupied(psi, &self.reference, self.k_threshold, total)
    }

    pub fn fidelity_singlet(&self, psi: &[C64]) -> f64 {
        match self.singlet() {
            Some(s) => overlap_real(s, psi).norm_sqr().clamp(0.0, 1.0),
            None => 0.0,
        }
    }

    pub fn fidelity_twinfock(&self, psi: &[C64]) -> f64 {
        if !self.has_singlet() {
            return 0.0;
        }
        psi[self.basis.n_atoms() / 2].norm_sqr().clamp(0.0, 1.0)
    }

    /// `⟨L²⟩` for a (possibly unnormalized) state, divided by its norm.
    pub fn l2_expectation(&self, psi: &[C64]) -> f64 {
        let mut y = vec![C64::new(0.0, 0.0); psi.len()];
        self.l2.apply(psi, &mut y);
        let num: f64 = psi.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum();
        num / psi.iter().map(|a| a.norm_sqr()).sum::<f64>()
    }

    pub fn n0_expectation(&self, psi: &[C64]) -> f64 {
        let num: f64 = psi.iter().zip(&self.n0).map(|(a, n)| a.norm_sqr() * n).sum();
        num / psi.iter().map(|a| a.norm_sqr()).sum::<f64>()
    }

    /// Chain state: `⟨L_x⟩ = ⟨L_y⟩ = 0`, `⟨L_z⟩ = M`, so
    /// `ξ² = (⟨L²⟩ − M²)/N`.
    pub fn xi2(&self, psi: &[C64]) -> f64 {
        let m = self.basis.magnetization() as f64;
        ((self.l2_expectation(psi) - m * m) / self.basis.n_atoms() as f64).max(0.0)
    }

    /// `ξ²` via `⟨L_x²⟩ = ⟨L_y²⟩ = (⟨L²⟩ − ⟨L_z²⟩)/2`, summed component by component.
    pub fn xi2_by_components(&self, psi: &[C64]) -> f64 {
        let m = self.basis.magnetization() as f64;
        let l2 = self.l2_expectation(psi);
        let lz2 = m * m;
        let lxx = 0.5 * (l2 - lz2);
        let var = lxx + lxx + (lz2 - m * m);
        (var / self.basis.n_atoms() as f64).max(0.0)
    }

    pub fn conversion_efficiency(&self, psi: &[C64]) -> f64 {
        let n = self.basis.n_atoms() as f64;
        ((n - self.n0_expectation(psi)) / n).clamp(0.0, 1.0)
    }

    pub fn record(&self, t: f64, q: f64, psi: &[C64]) -> ObservableRecord {
        let norm = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        ObservableRecord {
            t,
            q,
            k: self.occupied_levels(psi),
            f_singlet: self.fidelity_singlet(psi),
            f_twinfock: self.fidelity_twinfock(psi),
            xi2: self.xi2(psi),
            pc: self.conversion_efficiency(psi),
            norm,
            n_current: self.basis.n_atoms() as f64,
        }
    }
}

/// Full-basis diagnostics; level counting uses the `M = 0` component.
#[derive(Clone, Debug)]
pub struct FullObserver {
    pub chain: ChainObserver,
}

impl FullObserver {
    pub fn new(basis: &FullBasis, c2p: f64) -> Result<Self> {
        Ok(Self {
            chain: ChainObserver::new(PairBasis::new(basis.n_atoms())?, c2p)?,
        })
    }

    pub fn record(&self, ops: &FullOperators, t: f64, q: f64, psi: &StateVector) -> Result<ObservableRecord> {
        let zero = psi.chain_component(&ops.basis, 0)?;
        let n = ops.basis.n_atoms() as f64;
        let nrm2 = psi.norm_sqr();
        let e = |op: &crate::operators::SparseOp| op.expectation(&psi.amps).re / nrm2;
        let l2 = e(&ops.l2);
        let (lx, ly, lz) = (e(&ops.lx), e(&ops.ly), e(&ops.lz));
        let xi2 = ((l2 - lx * lx - ly * ly - lz * lz) / n).max(0.0);
        Ok(ObservableRecord {
            t,
            q,
            k: self.chain.occupied_levels(&zero.amps),
            f_singlet: self.chain.fidelity_singlet(&zero.amps) / nrm2,
            f_twinfock: self.chain.fidelity_twinfock(&zero.amps) / nrm2,
            xi2,
            pc: ((n - e(&ops.n0)) / n).clamp(0.0, 1.0),
            norm: nrm2.sqrt(),
            n_current: n,
        })
    }
}

/// `ξ² = Σ_α (ΔL_α)² / N` for a full-basis state, every moment taken directly.
pub fn squeezing_full(ops: &FullOperators, psi: &StateVector) -> f64 {
    let nrm2 = psi.norm_sqr();
    let e = |op: &crate::operators::SparseOp| op.expectation(&psi.amps).re / nrm2;
    let mut tmp = vec![C64::new(0.0, 0.0); psi.dim()];
    let mut second = 0.0;
    let mut first = 0.0;
    for op in [&ops.lx, &ops.ly, &ops.lz] {
        op.apply(&psi.amps, &mut tmp);
        second += tmp.iter().map(|a| a.norm_sqr()).sum::<f64>() / nrm2;
        let m = e(op);
        first += m * m;
    }
    (second - first) / ops.basis.n_atoms() as f64
}

/// Convenience: `ξ²` of a chain state.
pub fn squeezing_xi2(psi: &StateVector) -> Result<f64> {
    match psi.space {
        Space::Chain(b) => {
            let l2 = l2_chain(b);
            let mut y = vec![C64::new(0.0, 0.0); psi.dim()];
            l2.apply(&psi.amps, &mut y);
            let m = b.magnetization() as f64;
            let v: f64 = psi.amps.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum();
            Ok(((v / psi.norm_sqr() - m * m) / b.n_atoms() as f64).max(0.0))
        }
        Space::Full { .. } => Err(Error::InvalidArgument(
            "use squeezing_full with the full-basis operators".into(),
        )),
    }
}

/// Squared overlap with the `q = 0` ground level of the same chain; 0 for odd `N`.
pub fn fidelity_singlet(psi: &StateVector, observer: &ChainObserver) -> f64 {
    observer.fidelity_singlet(&psi.amps)
}

pub fn fidelity_twinfock(psi: &StateVector, observer: &ChainObserver) -> f64 {
    observer.fidelity_twinfock(&psi.amps)
}

pub fn conversion_efficiency(psi: &StateVector, observer: &ChainObserver) -> f64 {
    observer.conversion_efficiency(&psi.amps)
}

/// Ensemble-level squeezing: first and second moments are averaged over
/// members before the variance is formed, normalized by the mean atom number.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MomentAccumulator {
    pub weight: f64,
    pub l2: f64,
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    pub n: f64,
}

impl MomentAccumulator {
    pub fn add(&mut self, w: f64, l2: f64, l: [f64; 3], n: f64) {
        self.weight += w;
        self.l2 += w * l2;
        self.lx += w * l[0];
        self.ly += w * l[1];
        self.lz += w * l[2];
        self.n += w * n;
    }

    pub fn xi2(&self) -> f64 {
        if self.weight == 0.0 {
            return f64::NAN;
        }
        let w = self.weight;
        let (lx, ly, lz) = (self.lx / w, self.ly / w, self.lz / w);
        ((self.l2 / w - lx * lx - ly * ly - lz * lz) / (self.n / w)).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{polar_state, twin_fock_state};

    fn c(v: &[f64]) -> Vec<C64> {
        v.iter().map(|&x| C64::new(x, 0.0)).collect()
    }

    #[test]
    fn singlet_has_k1_and_zero_xi2() {
        let obs = ChainObserver::new(PairBasis::new(20).unwrap(), 25.0).unwrap();
        let s = c(obs.reference.vector(0));
        assert_eq!(obs.occupied_levels(&s), 1);
        assert!(obs.xi2(&s).abs() < 1e-12);
        assert!((obs.fidelity_singlet(&s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_level_superposition() {
        let obs = ChainObserver::new(PairBasis::new(20).unwrap(), 25.0).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let v: Vec<f64> = obs
            .reference
            .vector(0)
            .iter()
            .zip(obs.reference.vector(3))
            .map(|(a, b)| r * (a + b))
            .collect();
        assert_eq!(obs.occupied_levels(&c(&v)), 2);
        let phased: Vec<C64> = c(&v).iter().map(|a| a * C64::from_polar(1.0, 0.7)).collect();
        assert_eq!(obs.occupied_levels(&phased), 2);
    }

    #[test]
    fn polar_and_twin_fock_values() {
        let b = PairBasis::new(40).unwrap();
        let obs = ChainObserver::new(b, 25.0).unwrap();
        let p = polar_state(b);
        assert!((obs.xi2(&p.amps) - 2.0).abs() < 1e-12);
        assert_eq!(obs.conversion_efficiency(&p.amps), 0.0);
        let tf = twin_fock_state(b).unwrap();
        assert_eq!(obs.fidelity_twinfock(&tf.amps), 1.0);
        assert!((obs.conversion_efficiency(&tf.amps) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn n2_singlet_overlaps() {
        let b = PairBasis::new(2).unwrap();
        let obs = ChainObserver::new(b, 25.0).unwrap();
        let p = polar_state(b);
        assert!((obs.fidelity_singlet(&p.amps) - 1.0 / 3.0).abs() < 1e-12);
        let s = c(obs.reference.vector(0));
        assert!((obs.conversion_efficiency(&s) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn odd_ground_state_xi2() {
        for n in [11usize, 101] {
            let obs = ChainObserver::new(PairBasis::new(n).unwrap(), 25.0).unwrap();
            let g = c(obs.reference.vector(0));
            assert!((obs.xi2(&g) - 2.0 / n as f64).abs() < 1e-10);
            assert_eq!(obs.fidelity_singlet(&g), 0.0);
        }
    }

    #[test]
    fn coherent_spin_state_xi2_is_one() {
        for n in 1..=6 {
            let full = FullBasis::new(n).unwrap();
            let ops = FullOperators::new(full.clone());
            let mut amps = vec![C64::new(0.0, 0.0); full.len()];
            let idx = full
                .index_of(crate::basis::Occupation {
                    minus: 0,
                    zero: 0,
                    plus: n,
                })
                .unwrap();
            amps[idx] = C64::new(1.0, 0.0);
            let psi = StateVector::new(
                Space::Full {
                    n_atoms: n,
                    max_abs_m: n,
                },
                amps,
            );
            assert!((squeezing_full(&ops, &psi) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn both_xi2_paths_agree() {
        let b = PairBasis::new(30).unwrap();
        let obs = ChainObserver::new(b, 25.0).unwrap();
        let psi: Vec<C64> = (0..b.size())
            .map(|k| C64::from_polar(1.0 / (1.0 + k as f64), 0.3 * k as f64))
            .collect();
        assert!((obs.xi2(&psi) - obs.xi2_by_components(&psi)).abs() < 1e-10);
    }

    #[test]
    fn completeness_of_populations() {
        let b = PairBasis::new(24).unwrap();
        let obs = ChainObserver::new(b, 25.0).unwrap();
        let mut psi = polar_state(b);
        psi.amps[3] = C64::new(0.2, -0.4);
        psi.normalize();
        let pops = level_populations(&psi.amps, &obs.reference);
        let rest: f64 = pops[1..].iter().sum();
        assert!((obs.fidelity_singlet(&psi.amps) + rest - 1.0).abs() < 1e-10);
    }
}
