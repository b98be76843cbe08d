//! Fock bases of the three-mode (m = -1, 0, +1) spin-1 condensate.
//!
//! [`PairBasis`] is the chain of configurations with fixed atom number and
//! magnetization `M = n₊₁ − n₋₁`; for `M = 0` it is labeled by the number `k`
//! of (+1, −1) pairs. [`FullBasis`] spans every magnetization block and is
//! needed once a transverse field couples neighbouring blocks.

pub use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Largest atom number accepted by [`FullBasis::new`] unless a cap is given.
pub const DEFAULT_FULL_BASIS_CAP: usize = 300;

/// Occupations `(n₋₁, n₀, n₊₁)` of a single Fock configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Occupation {
    pub minus: usize,
    pub zero: usize,
    pub plus: usize,
}

impl Occupation {
    pub fn n_atoms(&self) -> usize {
        self.minus + self.zero + self.plus
    }

    pub fn magnetization(&self) -> i64 {
        self.plus as i64 - self.minus as i64
    }
}

/// Configurations with fixed `N` and `M`, indexed by `k = min(n₊₁, n₋₁)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PairBasis {
    n_atoms: usize,
    magnetization: i64,
}

impl PairBasis {
    /// Zero-magnetization sector: `n₊₁ = n₋₁ = k`, `n₀ = N − 2k`.
    pub fn new(n_atoms: usize) -> Result<Self> {
        Self::with_magnetization(n_atoms, 0)
    }

    pub fn with_magnetization(n_atoms: usize, magnetization: i64) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::InvalidArgument("atom number must be at least 1".into()));
        }
        if magnetization.unsigned_abs() as usize > n_atoms {
            return Err(Error::InvalidArgument(format!(
                "magnetization {magnetization} out of range for N = {n_atoms}"
            )));
        }
        Ok(Self {
            n_atoms,
            magnetization,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn magnetization(&self) -> i64 {
        self.magnetization
    }

    pub fn size(&self) -> usize {
        (self.n_atoms - self.magnetization.unsigned_abs() as usize) / 2 + 1
    }

    pub fn occupation(&self, k: usize) -> Occupation {
        debug_assert!(k < self.size());
        let am = self.magnetization.unsigned_abs() as usize;
        let (minus, plus) = if self.magnetization >= 0 {
            (k, k + am)
        } else {
            (k + am, k)
        };
        Occupation {
            minus,
            zero: self.n_atoms - am - 2 * k,
            plus,
        }
    }

    pub fn index_of(&self, occ: Occupation) -> Option<usize> {
        if occ.n_atoms() != self.n_atoms || occ.magnetization() != self.magnetization {
            return None;
        }
        Some(occ.minus.min(occ.plus))
    }

    /// `n₀` for every chain index, as floats.
    pub fn n_zero(&self) -> Vec<f64> {
        (0..self.size())
            .map(|k| self.occupation(k).zero as f64)
            .collect()
    }
}

/// All `(N+1)(N+2)/2` configurations, grouped into contiguous M-blocks
/// (M ascending). Within a block states run from largest `n₋₁` (smallest
/// `n₀`) to smallest.
#[derive(Clone, Debug)]
pub struct FullBasis {
    n_atoms: usize,
    states: Vec<Occupation>,
    block_starts: Vec<usize>,
    m_min: i64,
}

impl FullBasis {
    pub fn new(n_atoms: usize) -> Result<Self> {
        Self::with_cap(n_atoms, DEFAULT_FULL_BASIS_CAP)
    }

    pub fn with_cap(n_atoms: usize, cap: usize) -> Result<Self> {
        Self::windowed_with_cap(n_atoms, n_atoms, cap)
    }

    /// Only blocks with `|M| ≤ max_abs_m`. Used when the dynamics stays close to
    /// `M = 0` and the outer blocks carry negligible weight.
    pub fn windowed(n_atoms: usize, max_abs_m: usize) -> Result<Self> {
        Self::windowed_with_cap(n_atoms, max_abs_m, DEFAULT_FULL_BASIS_CAP)
    }

    pub fn windowed_with_cap(n_atoms: usize, max_abs_m: usize, cap: usize) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::InvalidArgument("atom number must be at least 1".into()));
        }
        if n_atoms > cap {
            return Err(Error::ResourceCap {
                what: "full-basis atom number",
                value: n_atoms,
                cap,
            });
        }
        let mm = max_abs_m.min(n_atoms) as i64;
        let mut states = Vec::new();
        let mut block_starts = Vec::new();
        for m in -mm..=mm {
            block_starts.push(states.len());
            let chain = PairBasis::with_magnetization(n_atoms, m)?;
            // largest n₋₁ first
            for k in (0..chain.size()).rev() {
                states.push(chain.occupation(k));
            }
        }
        block_starts.push(states.len());
        Ok(Self {
            n_atoms,
            states,
            block_starts,
            m_min: -mm,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Occupation] {
        &self.states
    }

    pub fn max_abs_m(&self) -> usize {
        (-self.m_min) as usize
    }

    /// Index range of the block with magnetization `m`.
    pub fn block(&self, m: i64) -> Option<std::ops::Range<usize>> {
        if m < self.m_min || m > -self.m_min {
            return None;
        }
        let b = (m - self.m_min) as usize;
        Some(self.block_starts[b]..self.block_starts[b + 1])
    }

    pub fn index_of(&self, occ: Occupation) -> Option<usize> {
        if occ.n_atoms() != self.n_atoms {
            return None;
        }
        let range = self.block(occ.magnetization())?;
        let chain = PairBasis::with_magnetization(self.n_atoms, occ.magnetization()).ok()?;
        let k = chain.index_of(occ)?;
        Some(range.start + (chain.size() - 1 - k))
    }

    /// Full-basis index of chain element `k` of the `M` block.
    pub fn index_of_chain(&self, m: i64, k: usize) -> Option<usize> {
        let range = self.block(m)?;
        let len = range.len();
        (k < len).then(|| range.start + len - 1 - k)
    }
}

/// Which representation a [`StateVector`] lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Chain(PairBasis),
    /// Full basis with the given atom number and `|M|` window.
    Full { n_atoms: usize, max_abs_m: usize },
}

impl Space {
    pub fn n_atoms(&self) -> usize {
        match self {
            Space::Chain(b) => b.n_atoms(),
            Space::Full { n_atoms, .. } => *n_atoms,
        }
    }
}

/// Complex amplitudes over a basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub space: Space,
    pub amps: Vec<C64>,
}

impl StateVector {
    pub fn new(space: Space, amps: Vec<C64>) -> Self {
        Self { space, amps }
    }

    pub fn basis_state(basis: PairBasis, k: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); basis.size()];
        amps[k] = C64::new(1.0, 0.0);
        Self::new(Space::Chain(basis), amps)
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.space.n_atoms()
    }

    pub fn pair_basis(&self) -> Option<PairBasis> {
        match self.space {
            Space::Chain(b) => Some(b),
            Space::Full { .. } => None,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            let inv = 1.0 / n;
            self.amps.iter_mut().for_each(|a| *a *= inv);
        }
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn overlap_sqr(&self, other: &StateVector) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Embed a chain state into a full basis of the same atom number.
    pub fn to_full(&self, full: &FullBasis) -> Result<StateVector> {
        let b = self
            .pair_basis()
            .ok_or_else(|| Error::InvalidArgument("state is already in a full basis".into()))?;
        if b.n_atoms() != full.n_atoms() {
            return Err(Error::InvalidArgument("atom numbers differ".into()));
        }
        let mut amps = vec![C64::new(0.0, 0.0); full.len()];
        for (k, a) in self.amps.iter().enumerate() {
            let idx = full
                .index_of_chain(b.magnetization(), k)
                .ok_or_else(|| Error::InvalidArgument("magnetization outside window".into()))?;
            amps[idx] = *a;
        }
        Ok(StateVector::new(
            Space::Full {
                n_atoms: full.n_atoms(),
                max_abs_m: full.max_abs_m(),
            },
            amps,
        ))
    }

    /// Project a full-basis state onto one magnetization chain (no renormalization).
    pub fn chain_component(&self, full: &FullBasis, m: i64) -> Result<StateVector> {
        let range = full
            .block(m)
            .ok_or_else(|| Error::InvalidArgument(format!("block M={m} not in basis")))?;
        let chain = PairBasis::with_magnetization(full.n_atoms(), m)?;
        let len = range.len();
        let amps = (0..len).map(|k| self.amps[range.start + len - 1 - k]).collect();
        Ok(StateVector::new(Space::Chain(chain), amps))
    }
}

/// All atoms in `m = 0` (k = 0).
pub fn polar_state(basis: PairBasis) -> StateVector {
    StateVector::basis_state(basis, 0)
}

/// `N/2` atoms in each of `m = ±1` (k = N/2). Requires even `N`, `M = 0`.
pub fn twin_fock_state(basis: PairBasis) -> Result<StateVector> {
    if basis.magnetization() != 0 || basis.n_atoms() % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "twin-Fock state needs even N and M = 0 (N = {}, M = {})",
            basis.n_atoms(),
            basis.magnetization()
        )));
    }
    Ok(StateVector::basis_state(basis, basis.n_atoms() / 2))
}
