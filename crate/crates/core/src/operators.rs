//! Hamiltonians and angular-momentum operators.
//!
//! Chain operators are symmetric tridiagonal ([`TriMatrix`]); full-basis
//! operators are Hermitian sparse matrices ([`SparseOp`]). All energies are
//! given in Hz and converted to internal units by [`UnitConvention`].

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::basis::{FullBasis, Occupation, PairBasis};

/// Conversion from Hz inputs to the generator used in `exp(−iHt)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitConvention {
    /// `H_internal = 2π · H_Hz` (rad/s).
    #[default]
    Angular,
    /// `H_internal = H_Hz`.
    Plain,
}

impl UnitConvention {
    pub fn scale(self) -> f64 {
        match self {
            UnitConvention::Angular => 2.0 * PI,
            UnitConvention::Plain => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UnitConvention::Angular => "angular",
            UnitConvention::Plain => "plain",
        }
    }
}

impl std::str::FromStr for UnitConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "angular" => Ok(Self::Angular),
            "plain" => Ok(Self::Plain),
            other => Err(format!("unknown unit convention '{other}'")),
        }
    }
}

/// Single-mode spinor parameters; `c2p` and `q` in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub c2p: f64,
    pub n_atoms: usize,
    pub q: f64,
    #[serde(default)]
    pub convention: UnitConvention,
}

impl PhysicsParams {
    pub fn new(c2p: f64, n_atoms: usize, q: f64) -> Self {
        Self {
            c2p,
            n_atoms,
            q,
            convention: UnitConvention::default(),
        }
    }

    pub fn with_q(mut self, q: f64) -> Self {
        self.q = q;
        self
    }

    pub fn with_n(mut self, n_atoms: usize) -> Self {
        self.n_atoms = n_atoms;
        self
    }

    pub fn with_convention(mut self, convention: UnitConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn scale(&self) -> f64 {
        self.convention.scale()
    }
}

/// Gyromagnetic ratio of the F = 1 manifold, Hz/G.
pub const GYROMAGNETIC_HZ_PER_G: f64 = -0.7e6;

/// Parameters including the linear Zeeman term `p` and transverse coupling `h` (Hz).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedParams {
    pub base: PhysicsParams,
    pub p: f64,
    pub h: f64,
}

impl ExtendedParams {
    /// `p = −γ(B_z + δB_z)`, `h = −γ δB_x` with fields in gauss.
    pub fn from_fields(base: PhysicsParams, b_z: f64, delta_bz: f64, delta_bx: f64) -> Self {
        Self {
            base,
            p: -GYROMAGNETIC_HZ_PER_G * (b_z + delta_bz),
            h: -GYROMAGNETIC_HZ_PER_G * delta_bx,
        }
    }
}

/// Real symmetric tridiagonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMatrix {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

impl TriMatrix {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Self {
        assert_eq!(
            offdiag.len() + 1,
            diag.len().max(1),
            "off-diagonal length must be D - 1"
        );
        Self { diag, offdiag }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn scaled(&self, s: f64) -> TriMatrix {
        TriMatrix {
            diag: self.diag.iter().map(|d| d * s).collect(),
            offdiag: self.offdiag.iter().map(|o| o * s).collect(),
        }
    }

    /// `self + s · diag(v)`.
    pub fn add_diagonal(&self, s: f64, v: &[f64]) -> TriMatrix {
        TriMatrix {
            diag: self.diag.iter().zip(v).map(|(d, x)| d + s * x).collect(),
            offdiag: self.offdiag.clone(),
        }
    }

    pub fn apply_real(&self, x: &[f64], y: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.offdiag[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.offdiag[i] * x[i + 1];
            }
            y[i] = acc;
        }
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            m[i][i] = self.diag[i];
            if i + 1 < n {
                m[i][i + 1] = self.offdiag[i];
                m[i + 1][i] = self.offdiag[i];
            }
        }
        m
    }
}

/// Operators that can act on complex state vectors and bound their spectrum.
pub trait HermitianOp: Sync {
    fn dim(&self) -> usize;
    /// `y ← H x`.
    fn apply(&self, x: &[C64], y: &mut [C64]);
    /// Interval guaranteed to contain the spectrum.
    fn spectral_bounds(&self) -> (f64, f64);

    /// Upper bound on the operator norm.
    fn norm_bound(&self) -> f64 {
        let (lo, hi) = self.spectral_bounds();
        lo.abs().max(hi.abs())
    }
}

impl HermitianOp for TriMatrix {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let n = self.diag.len();
        if n == 0 {
            return;
        }
        if n == 1 {
            y[0] = x[0] * self.diag[0];
            return;
        }
        y[0] = x[0] * self.diag[0] + x[1] * self.offdiag[0];
        for i in 1..n - 1 {
            y[i] = x[i - 1] * self.offdiag[i - 1] + x[i] * self.diag[i] + x[i + 1] * self.offdiag[i];
        }
        y[n - 1] = x[n - 2] * self.offdiag[n - 2] + x[n - 1] * self.diag[n - 1];
    }

    fn spectral_bounds(&self) -> (f64, f64) {
        // Gershgorin
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut r = 0.0;
            if i > 0 {
                r += self.offdiag[i - 1].abs();
            }
            if i + 1 < n {
                r += self.offdiag[i].abs();
            }
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }
}

/// Compressed-row complex sparse matrix, assumed Hermitian.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOp {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOp {
    /// Sum duplicate `(row, col)` entries; drops exact zeros.
    pub fn from_triplets(dim: usize, mut entries: Vec<(usize, usize, C64)>) -> Self {
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<C64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut op = Self {
            dim,
            row_ptr,
            cols,
            vals,
        };
        op.prune();
        op
    }

    fn prune(&mut self) {
        let mut row_ptr = vec![0usize; self.dim + 1];
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        for r in 0..self.dim {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.vals[i] != C64::new(0.0, 0.0) {
                    cols.push(self.cols[i]);
                    vals.push(self.vals[i]);
                }
            }
            row_ptr[r + 1] = cols.len();
        }
        self.row_ptr = row_ptr;
        self.cols = cols;
        self.vals = vals;
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let entries = values
            .iter()
            .enumerate()
            .map(|(i, &v)| (i, i, C64::new(v, 0.0)))
            .collect();
        Self::from_triplets(values.len(), entries)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        for i in self.row_ptr[r]..self.row_ptr[r + 1] {
            if self.cols[i] == c {
                return self.vals[i];
            }
        }
        C64::new(0.0, 0.0)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |i| (r, self.cols[i], self.vals[i]))
        })
    }

    /// `Σ cᵢ Aᵢ` over operators of the same dimension.
    pub fn linear_combination(terms: &[(C64, &SparseOp)]) -> SparseOp {
        let dim = terms.first().map_or(0, |t| t.1.dim);
        let entries = terms
            .iter()
            .flat_map(|(c, op)| {
                assert_eq!(op.dim, dim);
                op.triplets().map(move |(r, col, v)| (r, col, *c * v))
            })
            .collect();
        SparseOp::from_triplets(dim, entries)
    }

    /// `⟨x|A|x⟩`.
    pub fn expectation(&self, x: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..self.dim {
            let mut row = C64::new(0.0, 0.0);
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.vals[i] * x[self.cols[i]];
            }
            acc += x[r].conj() * row;
        }
        acc
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.triplets()
            .all(|(r, c, v)| (v - self.get(c, r).conj()).norm() <= tol)
    }
}

impl HermitianOp for SparseOp {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        for r in 0..self.dim {
            let mut acc = C64::new(0.0, 0.0);
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[i] * x[self.cols[i]];
            }
            y[r] = acc;
        }
    }

    fn spectral_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in 0..self.dim {
            let mut d = 0.0;
            let mut rad = 0.0;
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.cols[i] == r {
                    d = self.vals[i].re;
                } else {
                    rad += self.vals[i].norm();
                }
            }
            lo = lo.min(d - rad);
            hi = hi.max(d + rad);
        }
        if self.dim == 0 {
            (0.0, 0.0)
        } else {
            (lo, hi)
        }
    }
}

/// `L²` on an `(N, M)` chain, unscaled.
///
/// Diagonal: `M² + M + 2[n₀(n₊₁+1) + n₋₁(n₀+1)]`; the off-diagonal couples
/// `k → k+1` through `2 a₊₁† a₋₁† a₀ a₀`.
pub fn l2_chain(basis: PairBasis) -> TriMatrix {
    let m = basis.magnetization() as f64;
    let size = basis.size();
    let mut diag = Vec::with_capacity(size);
    let mut off = Vec::with_capacity(size.saturating_sub(1));
    for k in 0..size {
        let o = basis.occupation(k);
        let (nm, n0, np) = (o.minus as f64, o.zero as f64, o.plus as f64);
        diag.push(m * m + m + 2.0 * (n0 * (np + 1.0) + nm * (n0 + 1.0)));
        if k + 1 < size {
            off.push(2.0 * ((np + 1.0) * (nm + 1.0) * n0 * (n0 - 1.0)).sqrt());
        }
    }
    TriMatrix::new(diag, off)
}

/// `L²` on the zero-magnetization pair basis:
/// `diag[k] = 2[(N−2k)(2k+1) + k]`, `off[k] = 2(k+1)√((N−2k)(N−2k−1))`.
pub fn l2_pair(n_atoms: usize) -> TriMatrix {
    let n = n_atoms as f64;
    let size = n_atoms / 2 + 1;
    let diag = (0..size)
        .map(|k| {
            let k = k as f64;
            2.0 * ((n - 2.0 * k) * (2.0 * k + 1.0) + k)
        })
        .collect();
    let off = (0..size.saturating_sub(1))
        .map(|k| {
            let k = k as f64;
            let n0 = n - 2.0 * k;
            2.0 * (k + 1.0) * (n0 * (n0 - 1.0)).sqrt()
        })
        .collect();
    TriMatrix::new(diag, off)
}

/// `c'₂ L²/N − q n₀` on a chain, in internal units. `N` is the chain's own
/// atom number.
pub fn hamiltonian_chain(basis: PairBasis, c2p: f64, q: f64, convention: UnitConvention) -> TriMatrix {
    let s = convention.scale();
    let n = basis.n_atoms() as f64;
    l2_chain(basis)
        .scaled(s * c2p / n)
        .add_diagonal(-s * q, &basis.n_zero())
}

/// Zero-magnetization Hamiltonian for `params`.
pub fn hamiltonian_pair(params: &PhysicsParams) -> TriMatrix {
    let basis = PairBasis::new(params.n_atoms).expect("n_atoms >= 1");
    let s = params.scale();
    let n = params.n_atoms as f64;
    l2_pair(params.n_atoms)
        .scaled(s * params.c2p / n)
        .add_diagonal(-s * params.q, &basis.n_zero())
}

fn full_diagonal(basis: &FullBasis, f: impl Fn(&Occupation) -> f64) -> SparseOp {
    let v: Vec<f64> = basis.states().iter().map(f).collect();
    SparseOp::diagonal(&v)
}

/// `L_z`, diagonal with value `M`.
pub fn lz_full(basis: &FullBasis) -> SparseOp {
    full_diagonal(basis, |o| o.magnetization() as f64)
}

/// `n₀ = a₀†a₀`.
pub fn n0_full(basis: &FullBasis) -> SparseOp {
    full_diagonal(basis, |o| o.zero as f64)
}

/// Matrix elements of `L₊ = √2(a₁†a₀ + a₀†a₋₁)` as `(row, col, value)`.
fn l_plus_entries(basis: &FullBasis) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (col, o) in basis.states().iter().enumerate() {
        if o.zero > 0 {
            let to = Occupation {
                minus: o.minus,
                zero: o.zero - 1,
                plus: o.plus + 1,
            };
            if let Some(row) = basis.index_of(to) {
                out.push((row, col, SQRT_2 * ((o.zero * (o.plus + 1)) as f64).sqrt()));
            }
        }
        if o.minus > 0 {
            let to = Occupation {
                minus: o.minus - 1,
                zero: o.zero + 1,
                plus: o.plus,
            };
            if let Some(row) = basis.index_of(to) {
                out.push((row, col, SQRT_2 * ((o.minus * (o.zero + 1)) as f64).sqrt()));
            }
        }
    }
    out
}

/// `L_x = (L₊ + L₋)/2`; couples `M ↔ M±1` only.
pub fn lx_full(basis: &FullBasis) -> SparseOp {
    let mut entries = Vec::new();
    for (r, c, v) in l_plus_entries(basis) {
        entries.push((r, c, C64::new(0.5 * v, 0.0)));
        entries.push((c, r, C64::new(0.5 * v, 0.0)));
    }
    SparseOp::from_triplets(basis.len(), entries)
}

/// `L_y = (L₊ − L₋)/(2i)`.
pub fn ly_full(basis: &FullBasis) -> SparseOp {
    let mut entries = Vec::new();
    for (r, c, v) in l_plus_entries(basis) {
        entries.push((r, c, C64::new(0.0, -0.5 * v)));
        entries.push((c, r, C64::new(0.0, 0.5 * v)));
    }
    SparseOp::from_triplets(basis.len(), entries)
}

/// `L²`, block diagonal in `M`, assembled from the chain formula.
pub fn l2_full(basis: &FullBasis) -> SparseOp {
    let n = basis.n_atoms();
    let mm = basis.max_abs_m() as i64;
    let mut entries = Vec::new();
    for m in -mm..=mm {
        let chain = PairBasis::with_magnetization(n, m).expect("valid block");
        let t = l2_chain(chain);
        for k in 0..chain.size() {
            let i = basis.index_of_chain(m, k).unwrap();
            entries.push((i, i, C64::new(t.diag[k], 0.0)));
            if k + 1 < chain.size() {
                let j = basis.index_of_chain(m, k + 1).unwrap();
                entries.push((i, j, C64::new(t.offdiag[k], 0.0)));
                entries.push((j, i, C64::new(t.offdiag[k], 0.0)));
            }
        }
    }
    SparseOp::from_triplets(basis.len(), entries)
}

/// Full-basis operators needed for the transverse-field Hamiltonian, built once.
#[derive(Clone, Debug)]
pub struct FullOperators {
    pub basis: FullBasis,
    pub l2: SparseOp,
    pub n0: SparseOp,
    pub lz: SparseOp,
    pub lx: SparseOp,
    pub ly: SparseOp,
}

impl FullOperators {
    pub fn new(basis: FullBasis) -> Self {
        Self {
            l2: l2_full(&basis),
            n0: n0_full(&basis),
            lz: lz_full(&basis),
            lx: lx_full(&basis),
            ly: ly_full(&basis),
            basis,
        }
    }

    /// `c'₂L²/N − q n₀ − p L_z − h L_x` in internal units.
    pub fn hamiltonian(&self, ext: &ExtendedParams) -> SparseOp {
        let b = &ext.base;
        let s = b.scale();
        let n = self.basis.n_atoms() as f64;
        SparseOp::linear_combination(&[
            (C64::new(s * b.c2p / n, 0.0), &self.l2),
            (C64::new(-s * b.q, 0.0), &self.n0),
            (C64::new(-s * ext.p, 0.0), &self.lz),
            (C64::new(-s * ext.h, 0.0), &self.lx),
        ])
    }
}

/// Number-basis matrix of `P²/2M + Mω²x²/2 + F x` (ħ = 1), truncated to `dim` levels.
pub fn oscillator_hamiltonian(mass: f64, omega: f64, force: f64, dim: usize) -> TriMatrix {
    assert!(dim >= 1);
    let x_scale = (1.0 / (2.0 * mass * omega)).sqrt();
    let diag = (0..dim).map(|n| omega * (n as f64 + 0.5)).collect();
    let off = (0..dim - 1)
        .map(|n| force * x_scale * ((n + 1) as f64).sqrt())
        .collect();
    TriMatrix::new(diag, off)
}

/// Position operator `x = √(1/2Mω)(a + a†)` in the truncated number basis.
pub fn oscillator_position(mass: f64, omega: f64, dim: usize) -> TriMatrix {
    let x_scale = (1.0 / (2.0 * mass * omega)).sqrt();
    TriMatrix::new(
        vec![0.0; dim],
        (0..dim - 1).map(|n| x_scale * ((n + 1) as f64).sqrt()).collect(),
    )
}
