//! Spectral decomposition of chain Hamiltonians, gaps and adiabaticity.

use rayon::prelude::*;

use crate::basis::PairBasis;
use crate::error::{Error, Result};
use crate::operators::{hamiltonian_pair, HermitianOp, PhysicsParams, TriMatrix};

const MAX_QL_ITER: usize = 60;

/// Ascending eigenvalues and orthonormal eigenvectors (row `j` is the
/// eigenvector of `values[j]`), each with its largest-magnitude component positive.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    vectors: Vec<f64>,
    dim: usize,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.dim..(j + 1) * self.dim]
    }

    /// Row-major `dim × dim`, rows are eigenvectors.
    pub fn vectors_flat(&self) -> &[f64] {
        &self.vectors
    }

    pub fn gap(&self) -> f64 {
        if self.values.len() < 2 {
            0.0
        } else {
            self.values[1] - self.values[0]
        }
    }
}

fn hypot(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

/// Implicit-shift QL on a symmetric tridiagonal matrix. `d` is overwritten by
/// the (unsorted) eigenvalues; when `z` is given its rows are rotated along
/// so that on entry = identity, on exit row `i` is eigenvector `i`.
fn tql(d: &mut [f64], off: &[f64], mut z: Option<&mut [f64]>) -> Result<()> {
    let n = d.len();
    if n <= 1 {
        return Ok(());
    }
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITER {
                    return Err(Error::NoConvergence {
                        index: l,
                        iterations: iter,
                    });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = hypot(p, 1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(z) = z.as_deref_mut() {
                        let (lo, hi) = z.split_at_mut((i + 1) * n);
                        let zi = &mut lo[i * n..];
                        let zi1 = &mut hi[..n];
                        for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                            let hb = *b;
                            *b = s * *a + c * hb;
                            *a = c * *a - s * hb;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Eigenvalues only, ascending.
pub fn eigenvalues_tridiagonal(m: &TriMatrix) -> Result<Vec<f64>> {
    let mut d = m.diag.clone();
    tql(&mut d, &m.offdiag, None)?;
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(d)
}

fn fix_sign(v: &mut [f64]) {
    let mut imax = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[imax].abs() {
            imax = i;
        }
    }
    if v[imax] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Full spectral decomposition.
pub fn eigensolve_tridiagonal(m: &TriMatrix) -> Result<EigenSystem> {
    let n = m.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let mut d = m.diag.clone();
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }
    tql(&mut d, &m.offdiag, Some(&mut z))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap().then(a.cmp(&b)));
    let values = order.iter().map(|&i| d[i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (j, &i) in order.iter().enumerate() {
        let row = &mut vectors[j * n..(j + 1) * n];
        row.copy_from_slice(&z[i * n..(i + 1) * n]);
        fix_sign(row);
    }
    Ok(EigenSystem {
        values,
        vectors,
        dim: n,
    })
}

/// Solve `(T − σ) x = b` for tridiagonal `T` (Thomas algorithm with pivot guard).
fn shifted_solve(m: &TriMatrix, sigma: f64, b: &[f64]) -> Vec<f64> {
    let n = m.dim();
    let tiny = 1e-300_f64.max(f64::EPSILON * m.diag.iter().fold(0.0f64, |a, x| a.max(x.abs())) * 1e-6);
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut piv = m.diag[0] - sigma;
    if piv.abs() < tiny {
        piv = tiny;
    }
    x[0] = b[0] / piv;
    for i in 1..n {
        c[i - 1] = m.offdiag[i - 1] / piv;
        piv = m.diag[i] - sigma - m.offdiag[i - 1] * c[i - 1];
        if piv.abs() < tiny {
            piv = tiny;
        }
        x[i] = (b[i] - m.offdiag[i - 1] * x[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        let xi1 = x[i + 1];
        x[i] -= c[i] * xi1;
    }
    x
}

fn normalize(v: &mut [f64]) {
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= nrm);
}

/// The `count` lowest eigenpairs via QL eigenvalues plus inverse iteration.
/// Cheaper than [`eigensolve_tridiagonal`] when only a few levels are needed.
pub fn lowest_eigenpairs(m: &TriMatrix, count: usize) -> Result<EigenSystem> {
    let n = m.dim();
    let count = count.min(n);
    let vals = eigenvalues_tridiagonal(m)?;
    let scale = m.norm_bound().max(f64::MIN_POSITIVE);
    let mut vectors = Vec::with_capacity(count * n);
    for j in 0..count {
        let sigma = vals[j] - 1e-13 * scale;
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919 + j * 104729) % 97) as f64 / 97.0).collect();
        normalize(&mut v);
        for _ in 0..4 {
            v = shifted_solve(m, sigma, &v);
            for prev in 0..j {
                let u = &vectors[prev * n..(prev + 1) * n];
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= dot * y);
            }
            normalize(&mut v);
        }
        fix_sign(&mut v);
        vectors.extend_from_slice(&v);
    }
    Ok(EigenSystem {
        values: vals[..count].to_vec(),
        vectors,
        dim: n,
    })
}

/// Ground-to-first-excited gap of the zero-magnetization Hamiltonian, in the
/// internal units of `params.convention`.
pub fn gap(params: &PhysicsParams) -> Result<f64> {
    let h = hamiltonian_pair(params);
    let v = eigenvalues_tridiagonal(&h)?;
    Ok(if v.len() < 2 { 0.0 } else { v[1] - v[0] })
}

/// Gap in Hz independent of convention.
pub fn gap_hz(params: &PhysicsParams) -> Result<f64> {
    Ok(gap(params)? / params.scale())
}

/// `ΔE/c'₂ ≃ 6/N − 0.1907·N·q + 0.0253·N³·q²` with `q` in units of `c'₂`.
pub fn perturbative_gap(n_atoms: usize, q_over_c2p: f64) -> f64 {
    let n = n_atoms as f64;
    6.0 / n - 0.1907 * n * q_over_c2p + 0.0253 * n.powi(3) * q_over_c2p * q_over_c2p
}

/// Leading-order critical point `q_c/c'₂ = 3.7688/N²`.
pub fn critical_q_estimate(n_atoms: usize, c2p: f64) -> f64 {
    3.7688 * c2p / (n_atoms as f64).powi(2)
}

/// Minimum of the exact gap over `q ∈ (lo, hi)` by golden-section search.
pub fn golden_section_min(
    mut f: impl FnMut(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    rel_tol: f64,
) -> Result<f64> {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while (hi - lo) > rel_tol * 0.5 * (hi + lo).abs() {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Critical point: argmin of the exact gap on `(0, 20·q_est)`, bracketed on a
/// coarse grid first and refined to relative `1e-4`.
pub fn find_critical_q(n_atoms: usize, c2p: f64) -> Result<f64> {
    if n_atoms < 4 {
        return Err(Error::InvalidArgument("critical point search needs N >= 4".into()));
    }
    let base = PhysicsParams::new(c2p, n_atoms, 0.0);
    let est = critical_q_estimate(n_atoms, c2p);
    let grid: Vec<f64> = (1..=80).map(|i| 20.0 * est * i as f64 / 80.0).collect();
    let gaps = gap_scan(&base, &grid)?;
    let (imin, _) = gaps
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let lo = if imin == 0 { 0.0 } else { grid[imin - 1] };
    let hi = grid[(imin + 1).min(grid.len() - 1)];
    golden_section_min(|q| gap(&base.with_q(q)), lo, hi, 1e-4)
}

/// Exact gap (Hz) on a grid of `q`, evaluated in parallel; output order follows `qs`.
pub fn gap_scan(base: &PhysicsParams, qs: &[f64]) -> Result<Vec<f64>> {
    qs.par_iter().map(|&q| gap_hz(&base.with_q(q))).collect()
}

/// `β = |dq/dt · ⟨e|n₀|g⟩| / ΔE²` at fixed `q`, with `dq_dt` in Hz/s.
/// Both numerator and gap are expressed in the convention of `params`.
pub fn adiabatic_beta(params: &PhysicsParams, dq_dt: f64) -> Result<f64> {
    let h = hamiltonian_pair(params);
    let sys = lowest_eigenpairs(&h, 2)?;
    let g = sys.gap();
    if g <= 1e-12 * h.norm_bound() {
        return Err(Error::DegenerateGap { gap: g });
    }
    let n0 = PairBasis::new(params.n_atoms)?.n_zero();
    let elem: f64 = sys
        .vector(1)
        .iter()
        .zip(sys.vector(0))
        .zip(&n0)
        .map(|((e, gv), n)| e * n * gv)
        .sum();
    let s = params.scale();
    Ok((s * dq_dt * elem).abs() / (g * g))
}
