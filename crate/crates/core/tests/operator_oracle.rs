//! Brute-force second-quantized constructions checked against the library operators.

use num_complex::Complex64 as C64;
use proptest::prelude::*;
use spinamo::basis::{FullBasis, Occupation, PairBasis};
use spinamo::operators::{l2_full, l2_pair, lx_full, ly_full, lz_full, n0_full, HermitianOp, SparseOp};
use spinamo::spectra::eigenvalues_tridiagonal;

type Mat = Vec<Vec<C64>>;

/// Occupations indexed by m ∈ {+1, 0, −1} → slots 0, 1, 2.
fn occ_slots(o: &Occupation) -> [usize; 3] {
    [o.plus, o.zero, o.minus]
}

fn from_slots(s: [usize; 3]) -> Occupation {
    Occupation { plus: s[0], zero: s[1], minus: s[2] }
}

/// `a†_i a_j` as a dense matrix on the fixed-N Fock space.
fn hop(basis: &FullBasis, i: usize, j: usize) -> Mat {
    let d = basis.len();
    let mut m = vec![vec![C64::new(0.0, 0.0); d]; d];
    for (c, o) in basis.states().iter().enumerate() {
        let mut s = occ_slots(o);
        if s[j] == 0 {
            continue;
        }
        let mut amp = (s[j] as f64).sqrt();
        s[j] -= 1;
        s[i] += 1;
        amp *= (s[i] as f64).sqrt();
        let r = basis.index_of(from_slots(s)).expect("state in basis");
        m[r][c] += C64::new(amp, 0.0);
    }
    m
}

fn spin_one() -> [[[C64; 3]; 3]; 3] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    let re = |x: f64| C64::new(x, 0.0);
    let im = |x: f64| C64::new(0.0, x);
    [
        [[z, re(r), z], [re(r), z, re(r)], [z, re(r), z]],
        [[z, im(-r), z], [im(r), z, im(-r)], [z, im(r), z]],
        [[re(1.0), z, z], [z, z, z], [z, z, re(-1.0)]],
    ]
}

fn brute_spin(basis: &FullBasis, alpha: usize) -> Mat {
    let f = spin_one()[alpha];
    let d = basis.len();
    let mut out = vec![vec![C64::new(0.0, 0.0); d]; d];
    for i in 0..3 {
        for j in 0..3 {
            if f[i][j] == C64::new(0.0, 0.0) {
                continue;
            }
            let h = hop(basis, i, j);
            for r in 0..d {
                for c in 0..d {
                    out[r][c] += f[i][j] * h[r][c];
                }
            }
        }
    }
    out
}

fn mul(a: &Mat, b: &Mat) -> Mat {
    let d = a.len();
    let mut out = vec![vec![C64::new(0.0, 0.0); d]; d];
    for i in 0..d {
        for k in 0..d {
            if a[i][k] == C64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..d {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn max_diff(op: &SparseOp, m: &Mat) -> f64 {
    let d = m.len();
    let mut e = 0.0f64;
    for r in 0..d {
        for c in 0..d {
            e = e.max((op.get(r, c) - m[r][c]).norm());
        }
    }
    e
}

#[test]
fn full_basis_operators_match_ladder_construction() {
    for n in 1..=8 {
        let basis = FullBasis::new(n).unwrap();
        let lx = brute_spin(&basis, 0);
        let ly = brute_spin(&basis, 1);
        let lz = brute_spin(&basis, 2);
        assert!(max_diff(&lx_full(&basis), &lx) <= 1e-12, "Lx N={n}");
        assert!(max_diff(&ly_full(&basis), &ly) <= 1e-12, "Ly N={n}");
        assert!(max_diff(&lz_full(&basis), &lz) <= 1e-12, "Lz N={n}");
        let mut l2 = mul(&lx, &lx);
        for (a, b) in [(&ly, &ly), (&lz, &lz)] {
            let p = mul(a, b);
            for (row, prow) in l2.iter_mut().zip(&p) {
                for (x, y) in row.iter_mut().zip(prow) {
                    *x += y;
                }
            }
        }
        assert!(max_diff(&l2_full(&basis), &l2) <= 1e-12, "L2 N={n}");
        let n0 = hop(&basis, 1, 1);
        assert!(max_diff(&n0_full(&basis), &n0) <= 1e-12, "n0 N={n}");

        let pair = PairBasis::new(n).unwrap();
        let t = l2_pair(n);
        for k in 0..pair.size() {
            let i = basis.index_of(pair.occupation(k)).unwrap();
            assert!((t.diag[k] - l2[i][i].re).abs() <= 1e-12);
            if k + 1 < pair.size() {
                let j = basis.index_of(pair.occupation(k + 1)).unwrap();
                assert!((t.offdiag[k] - l2[i][j].re).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn pair_spectrum_is_l_times_l_plus_one() {
    for n in 1..=8usize {
        let ev = eigenvalues_tridiagonal(&l2_pair(n)).unwrap();
        let mut expect: Vec<f64> = (0..=n).rev().step_by(2).map(|l| (l * (l + 1)) as f64).collect();
        expect.sort_by(f64::total_cmp);
        assert_eq!(ev.len(), expect.len());
        for (a, b) in ev.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-9 * b.max(1.0), "N={n}: {a} vs {b}");
        }
    }
}

#[test]
fn commutator_and_polar_moments() {
    let basis = FullBasis::new(5).unwrap();
    let lx = brute_spin(&basis, 0);
    let ly = brute_spin(&basis, 1);
    let lz = brute_spin(&basis, 2);
    let a = mul(&lz, &lx);
    let b = mul(&lx, &lz);
    for r in 0..basis.len() {
        for c in 0..basis.len() {
            let comm = a[r][c] - b[r][c];
            assert!((comm - C64::new(0.0, 1.0) * ly[r][c]).norm() < 1e-12);
        }
    }
    let polar = basis.index_of(Occupation { minus: 0, zero: 5, plus: 0 }).unwrap();
    let lx2 = mul(&lx, &lx);
    assert!((lx2[polar][polar].re - 5.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn operators_are_hermitian_and_preserve_expectations(n in 1usize..12, seed in 0u64..1000) {
        let basis = FullBasis::new(n).unwrap();
        for op in [lx_full(&basis), ly_full(&basis), lz_full(&basis), l2_full(&basis)] {
            prop_assert!(op.is_hermitian(1e-12));
        }
        let d = basis.len();
        let psi: Vec<C64> = (0..d)
            .map(|i| {
                let x = ((i as u64 + 1) * (seed + 7)) as f64;
                C64::new(x.sin(), (0.37 * x).cos())
            })
            .collect();
        let nrm: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
        let l2 = l2_full(&basis).expectation(&psi).re / nrm;
        let l = n as f64;
        prop_assert!(l2 >= -1e-9 && l2 <= l * (l + 1.0) + 1e-9);
        let mut sum = 0.0;
        let mut y = vec![C64::new(0.0, 0.0); d];
        for op in [lx_full(&basis), ly_full(&basis), lz_full(&basis)] {
            op.apply(&psi, &mut y);
            sum += y.iter().map(|a| a.norm_sqr()).sum::<f64>() / nrm;
        }
        prop_assert!((sum - l2).abs() <= 1e-9 * (1.0 + l2));
    }
}
