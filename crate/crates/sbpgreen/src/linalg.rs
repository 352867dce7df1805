//! Dense LU and symmetric eigenvalue kernels.
//!
//! These are the independent oracles the rest of the crate is checked
//! against, so they deliberately share no code with the closed-form
//! inverse constructions.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Pivot magnitudes below `LU_PIVOT_REL_TOL` times the largest initial
/// entry abort the factorization.
pub const LU_PIVOT_REL_TOL: f64 = 1e-13;

/// Relative pivot-ratio threshold for the rank-deficiency witness.
pub const RANK_DEFICIENT_REL_TOL: f64 = 1e-10;

/// LU factorization with row partial pivoting, stored packed.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: DenseMatrix,
    perm: Vec<usize>,
    min_pivot: f64,
    max_pivot: f64,
}

impl LuFactors {
    /// Factors `m`; fails when a pivot falls below the relative threshold.
    pub fn new(m: &DenseMatrix) -> Result<Self> {
        Self::factor(m, true)
    }

    fn factor(m: &DenseMatrix, strict: bool) -> Result<Self> {
        assert!(m.is_square(), "LU requires a square matrix");
        let n = m.rows();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = m.max_abs();
        let threshold = LU_PIVOT_REL_TOL * scale;

        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for k in 0..n {
            let mut pivot_row = k;
            let mut pivot_val = lu[(k, k)].abs();
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = i;
                }
            }
            if strict && pivot_val < threshold {
                return Err(Error::SingularMatrix {
                    pivot: pivot_val,
                    threshold,
                });
            }
            if pivot_row != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(pivot_row, j)];
                    lu[(pivot_row, j)] = tmp;
                }
                perm.swap(k, pivot_row);
            }
            min_pivot = min_pivot.min(pivot_val);
            max_pivot = max_pivot.max(pivot_val);
            let pivot = lu[(k, k)];
            if pivot == 0.0 {
                continue;
            }
            for i in k + 1..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                if factor == 0.0 {
                    continue;
                }
                for j in k + 1..n {
                    let delta = factor * lu[(k, j)];
                    lu[(i, j)] -= delta;
                }
            }
        }
        Ok(Self {
            lu,
            perm,
            min_pivot,
            max_pivot,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        assert_eq!(rhs.len(), n, "rhs length must match matrix order");
        let mut x: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 1..n {
            let mut sum = x[i];
            for j in 0..i {
                sum -= self.lu[(i, j)] * x[j];
            }
            x[i] = sum;
        }
        for i in (0..n).rev() {
            let mut sum = x[i];
            for j in i + 1..n {
                sum -= self.lu[(i, j)] * x[j];
            }
            x[i] = sum / self.lu[(i, i)];
        }
        x
    }

    pub fn inverse(&self) -> DenseMatrix {
        let n = self.lu.rows();
        let mut inv = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        inv
    }

    /// Smallest over largest pivot magnitude.
    pub fn pivot_ratio(&self) -> f64 {
        if self.max_pivot == 0.0 {
            0.0
        } else {
            self.min_pivot / self.max_pivot
        }
    }
}

/// Solves `m x = rhs` by LU with partial pivoting.
pub fn lu_solve(m: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    Ok(LuFactors::new(m)?.solve(rhs))
}

/// Dense inverse via LU; the oracle all closed forms are checked against.
pub fn lu_inverse(m: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(LuFactors::new(m)?.inverse())
}

/// Pivot-ratio witness for rank deficiency. Never errors; a zero matrix
/// is deficient by convention.
pub fn rank_deficient(m: &DenseMatrix) -> bool {
    match LuFactors::factor(m, false) {
        Ok(f) => f.pivot_ratio() < RANK_DEFICIENT_REL_TOL,
        Err(_) => true,
    }
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi sweeps,
/// returned in ascending order.
pub fn sym_eigenvalues(m: &DenseMatrix) -> Result<Vec<f64>> {
    assert!(m.is_square());
    let scale = m.max_abs();
    let asym = m.asymmetry();
    if asym > 1e-12 * scale.max(1.0) {
        return Err(Error::NotSymmetric { max_asym: asym });
    }
    let n = m.rows();
    if n == 0 {
        return Ok(vec![]);
    }
    // Work on the symmetrized copy so tiny asymmetries cannot bias sweeps.
    let mut a = m.clone();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }

    let off = |a: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..i {
                s += a[(i, j)] * a[(i, j)];
            }
        }
        (2.0 * s).sqrt()
    };

    let tol = 1e-15 * scale.max(f64::MIN_POSITIVE) * n as f64;
    for _sweep in 0..64 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable computation of tan of the rotation angle.
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }

    let mut eigs: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(eigs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig_sym(m: &DenseMatrix) -> Result<f64> {
    Ok(sym_eigenvalues(m)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::unit_vec;
    use proptest::prelude::*;

    #[test]
    fn identity_solve() {
        let m = DenseMatrix::identity(3);
        let x = lu_solve(&m, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn permutation_solve() {
        let m = DenseMatrix::from_row_major(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let x = lu_solve(&m, &[5.0, 7.0]).unwrap();
        assert_eq!(x, vec![7.0, 5.0]);
    }

    #[test]
    fn qtilde_21_first_column() {
        // 3x3 system from the second-order penalized operator at n = 2,
        // sigma_L = -1; hand multiplication gives first inverse column
        // [1, 1, 1].
        let q = DenseMatrix::from_row_major(
            3,
            3,
            vec![0.5, 0.5, 0.0, -0.5, 0.0, 0.5, 0.0, -0.5, 0.5],
        )
        .unwrap();
        let x = lu_solve(&q, &unit_vec(3, 0)).unwrap();
        for v in &x {
            assert!((v - 1.0).abs() < 1e-14, "{x:?}");
        }
    }

    #[test]
    fn singular_matrix_rejected() {
        let m = DenseMatrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(
            lu_solve(&m, &[1.0, 1.0]),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn rank_deficiency_witness() {
        assert!(rank_deficient(&DenseMatrix::zeros(2, 2)));
        assert!(!rank_deficient(&DenseMatrix::identity(4)));
    }

    #[test]
    fn min_eig_diag() {
        let m = DenseMatrix::diag(&[3.0, 1.0, 2.0]);
        assert!((min_eig_sym(&m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn not_symmetric_rejected() {
        let m = DenseMatrix::from_row_major(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            min_eig_sym(&m),
            Err(Error::NotSymmetric { .. })
        ));
    }

    // Characteristic-polynomial oracle for 2x2 and 3x3 symmetric matrices.
    fn eigs_2x2(a: f64, b: f64, d: f64) -> [f64; 2] {
        let tr = a + d;
        let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
        [(tr - disc) / 2.0, (tr + disc) / 2.0]
    }

    fn eigs_3x3(m: &DenseMatrix) -> [f64; 3] {
        // Trigonometric closed form of the characteristic cubic; handles
        // repeated roots, unlike sign-change bisection.
        let c2 = -(m[(0, 0)] + m[(1, 1)] + m[(2, 2)]);
        let c1 = m[(0, 0)] * m[(1, 1)] + m[(0, 0)] * m[(2, 2)] + m[(1, 1)] * m[(2, 2)]
            - m[(0, 1)] * m[(0, 1)]
            - m[(0, 2)] * m[(0, 2)]
            - m[(1, 2)] * m[(1, 2)];
        let det = m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(1, 2)])
            - m[(0, 1)] * (m[(0, 1)] * m[(2, 2)] - m[(1, 2)] * m[(0, 2)])
            + m[(0, 2)] * (m[(0, 1)] * m[(1, 2)] - m[(1, 1)] * m[(0, 2)]);
        let c0 = -det;
        // Depressed cubic t^3 + p t + q with x = t - c2/3.
        let shift = -c2 / 3.0;
        let p = c1 - c2 * c2 / 3.0;
        let q = c0 + c2 * (2.0 * c2 * c2 - 9.0 * c1) / 27.0;
        let mut roots = if p.abs() < 1e-12 {
            let t = -q.cbrt();
            [t, t, t]
        } else {
            let mfac = 2.0 * (-p / 3.0).max(0.0).sqrt();
            let arg = (3.0 * q / (p * mfac)).clamp(-1.0, 1.0);
            let theta = arg.acos() / 3.0;
            let tau = 2.0 * std::f64::consts::PI / 3.0;
            [
                mfac * theta.cos(),
                mfac * (theta - tau).cos(),
                mfac * (theta + tau).cos(),
            ]
        };
        for r in roots.iter_mut() {
            *r += shift;
        }
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        roots
    }

    proptest! {
        #[test]
        fn jacobi_matches_characteristic_roots_2x2(
            a in -5i32..=5, b in -5i32..=5, d in -5i32..=5
        ) {
            let (a, b, d) = (a as f64, b as f64, d as f64);
            let m = DenseMatrix::from_row_major(2, 2, vec![a, b, b, d]).unwrap();
            let got = sym_eigenvalues(&m).unwrap();
            let want = eigs_2x2(a, b, d);
            prop_assert!((got[0] - want[0]).abs() < 1e-10);
            prop_assert!((got[1] - want[1]).abs() < 1e-10);
        }

        #[test]
        fn jacobi_matches_characteristic_roots_3x3(
            a in -5i32..=5, b in -5i32..=5, c in -5i32..=5,
            d in -5i32..=5, e in -5i32..=5, f in -5i32..=5
        ) {
            let (a, b, c, d, e, f) =
                (a as f64, b as f64, c as f64, d as f64, e as f64, f as f64);
            let m = DenseMatrix::from_row_major(
                3, 3,
                vec![a, b, c, b, d, e, c, e, f],
            ).unwrap();
            let got = sym_eigenvalues(&m).unwrap();
            let want = eigs_3x3(&m);
            // The bisection oracle itself resolves clustered roots only to
            // ~1e-10, so compare at that level.
            for (g, w) in got.iter().zip(want.iter()) {
                prop_assert!((g - w).abs() < 5e-9, "got {got:?} want {want:?}");
            }
        }

        #[test]
        fn lu_inverse_roundtrip(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 2 + (seed % 7) as usize;
            let mut data = vec![0.0; n * n];
            for v in &mut data {
                *v = rng.gen_range(-1.0..1.0);
            }
            // Diagonal dominance keeps the sample comfortably invertible.
            for i in 0..n {
                data[i * n + i] += n as f64;
            }
            let m = DenseMatrix::from_row_major(n, n, data).unwrap();
            let inv = lu_inverse(&m).unwrap();
            prop_assert!(m.residual_vs_identity(&inv) <= 1e-9);
        }
    }
}
