//! Small dense linear-algebra helpers shared by the FEM and multiscale code.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Solve `S x = b` where `S` is symmetric positive semidefinite with the
/// constant vector as its only nullspace, by pinning unknown `pin` to zero
/// and Cholesky-factoring the remaining SPD block. `b` must be compatible
/// (orthogonal to the nullspace); the returned solution has `x[pin] = 0`.
pub fn solve_pinned_spd(s: &DMatrix<f64>, b: &DVector<f64>, pin: usize) -> Result<DVector<f64>> {
    let n = s.nrows();
    assert_eq!(s.ncols(), n);
    assert_eq!(b.len(), n);
    assert!(pin < n);

    let keep: Vec<usize> = (0..n).filter(|&i| i != pin).collect();
    let mut reduced = DMatrix::zeros(n - 1, n - 1);
    let mut rhs = DVector::zeros(n - 1);
    for (ri, &i) in keep.iter().enumerate() {
        rhs[ri] = b[i];
        for (rj, &j) in keep.iter().enumerate() {
            reduced[(ri, rj)] = s[(i, j)];
        }
    }
    let chol = nalgebra::Cholesky::new(reduced).ok_or(Error::Singular {
        what: "pinned SPD system",
    })?;
    let x_red = chol.solve(&rhs);
    let mut x = DVector::zeros(n);
    for (ri, &i) in keep.iter().enumerate() {
        x[i] = x_red[ri];
    }
    Ok(x)
}

/// Solve a tridiagonal system with the Thomas algorithm.
/// `lower`, `diag`, `upper` have lengths `n-1`, `n`, `n-1`.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    assert_eq!(lower.len(), n.saturating_sub(1));
    assert_eq!(upper.len(), n.saturating_sub(1));
    assert_eq!(rhs.len(), n);
    if n == 0 {
        return Vec::new();
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { upper[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = upper[i] / m;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= c[i] * next;
    }
    x
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi sweeps.
///
/// Quadratically convergent and accurate to machine precision relative to
/// the matrix norm; the rotation order is fixed, so results are
/// deterministic. Returns (eigenvalues ascending, eigenvectors as columns).
pub fn symmetric_jacobi_eigen(c: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = c.nrows();
    assert_eq!(c.ncols(), n);
    let mut a = c.clone();
    let mut v = DMatrix::identity(n, n);
    let norm = a.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * norm {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let cos = 1.0 / (1.0 + t * t).sqrt();
                let sin = t * cos;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = cos * akp - sin * akq;
                    a[(k, q)] = sin * akp + cos * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = cos * apk - sin * aqk;
                    a[(q, k)] = sin * apk + cos * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = cos * vkp - sin * vkq;
                    v[(k, q)] = sin * vkp + cos * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&k| a[(k, k)]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &v.column(k));
    }
    (values, vectors)
}

/// Generalized symmetric eigenproblem `A z = λ S z` with `S` SPD.
///
/// Reduces via the Cholesky factor of `S` to an ordinary symmetric problem,
/// diagonalizes with Jacobi sweeps, then back-substitutes; eigenpairs are
/// returned in ascending eigenvalue order with S-orthonormal eigenvectors.
pub fn generalized_symmetric_eigen(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(s.nrows(), n);
    assert_eq!(s.ncols(), n);

    let chol = nalgebra::Cholesky::new(s.clone()).ok_or(Error::Singular {
        what: "mass matrix in generalized eigenproblem",
    })?;
    let l = chol.l();
    // C = L^{-1} A L^{-T}, kept explicitly symmetric against roundoff.
    let linv_a = l.solve_lower_triangular(a).ok_or(Error::Singular {
        what: "triangular solve in generalized eigenproblem",
    })?;
    let c_t = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or(Error::Singular {
            what: "triangular solve in generalized eigenproblem",
        })?;
    let c = (&c_t + c_t.transpose()) * 0.5;

    let (values, y) = symmetric_jacobi_eigen(&c);
    let lt = l.transpose();
    let mut vectors = Vec::with_capacity(n);
    for k in 0..n {
        let z = lt
            .solve_upper_triangular(&y.column(k).into_owned())
            .ok_or(Error::Singular {
                what: "back substitution in generalized eigenproblem",
            })?;
        vectors.push(z);
    }
    Ok((values, vectors))
}

/// Area-weighted mean of a cell vector.
pub fn weighted_mean(v: &[f64], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    v.iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tridiagonal_matches_dense_solve() {
        let n = 9;
        let lower = vec![-1.0; n - 1];
        let diag = vec![4.0; n];
        let upper = vec![-2.0; n - 1];
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs);

        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = diag[i];
            if i + 1 < n {
                m[(i + 1, i)] = lower[i];
                m[(i, i + 1)] = upper[i];
            }
        }
        let xd = m.lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
        for i in 0..n {
            assert_relative_eq!(x[i], xd[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn pinned_solve_recovers_laplacian_solution() {
        // 1D path Laplacian with compatible rhs; solution defined up to a constant.
        let n = 6;
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            s[(i, i)] += 1.0;
            s[(i + 1, i + 1)] += 1.0;
            s[(i, i + 1)] -= 1.0;
            s[(i + 1, i)] -= 1.0;
        }
        let mut b = DVector::zeros(n);
        b[0] = 1.0;
        b[n - 1] = -1.0;
        let x = solve_pinned_spd(&s, &b, 0).unwrap();
        let residual = (&s * &x - &b).norm();
        assert!(residual < 1e-12);
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn generalized_eigen_small_known_case() {
        // A = diag(1, 4), S = diag(1, 2) -> eigenvalues 1 and 2.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let (vals, vecs) = generalized_symmetric_eigen(&a, &s).unwrap();
        assert_relative_eq!(vals[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 2.0, epsilon = 1e-12);
        // S-orthonormality.
        for i in 0..2 {
            for j in 0..2 {
                let ip = (vecs[i].transpose() * &s * &vecs[j])[(0, 0)];
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(ip, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn generalized_eigen_residual_on_random_spd_pair() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 7;
        let q = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let a = &q * q.transpose();
        let p = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let s = &p * p.transpose() + DMatrix::identity(n, n);
        let (vals, vecs) = generalized_symmetric_eigen(&a, &s).unwrap();
        for w in vals.windows(2) {
            assert!(w[0] <= w[1] + 1e-12, "eigenvalues must ascend");
        }
        for (lam, z) in vals.iter().zip(&vecs) {
            let r = &a * z - &s * z * *lam;
            assert!(r.norm() < 1e-9, "residual {} too large", r.norm());
        }
    }
}
