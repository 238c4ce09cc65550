//! Dense linear algebra kernels: LU solves with iterative refinement and a
//! cyclic Jacobi eigensolver for symmetric matrices.
//!
//! Everything here is deterministic: no pivoting heuristics depend on memory
//! layout or hash order, so repeated runs factor identically.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// LU factorization with partial pivoting of a square matrix.
pub struct LuFactors {
    lu: Array2<f64>,
    perm: Vec<usize>,
}

impl LuFactors {
    /// Factors `a` in a copy. Fails with [`Error::Singular`] when a pivot
    /// falls below `1e-14` times the largest absolute entry of `a`.
    pub fn factor(a: &ArrayView2<f64>) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        let mut lu = a.to_owned();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-14 * scale.max(f64::MIN_POSITIVE);

        for k in 0..n {
            // Partial pivot: largest |entry| in column k at or below the diagonal.
            let mut piv_row = k;
            let mut piv_val = lu[[k, k]].abs();
            for i in k + 1..n {
                let v = lu[[i, k]].abs();
                if v > piv_val {
                    piv_val = v;
                    piv_row = i;
                }
            }
            if piv_val < tol {
                return Err(Error::Singular {
                    pivot: piv_val,
                    col: k,
                });
            }
            if piv_row != k {
                for j in 0..n {
                    lu.swap([k, j], [piv_row, j]);
                }
                perm.swap(k, piv_row);
            }
            let pivot = lu[[k, k]];
            // Contiguous row updates so the inner loop vectorizes.
            let (head, mut tail) = lu.view_mut().split_at(ndarray::Axis(0), k + 1);
            let row_k = head.row(k);
            let row_k = row_k.as_slice().expect("row-major layout");
            for mut row_i in tail.rows_mut() {
                let row_i = row_i.as_slice_mut().expect("row-major layout");
                let l = row_i[k] / pivot;
                row_i[k] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        row_i[j] -= l * row_k[j];
                    }
                }
            }
        }
        Ok(LuFactors { lu, perm })
    }

    /// Solves `A x = b` using the stored factors.
    pub fn solve(&self, b: &ArrayView1<f64>) -> Array1<f64> {
        let n = self.perm.len();
        assert_eq!(b.len(), n);
        let mut x = Array1::zeros(n);
        for i in 0..n {
            x[i] = b[self.perm[i]];
        }
        // Forward substitution with unit lower triangle.
        for i in 1..n {
            let mut s = x[i];
            let row = self.lu.row(i);
            let row = row.as_slice().expect("row-major layout");
            for (j, rj) in row.iter().enumerate().take(i) {
                s -= rj * x[j];
            }
            x[i] = s;
        }
        // Back substitution.
        for i in (0..n).rev() {
            let mut s = x[i];
            let row = self.lu.row(i);
            let row = row.as_slice().expect("row-major layout");
            for j in i + 1..n {
                s -= row[j] * x[j];
            }
            x[i] = s / row[i];
        }
        x
    }
}

/// Solves `A x = b` with two rounds of iterative refinement against the
/// original matrix. The refinement recovers most of the accuracy lost to
/// ill conditioning in saddle-point systems.
pub fn solve_refined(a: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Result<Array1<f64>> {
    let lu = LuFactors::factor(a)?;
    let mut x = lu.solve(b);
    for _ in 0..2 {
        let r = b - &a.dot(&x);
        let dx = lu.solve(&r.view());
        x += &dx;
    }
    Ok(x)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(values, vectors)` with eigenvalues sorted descending and
/// eigenvectors in the matching columns. The input is symmetrized as
/// `(A + Aᵀ)/2` before iteration, so slightly asymmetric inputs are accepted.
/// Each eigenvector is sign-normalized so its largest-magnitude component
/// (first index on ties) is positive, which keeps factor loadings stable
/// across runs.
pub fn symmetric_eigen(a: &ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigen needs a square matrix");
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            m[[i, j]] = 0.5 * (a[[i, j]] + a[[j, i]]);
        }
    }
    let mut v: Array2<f64> = Array2::eye(n);
    let fro = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let stop = f64::EPSILON * (1.0 + fro);

    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if (2.0 * off).sqrt() <= stop {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Apply J(p,q,θ)ᵀ M J(p,q,θ) in place.
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                m[[p, p]] = app - t * apq;
                m[[q, q]] = aqq + t * apq;
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = m[[k, p]];
                        let akq = m[[k, q]];
                        m[[k, p]] = c * akp - s * akq;
                        m[[p, k]] = m[[k, p]];
                        m[[k, q]] = s * akp + c * akq;
                        m[[q, k]] = m[[k, q]];
                    }
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[[j, j]]
            .partial_cmp(&m[[i, i]])
            .expect("eigenvalues are finite")
            .then(i.cmp(&j))
    });
    let mut vals = Array1::zeros(n);
    let mut vecs = Array2::zeros((n, n));
    for (col, &idx) in order.iter().enumerate() {
        vals[col] = m[[idx, idx]];
        let mut max_abs = 0.0f64;
        let mut max_at = 0usize;
        for k in 0..n {
            let e = v[[k, idx]];
            if e.abs() > max_abs {
                max_abs = e.abs();
                max_at = k;
            }
        }
        let flip = if v[[max_at, idx]] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vecs[[k, col]] = flip * v[[k, idx]];
        }
    }
    (vals, vecs)
}

/// Projects a symmetric matrix onto the PSD cone by clamping negative
/// eigenvalues to zero. Returns the repaired matrix and the most negative
/// eigenvalue found (zero or below; useful for diagnostics).
pub fn clamp_psd(a: &ArrayView2<f64>) -> (Array2<f64>, f64) {
    let n = a.nrows();
    let (vals, vecs) = symmetric_eigen(a);
    let min_eig = vals.iter().fold(0.0f64, |m, &v| m.min(v));
    if min_eig >= 0.0 {
        // Already PSD; still return the symmetrized copy for consistency.
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                m[[i, j]] = 0.5 * (a[[i, j]] + a[[j, i]]);
            }
        }
        return (m, min_eig);
    }
    let mut m = Array2::zeros((n, n));
    for k in 0..n {
        let lam = vals[k].max(0.0);
        if lam == 0.0 {
            continue;
        }
        for i in 0..n {
            let s = lam * vecs[[i, k]];
            for j in 0..n {
                m[[i, j]] += s * vecs[[j, k]];
            }
        }
    }
    // Symmetrize away rounding drift from the reconstruction.
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
    (m, min_eig)
}

/// Reports whether a symmetric PSD matrix is numerically rank deficient,
/// using an unpivoted Cholesky attempt. A pivot below `rel_tol` times the
/// largest diagonal entry counts as deficient.
pub fn psd_rank_deficient(a: &ArrayView2<f64>, rel_tol: f64) -> bool {
    let n = a.nrows();
    let mut l = a.to_owned();
    let scale = (0..n).fold(0.0f64, |m, i| m.max(a[[i, i]].abs()));
    let tol = rel_tol * scale.max(f64::MIN_POSITIVE);
    for k in 0..n {
        let mut d = l[[k, k]];
        for j in 0..k {
            d -= l[[k, j]] * l[[k, j]];
        }
        if d < tol {
            return true;
        }
        let d_sqrt = d.sqrt();
        l[[k, k]] = d_sqrt;
        for i in k + 1..n {
            let mut s = l[[i, k]];
            for j in 0..k {
                s -= l[[i, j]] * l[[k, j]];
            }
            l[[i, k]] = s / d_sqrt;
        }
    }
    false
}

/// Infinity norm of `A x - b`.
pub fn residual_inf(a: &ArrayView2<f64>, x: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    let r = a.dot(x) - b;
    r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn lu_solves_known_system() {
        let a = array![[4.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 4.0]];
        let b = array![11.0, -16.0, 17.0];
        let x = solve_refined(&a.view(), &b.view()).unwrap();
        let expected = array![1.0, -2.0, 3.0];
        for i in 0..3 {
            assert!((x[i] - expected[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let b = array![1.0, 2.0];
        assert!(matches!(
            solve_refined(&a.view(), &b.view()),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn refinement_handles_poor_conditioning() {
        // 8x8 Hilbert matrix, condition number ~1e10.
        let n = 8;
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                a[[i, j]] = 1.0 / ((i + j + 1) as f64);
            }
        }
        let x_true = Array1::from_iter((0..n).map(|i| (i as f64) - 3.0));
        let b = a.dot(&x_true);
        let x = solve_refined(&a.view(), &b.view()).unwrap();
        assert!(residual_inf(&a.view(), &x.view(), &b.view()) < 1e-12);
    }

    #[test]
    fn eigen_recovers_diagonal() {
        let a = array![[2.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 3.0]];
        let (vals, vecs) = symmetric_eigen(&a.view());
        assert!((vals[0] - 5.0).abs() < 1e-14);
        assert!((vals[1] - 3.0).abs() < 1e-14);
        assert!((vals[2] - 2.0).abs() < 1e-14);
        // Columns are signed unit vectors.
        assert!((vecs[[1, 0]] - 1.0).abs() < 1e-14);
        assert!((vecs[[2, 1]] - 1.0).abs() < 1e-14);
        assert!((vecs[[0, 2]] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigen_satisfies_residual_and_orthogonality() {
        // Deterministic symmetric test matrix.
        let n = 12;
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let v = ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4;
                a[[i, j]] += v;
                a[[j, i]] += v;
            }
        }
        let (vals, vecs) = symmetric_eigen(&a.view());
        for k in 0..n {
            let av = a.dot(&vecs.column(k));
            for i in 0..n {
                assert!(
                    (av[i] - vals[k] * vecs[[i, k]]).abs() < 1e-9,
                    "eigenpair {k} residual too large"
                );
            }
        }
        let vtv = vecs.t().dot(&vecs);
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((vtv[[i, j]] - want).abs() < 1e-10);
            }
        }
        // Descending order.
        for k in 1..n {
            assert!(vals[k - 1] >= vals[k]);
        }
    }

    #[test]
    fn clamp_psd_repairs_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]]; // eigenvalues 3 and -1
        let (m, min_eig) = clamp_psd(&a.view());
        assert!((min_eig - (-1.0)).abs() < 1e-12);
        let (vals, _) = symmetric_eigen(&m.view());
        assert!(vals.iter().all(|&v| v >= -1e-12));
        // Repaired matrix is 1.5 on the diagonal, 1.5 off it.
        assert!((m[[0, 0]] - 1.5).abs() < 1e-12);
        assert!((m[[0, 1]] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_detection() {
        let full = array![[2.0, 0.5], [0.5, 1.0]];
        assert!(!psd_rank_deficient(&full.view(), 1e-12));
        let deficient = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(psd_rank_deficient(&deficient.view(), 1e-12));
    }
}
