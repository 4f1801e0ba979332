//! Small dense linear-algebra routines used internally: packed-triangular
//! Cholesky, triangular solves, a symmetric Jacobi eigensolver, and Gaussian
//! elimination. All of it is desk-scale (matrices up to a few hundred rows).

use ndarray::Array2;

use crate::scalar::{cast, Scalar};

/// Offset of row `i` in a row-major packed lower-triangular layout.
#[inline]
pub(crate) fn tri_row(i: usize) -> usize {
    i * (i + 1) / 2
}

/// In-place Cholesky of a packed lower-triangular matrix. On success the
/// buffer holds the factor L with `L L^T = A`. Returns the index of the first
/// nonpositive pivot on failure.
pub(crate) fn cholesky_packed_in_place<S: Scalar>(a: &mut [S], n: usize) -> Result<(), usize> {
    for i in 0..n {
        let row_i = tri_row(i);
        for j in 0..=i {
            let row_j = tri_row(j);
            let mut sum = a[row_i + j];
            for k in 0..j {
                sum = sum - a[row_i + k] * a[row_j + k];
            }
            if j == i {
                if sum <= S::zero() {
                    return Err(i);
                }
                a[row_i + i] = sum.sqrt();
            } else {
                a[row_i + j] = sum / a[row_j + j];
            }
        }
    }
    Ok(())
}

/// Solves `L x = b` in place for a packed lower-triangular factor.
pub(crate) fn forward_solve_packed<S: Scalar>(l: &[S], n: usize, b: &mut [S]) {
    for i in 0..n {
        let row = tri_row(i);
        let mut sum = b[i];
        for j in 0..i {
            sum = sum - l[row + j] * b[j];
        }
        b[i] = sum / l[row + i];
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in decreasing order with matching eigenvector columns.
pub(crate) fn jacobi_eigh<S: Scalar>(a: &Array2<S>) -> (Vec<S>, Array2<S>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let mut m = a.clone();
    let mut v = Array2::<S>::zeros((n, n));
    for i in 0..n {
        v[[i, i]] = S::one();
    }

    let frob_sq: S = m.iter().map(|x| *x * *x).sum();
    let tol = frob_sq * S::epsilon() * S::epsilon() * cast::<S>((n * n) as f64);

    for _sweep in 0..100 {
        let mut off_sq = S::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off_sq += m[[p, q]] * m[[p, q]];
            }
        }
        if off_sq <= tol || off_sq == S::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == S::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (cast::<S>(2.0) * apq);
                let t = {
                    let abs = theta.abs();
                    let t = S::one() / (abs + (theta * theta + S::one()).sqrt());
                    if theta < S::zero() {
                        -t
                    } else {
                        t
                    }
                };
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
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
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let evals: Vec<S> = order.iter().map(|&i| m[[i, i]]).collect();
    let mut evecs = Array2::<S>::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            evecs[[row, col]] = v[[row, src]];
        }
    }
    (evals, evecs)
}

/// Solves a dense linear system by Gaussian elimination with partial pivoting.
pub(crate) fn solve_dense<S: Scalar>(a: &Array2<S>, b: &[S]) -> Option<Vec<S>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.len());
    let mut m = a.clone();
    let mut x: Vec<S> = b.to_vec();

    for col in 0..n {
        let mut pivot = col;
        for row in (col + 1)..n {
            if m[[row, col]].abs() > m[[pivot, col]].abs() {
                pivot = row;
            }
        }
        if m[[pivot, col]] == S::zero() {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                let tmp = m[[col, k]];
                m[[col, k]] = m[[pivot, k]];
                m[[pivot, k]] = tmp;
            }
            x.swap(col, pivot);
        }
        for row in (col + 1)..n {
            let factor = m[[row, col]] / m[[col, col]];
            if factor == S::zero() {
                continue;
            }
            for k in col..n {
                let delta = factor * m[[col, k]];
                m[[row, k]] -= delta;
            }
            let delta = factor * x[col];
            x[row] -= delta;
        }
    }
    for col in (0..n).rev() {
        let mut sum = x[col];
        for k in (col + 1)..n {
            sum = sum - m[[col, k]] * x[k];
        }
        x[col] = sum / m[[col, col]];
    }
    Some(x)
}
