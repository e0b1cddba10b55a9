//! Dense symmetric positive semi-definite solves for normal equations.

use crate::scalar::Scalar;

/// Solves `A x = b` for symmetric positive semi-definite `A` (row-major,
/// `p x p`) by Cholesky factorization.
///
/// Pivots that are numerically zero relative to the largest diagonal entry
/// are skipped and their unknowns fixed at zero, which gives the minimum
/// support solution for rank-deficient designs (constant or duplicated
/// columns). Returns the solution and the indices of skipped pivots.
pub fn solve_psd<T: Scalar>(a: &[T], b: &[T], p: usize) -> (Vec<T>, Vec<usize>) {
    assert_eq!(a.len(), p * p);
    assert_eq!(b.len(), p);
    let max_diag = (0..p).map(|i| a[i * p + i]).fold(T::zero(), T::max);
    let tol = max_diag * T::epsilon() * T::lit(64.0) * T::from_usize_lossy(p.max(1));

    let mut l = vec![T::zero(); p * p];
    let mut skipped = vec![false; p];
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= l[j * p + k] * l[j * p + k];
        }
        if d <= tol {
            skipped[j] = true;
            continue;
        }
        let ljj = d.sqrt();
        l[j * p + j] = ljj;
        for i in (j + 1)..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            l[i * p + j] = s / ljj;
        }
    }

    // L z = b
    let mut z = vec![T::zero(); p];
    for i in 0..p {
        if skipped[i] {
            continue;
        }
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * z[k];
        }
        z[i] = s / l[i * p + i];
    }
    // L^T x = z
    let mut x = vec![T::zero(); p];
    for i in (0..p).rev() {
        if skipped[i] {
            continue;
        }
        let mut s = z[i];
        for k in (i + 1)..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    let skipped_idx = skipped
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| s.then_some(i))
        .collect();
    (x, skipped_idx)
}
