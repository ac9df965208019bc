//! Small dense linear-algebra helpers shared across modules.
//!
//! Multi-channel sequences are stored as `T × n` matrices (one row per
//! sample). Stacked vectors are time-major: sample 0 channels first, then
//! sample 1, and so on.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for numerical rank and pseudoinverses.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Flattens a `T × n` sequence into a time-major vector of length `T·n`.
pub fn stack_rows(m: &DMatrix<f64>) -> DVector<f64> {
    let (rows, cols) = m.shape();
    DVector::from_fn(rows * cols, |i, _| m[(i / cols, i % cols)])
}

/// Inverse of [`stack_rows`].
pub fn unstack(v: &DVector<f64>, channels: usize) -> DMatrix<f64> {
    assert!(channels > 0 && v.len() % channels == 0);
    DMatrix::from_fn(v.len() / channels, channels, |k, c| v[k * channels + c])
}

/// Singular values of `m` (descending).
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    // Bidiagonalization is cheaper on the tall orientation.
    let sv = if m.nrows() < m.ncols() {
        m.transpose().svd(false, false).singular_values
    } else {
        m.clone().svd(false, false).singular_values
    };
    let mut values: alloc::vec::Vec<f64> = sv.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(values)
}

/// Number of singular values above `rel_tol × σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.iter().next() {
        Some(&largest) if largest > 0.0 => sv.iter().filter(|&&s| s > rel_tol * largest).count(),
        _ => 0,
    }
}

/// Moore–Penrose pseudoinverse with a relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let largest = svd.singular_values.max();
    let cutoff = rel_tol * largest;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut out = DMatrix::zeros(cols, rows);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += (v_t.row(i).transpose() / s) * u.column(i).transpose();
        }
    }
    out
}

/// Least-norm least-squares solution of `a x = b` via a truncated SVD.
pub fn least_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let cutoff = rel_tol * svd.singular_values.max();
    svd.solve(b, cutoff.max(f64::MIN_POSITIVE))
        .expect("U and V^T were computed")
}

/// Largest absolute entry of `m - mᵀ`.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of a symmetric matrix (symmetrized first).
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Block-diagonal matrix with `count` copies of `block`.
pub fn repeat_block_diag(block: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(r * count, c * count);
    for k in 0..count {
        out.view_mut((k * r, k * c), (r, c)).copy_from(block);
    }
    out
}

/// Infinity norm of a vector; zero for empty vectors.
pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Vertical concatenation of matrices with equal column counts.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut offset = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((offset, 0), b.shape()).copy_from(*b);
        offset += b.nrows();
    }
    out
}

/// Vertical concatenation of vectors.
pub fn vcat(parts: &[&DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut offset = 0;
    for p in parts {
        out.rows_mut(offset, p.len()).copy_from(*p);
        offset += p.len();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_roundtrip_is_time_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = stack_rows(&m);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unstack(&v, 3), m);
    }

    #[test]
    fn rank_of_outer_product_is_one() {
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let b = DVector::from_vec(vec![4.0, 5.0, 6.0, 7.0]);
        assert_eq!(numerical_rank(&(&a * b.transpose()), RANK_TOLERANCE), 1);
    }

    #[test]
    fn pinv_of_wide_matrix_is_right_inverse() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, 1.0]);
        let p = pinv(&a, RANK_TOLERANCE);
        assert!((&a * &p - DMatrix::identity(2, 2)).abs().max() < 1e-12);
        let x = least_norm_solve(&a, &DVector::from_vec(vec![1.0, 2.0]), RANK_TOLERANCE);
        assert!((&p * DVector::from_vec(vec![1.0, 2.0]) - x).abs().max() < 1e-12);
    }
}
