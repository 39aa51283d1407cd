//! Small dense LU factorization with partial pivoting.

use crate::error::{Error, Result};

/// In-place LU of a row-major `n x n` matrix. Returns the row permutation
/// sign, or an error when a pivot falls below `rel_tol * max|a_ij|`.
fn lu_in_place(a: &mut [f64], n: usize, rel_tol: f64) -> Result<(f64, Vec<usize>)> {
    assert_eq!(a.len(), n * n);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::Degenerate("zero matrix".into()));
    }
    let mut sign = 1.0;
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[pivot_row * n + col].abs() <= rel_tol * scale {
            return Err(Error::Degenerate(format!("singular matrix (column {col})")));
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            perm.swap(col, pivot_row);
            sign = -sign;
        }
        let pivot = a[col * n + col];
        for i in col + 1..n {
            let f = a[i * n + col] / pivot;
            a[i * n + col] = f;
            for j in col + 1..n {
                a[i * n + j] -= f * a[col * n + j];
            }
        }
    }
    Ok((sign, perm))
}

/// `ln|det A|` for a row-major `n x n` matrix.
pub fn log_abs_det(matrix: &[f64], n: usize) -> Result<f64> {
    let mut a = matrix.to_vec();
    lu_in_place(&mut a, n, 1e-14)?;
    Ok((0..n).map(|i| a[i * n + i].abs().ln()).sum())
}

/// Solves `A x = b`.
pub fn solve(matrix: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut a = matrix.to_vec();
    let (_, perm) = lu_in_place(&mut a, n, 1e-12)?;
    let mut x: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for j in 0..i {
            x[i] -= a[i * n + j] * x[j];
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            x[i] -= a[i * n + j] * x[j];
        }
        x[i] /= a[i * n + i];
    }
    Ok(x)
}
