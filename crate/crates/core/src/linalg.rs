//! Small dense helpers for symmetric positive-definite systems.

use crate::error::{Error, Result};

/// Pivots at or below this are treated as loss of positive definiteness.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Lower Cholesky factor `L` of a row-major `n x n` matrix with `L Lᵀ = a`.
pub fn cholesky_factor(n: usize, a: &[f64]) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::ShapeMismatch {
            op: "cholesky",
            detail: format!("{} entries for {n}x{n}", a.len()),
        });
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= PIVOT_TOLERANCE {
                    return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the lower factor.
pub fn cholesky_solve(n: usize, l: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// `out = L z` for lower-triangular `L`.
#[inline]
pub fn lower_matvec(n: usize, l: &[f64], z: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i + 1];
        out[i] = row.iter().zip(z).map(|(a, b)| a * b).sum();
    }
}

/// `L Lᵀ` for a lower factor, used to check reconstructions.
pub fn recombine(n: usize, l: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..=i.min(j)).map(|k| l[i * n + k] * l[j * n + k]).sum();
        }
    }
    out
}
