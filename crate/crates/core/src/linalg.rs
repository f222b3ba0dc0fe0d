use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    let chol = sym
        .cholesky()
        .ok_or(Error::Singular("matrix is not positive definite"))?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Column rank check of a dense design via the Gram matrix.
pub fn has_full_column_rank(rows: &[&[f64]], cols: usize) -> bool {
    if cols == 0 {
        return true;
    }
    let mut gram = DMatrix::<f64>::zeros(cols, cols);
    for r in rows {
        for i in 0..cols {
            for j in 0..cols {
                gram[(i, j)] += r[i] * r[j];
            }
        }
    }
    let scale = (0..cols).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    if scale == 0.0 {
        return false;
    }
    let d: Vec<f64> = (0..cols).map(|i| libm::sqrt(gram[(i, i)].max(1e-300))).collect();
    let normalized = DMatrix::from_fn(cols, cols, |i, j| gram[(i, j)] / (d[i] * d[j]));
    min_eigenvalue(&normalized) > 1e-10
}
