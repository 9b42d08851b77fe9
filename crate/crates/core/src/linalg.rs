//! Dense matrix helpers shared by the solvers and the bound evaluators.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

const SCHUR_MAX_ITER: usize = 10_000;

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Computation("non-finite entry in eigenvalue input".into()));
    }
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::Computation("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Operator 2-norm (largest singular value).
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest singular value; equals the smallest eigenvalue for SPD input.
pub fn sigma_min(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().min()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    let sym = symmetrize(m);
    sym.symmetric_eigenvalues().min()
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Relative symmetry test: `‖M − Mᵀ‖_F ≤ tol · max(1, ‖M‖_F)`.
pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).norm() <= tol * m.norm().max(1.0)
}

pub fn is_positive_definite(m: &Mat) -> bool {
    m.is_square() && m.nrows() > 0 && min_sym_eigenvalue(m) > 0.0
}

/// Builds a matrix from nested row-major rows.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Row-major flattening: index `i * ncols + j` holds `m[(i, j)]`.
pub fn vec_row_major(m: &Mat) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn unvec_row_major(v: &[f64], nrows: usize, ncols: usize) -> Mat {
    Mat::from_fn(nrows, ncols, |i, j| v[i * ncols + j])
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_trivial() {
        assert_eq!(spectral_radius(&Mat::zeros(4, 4)).unwrap(), 0.0);
        assert!((spectral_radius(&Mat::identity(3, 3)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_radius_complex_pair() {
        // rotation scaled by 0.9: eigenvalues 0.9·e^{±iθ}
        let (c, s) = (0.3f64.cos() * 0.9, 0.3f64.sin() * 0.9);
        let m = Mat::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!((spectral_radius(&m).unwrap() - 0.9).abs() < 1e-14);
    }

    #[test]
    fn spectral_radius_rejects_rectangular() {
        assert!(matches!(spectral_radius(&Mat::zeros(2, 3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn row_major_roundtrip() {
        let m = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = vec_row_major(&m);
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unvec_row_major(&v, 2, 3), m);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }
}
