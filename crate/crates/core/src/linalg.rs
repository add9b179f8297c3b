//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

pub type Mat = DMatrix<f64>;

pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * (1.0 + m[(i, j)].abs())))
}

/// (M + Mᵀ) / 2
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn is_positive_definite(m: &Mat) -> bool {
    m.is_square() && m.clone().cholesky().is_some()
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &Mat, what: &str) -> Result<Mat> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// Log-determinant of a symmetric positive definite matrix.
pub fn spd_log_det(m: &Mat, what: &str) -> Result<f64> {
    let c = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))?;
    Ok(2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// General inverse via LU.
pub fn inverse(m: &Mat, what: &str) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{what} is singular")))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Mat) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Ratio of largest to smallest absolute eigenvalue of a symmetric matrix.
pub fn condition_number_sym(m: &Mat) -> f64 {
    let ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
        (lo.min(e.abs()), hi.max(e.abs()))
    });
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_of_diagonal() {
        let m = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]));
        assert!((spd_log_det(&m, "m").unwrap() - 6.0f64.ln()).abs() < 1e-14);
        assert!(spd_log_det(&Mat::zeros(2, 2), "m").is_err());
    }

    #[test]
    fn min_eig_and_condition() {
        let m = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((min_eigenvalue(&m) - 1.0).abs() < 1e-12);
        assert!((condition_number_sym(&m) - 3.0).abs() < 1e-12);
    }
}
