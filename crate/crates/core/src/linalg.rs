//! Small dense-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// `||a - b||_F / ||b||_F`.
pub fn frobenius_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Inverse of a symmetric matrix, falling back to the eigenvalue
/// pseudo-inverse when it is singular or indefinite. The flag reports the
/// fallback.
pub fn sym_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if let Some(ch) = m.clone().cholesky() {
        return (ch.inverse(), false);
    }
    (pseudo_inverse(m), true)
}

pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    let cut = top * 1e-12 * m.nrows() as f64;
    let inv = eig
        .eigenvalues
        .map(|e| if e.abs() > cut { 1.0 / e } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Symmetric square root; negative eigenvalues are clamped to zero.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let root = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &e| a.min(e))
}

/// `x' m x`.
pub fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let v = DVector::from_column_slice(x);
    v.dot(&(m * &v))
}

pub(crate) mod serde_matrix {
    //! Matrices as nested row arrays in JSON.
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_row_iterator(
            nrows,
            ncols,
            rows.into_iter().flatten(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_inverse_of_singular_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let (inv, fallback) = sym_inverse(&m);
        assert!(fallback);
        assert!((inv[(0, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(inv[(1, 1)], 0.0);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = sym_sqrt(&m);
        assert!((&r * &r - &m).amax() < 1e-12);
        assert!((quad_form(&m, &[1.0, 1.0]) - 9.0).abs() < 1e-12);
    }
}
