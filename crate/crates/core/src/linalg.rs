//! Dense kernels for the Gaussian solver: SPD square roots, the Moore–Penrose
//! pseudo-inverse, Kronecker products and column-major vectorization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative symmetry tolerance accepted by [`SpdMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues above `-NEG_EIG_TOL * lambda_max` are clamped to zero; below it the input is rejected.
pub const NEG_EIG_TOL: f64 = 1e-10;
/// Relative singular-value cutoff for [`pinv`].
pub const PINV_RTOL: f64 = 1e-12;

/// A symmetric positive semi-definite matrix.
///
/// Construction checks symmetry relative to the largest absolute entry and
/// clamps slightly negative eigenvalues to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SpdMatrix(Matrix);

impl SpdMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::input(format!(
                "covariance must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("covariance has non-finite entries"));
        }
        let scale = m.amax();
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::input(format!(
                "matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let sym = symmetrize(&m);
        if sym.nrows() == 0 {
            return Ok(SpdMatrix(sym));
        }
        let eig = SymmetricEigen::new(sym.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min < -NEG_EIG_TOL * max.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::input(format!(
                "matrix is not positive semi-definite (eigenvalue {min:e})"
            )));
        }
        if min < 0.0 {
            let clamped = eig.eigenvalues.map(|v| v.max(0.0));
            return Ok(SpdMatrix(recompose(&eig.eigenvectors, &clamped)));
        }
        Ok(SpdMatrix(sym))
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix(Matrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        SpdMatrix::new(Matrix::from_diagonal(&Vector::from_column_slice(diag)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        SpdMatrix::new(matrix_from_rows(rows)?)
    }

    /// Projects an arbitrary square matrix onto the PSD cone: symmetrize,
    /// then clamp negative eigenvalues to zero.
    pub fn psd_projection(m: &Matrix) -> Self {
        let sym = symmetrize(m);
        if sym.nrows() == 0 {
            return SpdMatrix(sym);
        }
        let eig = SymmetricEigen::new(sym);
        let clamped = eig.eigenvalues.map(|v| v.max(0.0));
        SpdMatrix(recompose(&eig.eigenvectors, &clamped))
    }

    /// Wraps a matrix already known to be symmetric PSD, only symmetrizing it.
    pub(crate) fn from_psd_unchecked(m: Matrix) -> Self {
        SpdMatrix(symmetrize(&m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn eigenvalues(&self) -> Vector {
        if self.dim() == 0 {
            return Vector::zeros(0);
        }
        SymmetricEigen::new(self.0.clone()).eigenvalues
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.0)
    }
}

impl TryFrom<Vec<Vec<f64>>> for SpdMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SpdMatrix::from_rows(&rows)
    }
}

impl From<SpdMatrix> for Vec<Vec<f64>> {
    fn from(m: SpdMatrix) -> Self {
        m.to_rows()
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn recompose(vectors: &Matrix, values: &Vector) -> Matrix {
    let scaled = vectors * Matrix::from_diagonal(values);
    symmetrize(&(scaled * vectors.transpose()))
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_apply(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    if m.nrows() == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mapped = eig.eigenvalues.map(f);
    recompose(&eig.eigenvectors, &mapped)
}

/// Principal square root via symmetric eigendecomposition, eigenvalues clamped at zero.
pub fn spd_sqrt(a: &SpdMatrix) -> SpdMatrix {
    SpdMatrix(sym_apply(a.as_matrix(), |v| v.max(0.0).sqrt()))
}

/// Inverse square root; eigenvalues below `floor` are raised to it first.
pub fn spd_inv_sqrt(a: &SpdMatrix, floor: f64) -> SpdMatrix {
    SpdMatrix(sym_apply(a.as_matrix(), |v| 1.0 / v.max(floor).sqrt()))
}

/// Moore–Penrose pseudo-inverse. Singular values below `1e-12 * sigma_max` are treated as zero.
pub fn pinv(a: &Matrix) -> Result<Matrix> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("pinv: non-finite entries"));
    }
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Ok(Matrix::zeros(c, r));
    }
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max == 0.0 {
        return Ok(Matrix::zeros(c, r));
    }
    let cutoff = PINV_RTOL * sigma_max;
    let u = svd.u.as_ref().expect("svd computed with u");
    let vt = svd.v_t.as_ref().expect("svd computed with v_t");
    let mut out = Matrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            out += vt.row(k).transpose() * u.column(k).transpose() * (1.0 / s);
        }
    }
    Ok(out)
}

/// Numerical rank with the same relative cutoff as [`pinv`].
pub fn rank(a: &Matrix) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    sv.iter().filter(|&&s| s > PINV_RTOL * max && s > 0.0).count()
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Column-stacking vectorization.
pub fn vec_cols(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_cols`].
pub fn unvec(v: &Vector, nrows: usize, ncols: usize) -> Matrix {
    Matrix::from_column_slice(nrows, ncols, v.as_slice())
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_operator_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.amax()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::input("ragged matrix rows"));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn frobenius_rel_err(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn sqrt_of_diagonal_and_identity() {
        let s = spd_sqrt(&SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap());
        assert_relative_eq!(*s.as_matrix(), dmatrix![2.0, 0.0; 0.0, 3.0], epsilon = 1e-12);
        let i = spd_sqrt(&SpdMatrix::identity(3));
        assert_relative_eq!(*i.as_matrix(), Matrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn sqrt_of_coupled_matrix_squares_back() {
        let a = SpdMatrix::new(dmatrix![2.0, 1.0; 1.0, 2.0]).unwrap();
        let r = spd_sqrt(&a);
        // eigenvalues 3 and 1, eigenvectors (1,1)/sqrt2, (1,-1)/sqrt2
        let expected = dmatrix![
            (3f64.sqrt() + 1.0) / 2.0, (3f64.sqrt() - 1.0) / 2.0;
            (3f64.sqrt() - 1.0) / 2.0, (3f64.sqrt() + 1.0) / 2.0
        ];
        assert_relative_eq!(*r.as_matrix(), expected, epsilon = 1e-12);
        assert!(frobenius_rel_err(&(r.as_matrix() * r.as_matrix()), a.as_matrix()) < 1e-8);
    }

    #[test]
    fn construction_rejects_bad_inputs() {
        assert!(SpdMatrix::new(dmatrix![1.0, 0.5; 0.0, 1.0]).is_err());
        assert!(SpdMatrix::new(dmatrix![1.0, 2.0; 2.0, 1.0]).is_err());
        assert!(SpdMatrix::new(dmatrix![f64::NAN, 0.0; 0.0, 1.0]).is_err());
        assert!(SpdMatrix::new(Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn tiny_negative_eigenvalue_is_clamped() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0 - 1e-14];
        let s = SpdMatrix::new(m).unwrap();
        assert!(s.eigenvalues().min() >= 0.0);
    }

    #[test]
    fn pinv_closed_forms() {
        assert_relative_eq!(pinv(&Matrix::identity(3, 3)).unwrap(), Matrix::identity(3, 3), epsilon = 1e-14);
        let z = pinv(&Matrix::zeros(2, 3)).unwrap();
        assert_eq!(z.shape(), (3, 2));
        assert_eq!(z.amax(), 0.0);
        let col = dmatrix![1.0; 1.0];
        assert_relative_eq!(pinv(&col).unwrap(), dmatrix![0.5, 0.5], epsilon = 1e-14);
    }

    #[test]
    fn pinv_rejects_nan() {
        assert!(pinv(&dmatrix![f64::NAN]).is_err());
    }

    #[test]
    fn kron_cases() {
        let i2 = Matrix::identity(2, 2);
        assert_eq!(kron(&i2, &i2), Matrix::identity(4, 4));
        let b = dmatrix![1.0, 2.0; 3.0, 4.0];
        assert_eq!(kron(&dmatrix![2.0], &b), &b * 2.0);
        let x = dmatrix![1.0; 1.0];
        let left = kron(&x.transpose(), &i2);
        let right = kron(&x, &i2);
        assert_relative_eq!(left * Matrix::identity(4, 4) * right, &i2 * 2.0, epsilon = 1e-14);
    }

    #[test]
    fn vec_is_column_major() {
        let m = dmatrix![1.0, 2.0; 3.0, 4.0];
        assert_eq!(vec_cols(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(unvec(&vec_cols(&m), 2, 2), m);
    }

    #[test]
    fn rank_and_operator_norm() {
        assert_eq!(rank(&dmatrix![1.0, 2.0; 2.0, 4.0]), 1);
        assert_relative_eq!(sym_operator_norm(&dmatrix![1.0, 0.0; 0.0, -3.0]), 3.0, epsilon = 1e-14);
    }
}
