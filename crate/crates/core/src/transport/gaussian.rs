use super::one_d::validate_weights;
use super::GaussianMeasure;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{spd_inv_sqrt, spd_sqrt, sym_apply, Matrix, SpdMatrix};

/// Relative floor used when a source covariance is (numerically) singular.
pub const REGULARIZATION_REL: f64 = 1e-9;

/// Squared Bures–Wasserstein distance between two Gaussian measures.
pub fn gaussian_w2_squared(a: &GaussianMeasure, b: &GaussianMeasure) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let mean_part = (&a.mean - &b.mean).norm_squared();
    let ra = spd_sqrt(&a.cov);
    let cross = SpdMatrix::from_psd_unchecked(ra.as_matrix() * b.cov.as_matrix() * ra.as_matrix());
    let fidelity = spd_sqrt(&cross).trace();
    Ok((mean_part + a.cov.trace() + b.cov.trace() - 2.0 * fidelity).max(0.0))
}

/// Coefficient of the linear OT map pushing N(0, src) onto N(0, dst).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportCoeff {
    pub matrix: Matrix,
    /// Set when `src` had to be regularized before inversion.
    pub regularized: bool,
}

/// `T = src^{-1/2} (src^{1/2} dst src^{1/2})^{1/2} src^{-1/2}`.
///
/// A source covariance whose smallest eigenvalue is at or below
/// `1e-9 · tr(src)/d` is shifted by that amount times the identity first.
pub fn gaussian_transport_coeff(src: &SpdMatrix, dst: &SpdMatrix) -> Result<TransportCoeff> {
    check_dim(src.dim(), dst.dim())?;
    let d = src.dim();
    if d == 0 {
        return Ok(TransportCoeff { matrix: Matrix::zeros(0, 0), regularized: false });
    }
    let floor = (REGULARIZATION_REL * src.trace() / d as f64).max(f64::MIN_POSITIVE);
    let min_eig = src.eigenvalues().min();
    let (src, regularized) = if min_eig <= floor {
        let shifted = src.as_matrix() + Matrix::identity(d, d) * floor;
        (SpdMatrix::from_psd_unchecked(shifted), true)
    } else {
        (src.clone(), false)
    };
    let root = spd_sqrt(&src);
    let inv_root = spd_inv_sqrt(&src, 0.0);
    let middle = sym_apply(&(root.as_matrix() * dst.as_matrix() * root.as_matrix()), |v| {
        v.max(0.0).sqrt()
    });
    let t = inv_root.as_matrix() * middle * inv_root.as_matrix();
    Ok(TransportCoeff {
        matrix: crate::linalg::symmetrize(&t),
        regularized,
    })
}

fn barycenter_map(s: &SpdMatrix, covs: &[SpdMatrix], weights: &[f64]) -> Matrix {
    let root = spd_sqrt(s);
    let d = s.dim();
    let mut acc = Matrix::zeros(d, d);
    for (c, &w) in covs.iter().zip(weights) {
        let inner = root.as_matrix() * c.as_matrix() * root.as_matrix();
        acc += sym_apply(&inner, |v| v.max(0.0).sqrt()) * w;
    }
    acc
}

/// Bures–Wasserstein barycenter covariance by fixed-point iteration,
/// started from the Euclidean mean of the inputs.
///
/// Stops at the first iterate `S` with
/// `‖Σᵢ λᵢ (S^{1/2} Σᵢ S^{1/2})^{1/2} − S‖_F ≤ tol · ‖S‖_F`.
pub fn gaussian_barycenter_fixedpoint(
    covs: &[SpdMatrix],
    weights: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SpdMatrix> {
    let first = covs
        .first()
        .ok_or_else(|| Error::input("barycenter of an empty collection"))?;
    validate_weights(weights, covs.len())?;
    let d = first.dim();
    for c in covs {
        check_dim(d, c.dim())?;
    }
    let mut mean = Matrix::zeros(d, d);
    for (c, &w) in covs.iter().zip(weights) {
        mean += c.as_matrix() * w;
    }
    let mut s = SpdMatrix::from_psd_unchecked(mean);
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iter {
        let k = barycenter_map(&s, covs, weights);
        residual = (&k - s.as_matrix()).norm() / s.as_matrix().norm().max(f64::MIN_POSITIVE);
        if residual <= tol {
            return Ok(s);
        }
        let inv_root = spd_inv_sqrt(&s, f64::MIN_POSITIVE);
        let next = inv_root.as_matrix() * &k * &k * inv_root.as_matrix();
        s = SpdMatrix::from_psd_unchecked(next);
    }
    Err(Error::Convergence { iterations: max_iter, residual })
}

/// Residual of the barycenter equation, relative to `‖S‖_F`.
pub fn barycenter_residual(s: &SpdMatrix, covs: &[SpdMatrix], weights: &[f64]) -> f64 {
    let k = barycenter_map(s, covs, weights);
    (&k - s.as_matrix()).norm() / s.as_matrix().norm().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_rel_err, Vector};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn g(mean: &[f64], cov: Matrix) -> GaussianMeasure {
        GaussianMeasure::new(Vector::from_column_slice(mean), SpdMatrix::new(cov).unwrap()).unwrap()
    }

    #[test]
    fn distance_closed_forms() {
        let a = GaussianMeasure::univariate(0.0, 1.0).unwrap();
        let b = GaussianMeasure::univariate(0.0, 4.0).unwrap();
        assert_relative_eq!(gaussian_w2_squared(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
        let c = g(&[0.0, 0.0], Matrix::identity(2, 2));
        let d = g(&[1.0, -2.0], Matrix::identity(2, 2));
        assert_relative_eq!(gaussian_w2_squared(&c, &d).unwrap(), 5.0, epsilon = 1e-12);
        let e = g(&[0.0, 0.0], dmatrix![1.0, 0.0; 0.0, 4.0]);
        let f = g(&[0.0, 0.0], dmatrix![4.0, 0.0; 0.0, 1.0]);
        assert_relative_eq!(gaussian_w2_squared(&e, &f).unwrap(), 2.0, epsilon = 1e-12);
        assert!(gaussian_w2_squared(&a, &c).is_err());
    }

    #[test]
    fn transport_coeff_closed_forms() {
        let c = SpdMatrix::new(dmatrix![2.0, 0.3; 0.3, 1.0]).unwrap();
        let t = gaussian_transport_coeff(&c, &c).unwrap();
        assert_relative_eq!(t.matrix, Matrix::identity(2, 2), epsilon = 1e-10);
        let dst = SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let t = gaussian_transport_coeff(&SpdMatrix::identity(2), &dst).unwrap();
        assert_relative_eq!(t.matrix, dmatrix![2.0, 0.0; 0.0, 3.0], epsilon = 1e-12);
        let t = gaussian_transport_coeff(
            &SpdMatrix::from_diagonal(&[4.0]).unwrap(),
            &SpdMatrix::from_diagonal(&[1.0]).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(t.matrix[(0, 0)], 0.5, epsilon = 1e-14);
        assert!(!t.regularized);
    }

    #[test]
    fn transport_coeff_pushes_forward() {
        let src = SpdMatrix::new(dmatrix![2.0, 1.0; 1.0, 2.0]).unwrap();
        let dst = SpdMatrix::new(dmatrix![1.0, -0.4; -0.4, 3.0]).unwrap();
        let t = gaussian_transport_coeff(&src, &dst).unwrap().matrix;
        assert!(frobenius_rel_err(&(&t * src.as_matrix() * &t), dst.as_matrix()) < 1e-10);
    }

    #[test]
    fn singular_source_is_regularized() {
        let src = SpdMatrix::new(dmatrix![1.0, 1.0; 1.0, 1.0]).unwrap();
        let t = gaussian_transport_coeff(&src, &SpdMatrix::identity(2)).unwrap();
        assert!(t.regularized);
        assert!(t.matrix.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn barycenter_cases() {
        let c = SpdMatrix::new(dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        let b = gaussian_barycenter_fixedpoint(&[c.clone(), c.clone()], &[0.5, 0.5], 1e-12, 10).unwrap();
        assert_relative_eq!(*b.as_matrix(), *c.as_matrix(), epsilon = 1e-12);

        let one = SpdMatrix::from_diagonal(&[1.0]).unwrap();
        let nine = SpdMatrix::from_diagonal(&[9.0]).unwrap();
        let b = gaussian_barycenter_fixedpoint(&[one, nine], &[0.5, 0.5], 1e-12, 10).unwrap();
        assert_relative_eq!(b.as_matrix()[(0, 0)], 4.0, epsilon = 1e-12);

        let covs = [SpdMatrix::identity(2), SpdMatrix::new(dmatrix![2.0, 1.0; 1.0, 2.0]).unwrap()];
        let b = gaussian_barycenter_fixedpoint(&covs, &[0.5, 0.5], 1e-10, 200).unwrap();
        assert!(barycenter_residual(&b, &covs, &[0.5, 0.5]) <= 1e-8);
    }

    #[test]
    fn barycenter_reports_non_convergence() {
        let covs = [SpdMatrix::identity(2), SpdMatrix::new(dmatrix![5.0, 2.0; 2.0, 1.0]).unwrap()];
        match gaussian_barycenter_fixedpoint(&covs, &[0.3, 0.7], 1e-300, 2) {
            Err(Error::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual.is_finite());
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}
