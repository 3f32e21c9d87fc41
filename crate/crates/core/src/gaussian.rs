//! Gaussian responses: Bures–Wasserstein gradient descent on the covariance of
//! the coefficient law, with the mean solved in closed form.
//!
//! A Gaussian coefficient law `Q = N(m_Q, Σ_Q)` lives on `ℝ^{dp}` through
//! `vec(Bᵀ)`, so the marginal at covariate `x` is
//! `N((xᵀ⊗I_d) m_Q, (xᵀ⊗I_d) Σ_Q (x⊗I_d))`.

use std::time::Instant;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{kron, pinv, symmetrize, Matrix, SpdMatrix, Vector};
use crate::report::{FitReport, TracePoint};
use crate::transport::{gaussian_transport_coeff, gaussian_w2_squared, GaussianMeasure};

/// Gaussian law of the vectorized coefficient matrix `vec(Bᵀ) ∈ ℝ^{dp}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffGaussian {
    pub d: usize,
    pub p: usize,
    #[serde(with = "vector_serde")]
    pub mean: Vector,
    pub cov: SpdMatrix,
}

mod vector_serde {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        Ok(Vector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

impl CoeffGaussian {
    pub fn new(d: usize, p: usize, mean: Vector, cov: SpdMatrix) -> Result<Self> {
        if d == 0 || p == 0 {
            return Err(Error::input("coefficient law needs d, p >= 1"));
        }
        check_dim(d * p, mean.len())?;
        check_dim(d * p, cov.dim())?;
        Ok(CoeffGaussian { d, p, mean, cov })
    }

    /// Coefficient matrix `B` (p × d) corresponding to the mean.
    pub fn mean_matrix(&self) -> Matrix {
        // vec(Bᵀ) stacks the columns of Bᵀ, i.e. the rows of B
        Matrix::from_column_slice(self.d, self.p, self.mean.as_slice()).transpose()
    }
}

/// `xᵀ ⊗ I_d`, the `d × dp` map from `vec(Bᵀ)` to `Bᵀx`.
pub fn selector(x: &[f64], d: usize) -> Matrix {
    kron(&Matrix::from_row_slice(1, x.len(), x), &Matrix::identity(d, d))
}

pub fn marginal_cov(cov: &SpdMatrix, d: usize, x: &[f64]) -> Result<SpdMatrix> {
    check_dim(cov.dim(), d * x.len())?;
    let l = selector(x, d);
    Ok(SpdMatrix::from_psd_unchecked(&l * cov.as_matrix() * l.transpose()))
}

/// Marginal `Q_x` of a Gaussian coefficient law.
pub fn marginal(q: &CoeffGaussian, x: &[f64]) -> Result<GaussianMeasure> {
    check_dim(q.p, x.len())?;
    let l = selector(x, q.d);
    GaussianMeasure::new(&l * &q.mean, marginal_cov(&q.cov, q.d, x)?)
}

/// `(1/n) Σᵢ xᵢxᵢᵀ ⊗ (Tᵢ − I_d)`, with `Tᵢ` the OT coefficient from the
/// current marginal covariance to the i-th response covariance.
/// Also returns whether any marginal needed regularization.
fn bw_gradient_matrix(
    q_cov: &SpdMatrix,
    design: &Design,
    response_covs: &[SpdMatrix],
) -> Result<(Matrix, bool)> {
    check_dim(design.n(), response_covs.len())?;
    let d = response_covs
        .first()
        .map(SpdMatrix::dim)
        .ok_or_else(|| Error::input("no responses"))?;
    check_dim(d * design.p(), q_cov.dim())?;
    let dp = q_cov.dim();
    let mut grad = Matrix::zeros(dp, dp);
    let mut regularized = false;
    let eye = Matrix::identity(d, d);
    for (x, target) in design.rows().iter().zip(response_covs) {
        check_dim(d, target.dim())?;
        let sigma_x = marginal_cov(q_cov, d, x)?;
        let t = gaussian_transport_coeff(&sigma_x, target)?;
        regularized |= t.regularized;
        let xv = Matrix::from_column_slice(x.len(), 1, x);
        grad += kron(&(&xv * xv.transpose()), &(t.matrix - &eye));
    }
    grad /= design.n() as f64;
    Ok((symmetrize(&grad), regularized))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BwStep {
    pub cov: SpdMatrix,
    pub regularized: bool,
}

/// One Bures–Wasserstein gradient step on the coefficient covariance:
/// `M = I + τ (1/n) Σ xᵢxᵢᵀ ⊗ (Tᵢ − I)`, `Σ ← M Σ M`, symmetrized.
pub fn bw_gradient_step(
    q_cov: &SpdMatrix,
    design: &Design,
    response_covs: &[SpdMatrix],
    tau: f64,
) -> Result<BwStep> {
    if !(tau > 0.0) {
        return Err(Error::input("step size must be positive"));
    }
    let (grad, regularized) = bw_gradient_matrix(q_cov, design, response_covs)?;
    let dp = q_cov.dim();
    let m = Matrix::identity(dp, dp) + grad * tau;
    let next = &m * q_cov.as_matrix() * &m;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            iteration: 0,
            reason: "non-finite covariance after step".into(),
        });
    }
    Ok(BwStep {
        cov: SpdMatrix::from_psd_unchecked(next),
        regularized,
    })
}

/// Operator norm of the Gaussian first-order condition, restricted to the range of `Σ_Q`.
pub fn gaussian_foc_residual(
    q: &CoeffGaussian,
    design: &Design,
    responses: &[GaussianMeasure],
) -> Result<f64> {
    let covs: Vec<SpdMatrix> = responses.iter().map(|r| r.cov.clone()).collect();
    foc_residual_cov(&q.cov, design, &covs)
}

fn foc_residual_cov(cov: &SpdMatrix, design: &Design, response_covs: &[SpdMatrix]) -> Result<f64> {
    let (grad, _) = bw_gradient_matrix(cov, design, response_covs)?;
    let eig = SymmetricEigen::new(cov.as_matrix().clone());
    let max = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&k| eig.eigenvalues[k] > 1e-10 * max)
        .collect();
    if keep.is_empty() {
        return Ok(0.0);
    }
    let basis = eig.eigenvectors.select_columns(&keep);
    let restricted = basis.transpose() * grad * &basis;
    Ok(crate::linalg::sym_operator_norm(&restricted))
}

/// Least-squares objective `(1/n) Σ W₂²(Q_{xᵢ}, νᵢ)` for a Gaussian law.
pub fn gaussian_objective(
    q: &CoeffGaussian,
    design: &Design,
    responses: &[GaussianMeasure],
) -> Result<f64> {
    check_dim(design.n(), responses.len())?;
    let mut total = 0.0;
    for (x, r) in design.rows().iter().zip(responses) {
        total += gaussian_w2_squared(&marginal(q, x)?, r)?;
    }
    Ok(total / design.n() as f64)
}

fn centered_objective(cov: &SpdMatrix, design: &Design, response_covs: &[SpdMatrix]) -> Result<f64> {
    let d = response_covs[0].dim();
    let mut total = 0.0;
    for (x, c) in design.rows().iter().zip(response_covs) {
        let a = GaussianMeasure::new(Vector::zeros(d), marginal_cov(cov, d, x)?)?;
        let b = GaussianMeasure::new(Vector::zeros(d), c.clone())?;
        total += gaussian_w2_squared(&a, &b)?;
    }
    Ok(total / design.n() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianConfig {
    /// Step size; `None` uses `0.5/η` with `η = (2/n) Σ‖xᵢ‖²`.
    pub step: Option<f64>,
    /// Maximum number of covariance steps.
    pub iterations: usize,
    /// Stop once the first-order residual falls to this value.
    pub tol: f64,
    /// Initial covariance; identity when absent.
    #[serde(default)]
    pub init_cov: Option<SpdMatrix>,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        GaussianConfig {
            step: None,
            iterations: 300,
            tol: 1e-10,
            init_cov: None,
        }
    }
}

/// Consecutive objective increases tolerated before declaring divergence.
const DIVERGENCE_PATIENCE: usize = 10;

/// Fits a Gaussian coefficient law to Gaussian responses.
///
/// The mean is the minimal-norm OLS solution for the response means; the
/// covariance follows Bures–Wasserstein gradient descent on the centered problem.
pub fn fit_gaussian(
    design: &Design,
    responses: &[GaussianMeasure],
    config: &GaussianConfig,
) -> Result<(CoeffGaussian, FitReport)> {
    let start = Instant::now();
    check_dim(design.n(), responses.len())?;
    let d = responses[0].dim();
    for r in responses {
        check_dim(d, r.dim())?;
    }
    let p = design.p();
    let dp = d * p;

    // mean: minimize Σ‖m_νᵢ − (xᵢᵀ⊗I_d) m‖², a stacked OLS with design X ⊗ I_d
    let lifted = kron(design.matrix(), &Matrix::identity(d, d));
    let stacked = Vector::from_iterator(
        d * design.n(),
        responses.iter().flat_map(|r| r.mean.iter().copied()),
    );
    let mean = pinv(&lifted)? * stacked;

    let tau = match config.step {
        Some(t) if t > 0.0 => t,
        Some(t) => return Err(Error::input(format!("step size must be positive, got {t}"))),
        None => 0.5 / design.smoothness(),
    };
    let covs: Vec<SpdMatrix> = responses.iter().map(|r| r.cov.clone()).collect();
    let mut cov = match &config.init_cov {
        Some(c) => {
            check_dim(dp, c.dim())?;
            c.clone()
        }
        None => SpdMatrix::identity(dp),
    };

    let q_mean_only = CoeffGaussian::new(d, p, mean.clone(), cov.clone())?;
    let mean_part = gaussian_objective(&q_mean_only, design, responses)?
        - centered_objective(&cov, design, &covs)?;

    let mut objective = centered_objective(&cov, design, &covs)?;
    let initial_objective = mean_part + objective;
    let mut trace = vec![TracePoint { iteration: 0, objective: initial_objective }];
    let mut residual = foc_residual_cov(&cov, design, &covs)?;
    let mut increases = 0;
    let mut regularized_steps = 0;
    let mut iterations = 0;

    while iterations < config.iterations && residual > config.tol {
        let step = bw_gradient_step(&cov, design, &covs, tau).map_err(|e| match e {
            Error::Divergence { reason, .. } => Error::Divergence { iteration: iterations, reason },
            other => other,
        })?;
        regularized_steps += usize::from(step.regularized);
        cov = step.cov;
        iterations += 1;
        let next = centered_objective(&cov, design, &covs)?;
        if !next.is_finite() {
            return Err(Error::Divergence {
                iteration: iterations,
                reason: "non-finite objective".into(),
            });
        }
        if next > objective {
            increases += 1;
            if increases >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence {
                    iteration: iterations,
                    reason: format!("objective increased {DIVERGENCE_PATIENCE} consecutive steps"),
                });
            }
        } else {
            increases = 0;
        }
        objective = next;
        trace.push(TracePoint { iteration: iterations, objective: mean_part + objective });
        residual = foc_residual_cov(&cov, design, &covs)?;
    }

    let q = CoeffGaussian::new(d, p, mean, cov)?;
    let report = FitReport {
        objective_trace: trace,
        initial_objective,
        final_objective: mean_part + objective,
        final_gradient_norm: residual,
        iterations,
        wall_time_secs: start.elapsed().as_secs_f64(),
        regularized_steps,
        config: serde_json::json!({
            "solver": "gaussian",
            "step": tau,
            "iterations": config.iterations,
            "tol": config.tol,
        }),
    };
    Ok((q, report))
}
