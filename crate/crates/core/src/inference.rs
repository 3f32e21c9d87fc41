//! Conditional queries on a fitted coefficient cloud.
//!
//! A cloud of coefficient vectors (WLS particles, or the Fréchet coefficient
//! curve viewed as a uniform cloud over quantile levels) is filtered by
//! windows on its predictions; the retained vectors give conditional
//! trajectories, bands and exceedance probabilities.

use serde::{Deserialize, Serialize};

use crate::design::dot;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{pinv, Matrix, SpdMatrix};
use crate::particle::ParticleCloud;
use crate::transport::{EmpiricalDist, QuantileInterp};

/// `lo ≤ xᵀβ ≤ hi`; a missing bound is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub x: Vec<f64>,
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

impl Constraint {
    pub fn window(x: Vec<f64>, lo: f64, hi: f64) -> Self {
        Constraint { x, lo: Some(lo), hi: Some(hi) }
    }

    fn admits(&self, v: f64) -> bool {
        self.lo.is_none_or(|lo| v >= lo) && self.hi.is_none_or(|hi| v <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub constraints: Vec<Constraint>,
}

impl ConditionSpec {
    pub fn new(constraints: Vec<Constraint>) -> Result<Self> {
        let spec = ConditionSpec { constraints };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.constraints.is_empty() {
            return Err(Error::input("a condition needs at least one constraint"));
        }
        for c in &self.constraints {
            if let (Some(lo), Some(hi)) = (c.lo, c.hi) {
                if !(lo <= hi) {
                    return Err(Error::input(format!("window [{lo}, {hi}] is empty or not a number")));
                }
            }
            if c.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::input("constraint covariates must be finite"));
            }
        }
        Ok(())
    }
}

/// Indices of the coefficient vectors whose predictions satisfy every constraint.
/// An empty result is valid and means no vector is compatible with the condition.
pub fn select(cloud: &ParticleCloud, spec: &ConditionSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    for c in &spec.constraints {
        check_dim(cloud.p(), c.x.len())?;
    }
    Ok((0..cloud.len())
        .filter(|&j| {
            let b = cloud.particle(j);
            spec.constraints.iter().all(|c| c.admits(dot(&c.x, b)))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub coverage: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub x: Vec<f64>,
    pub mean: f64,
    pub intervals: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalBands {
    pub retained: usize,
    /// `None` when no vector was retained.
    pub bands: Option<Vec<BandPoint>>,
}

fn retained_predictions(cloud: &ParticleCloud, indices: &[usize], x: &[f64]) -> Result<Vec<f64>> {
    check_dim(cloud.p(), x.len())?;
    indices
        .iter()
        .map(|&j| {
            if j >= cloud.len() {
                Err(Error::input(format!("index {j} out of range for {} vectors", cloud.len())))
            } else {
                Ok(dot(x, cloud.particle(j)))
            }
        })
        .collect()
}

/// Midpoint-rank percentile of a sample.
fn percentile(sorted: &EmpiricalDist, u: f64) -> f64 {
    sorted.quantile(u, QuantileInterp::Linear)
}

/// Mean and central intervals of `xᵀβ_j` over the retained vectors, for each grid point.
pub fn conditional_band(
    cloud: &ParticleCloud,
    indices: &[usize],
    x_grid: &[Vec<f64>],
    coverages: &[f64],
) -> Result<ConditionalBands> {
    if coverages.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
        return Err(Error::input("coverages must lie in (0, 1)"));
    }
    if indices.is_empty() {
        return Ok(ConditionalBands { retained: 0, bands: None });
    }
    let bands = x_grid
        .iter()
        .map(|x| {
            let values = retained_predictions(cloud, indices, x)?;
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let dist = EmpiricalDist::univariate(values)?;
            let intervals = coverages
                .iter()
                .map(|&c| {
                    let tail = (1.0 - c) / 2.0;
                    Interval { coverage: c, lo: percentile(&dist, tail), hi: percentile(&dist, 1.0 - tail) }
                })
                .collect();
            Ok(BandPoint { x: x.clone(), mean, intervals })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionalBands { retained: indices.len(), bands: Some(bands) })
}

/// Share of retained vectors with `xᵀβ_j ≥ threshold`.
pub fn exceedance_prob(cloud: &ParticleCloud, indices: &[usize], x: &[f64], threshold: f64) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Undefined(
            "exceedance probability of an empty conditional set (no vector satisfies the condition)".into(),
        ));
    }
    let values = retained_predictions(cloud, indices, x)?;
    Ok(values.iter().filter(|&&v| v >= threshold).count() as f64 / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
    /// `P(β_k > 0)` per coordinate.
    pub p_positive: Vec<f64>,
    /// Sample covariance with divisor `M − 1`.
    pub cov: Vec<Vec<f64>>,
    /// Pearson correlations; `None` where a coordinate has zero variance.
    pub corr: Vec<Vec<Option<f64>>>,
    pub zero_variance: Vec<bool>,
}

pub fn coeff_summary(cloud: &ParticleCloud) -> Result<CoeffSummary> {
    let m = cloud.len();
    let p = cloud.p();
    let rows = cloud.to_rows();
    let x = Matrix::from_fn(m, p, |j, k| rows[j][k]);
    let mean: Vec<f64> = (0..p).map(|k| x.column(k).mean()).collect();
    let centered = Matrix::from_fn(m, p, |j, k| x[(j, k)] - mean[k]);
    let cov = centered.transpose() * &centered / (m as f64 - 1.0);
    let sd: Vec<f64> = (0..p).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
    let scale: f64 = mean.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let zero_variance: Vec<bool> = sd.iter().map(|&s| s <= 1e-12 * scale).collect();
    let corr = (0..p)
        .map(|a| {
            (0..p)
                .map(|b| {
                    if zero_variance[a] || zero_variance[b] {
                        None
                    } else {
                        Some((cov[(a, b)] / (sd[a] * sd[b])).clamp(-1.0, 1.0))
                    }
                })
                .collect()
        })
        .collect();
    let mut q025 = Vec::with_capacity(p);
    let mut q975 = Vec::with_capacity(p);
    let mut p_positive = Vec::with_capacity(p);
    for k in 0..p {
        let col: Vec<f64> = x.column(k).iter().copied().collect();
        p_positive.push(col.iter().filter(|&&v| v > 0.0).count() as f64 / m as f64);
        let dist = EmpiricalDist::univariate(col)?;
        q025.push(percentile(&dist, 0.025));
        q975.push(percentile(&dist, 0.975));
    }
    Ok(CoeffSummary {
        mean,
        sd,
        q025,
        q975,
        p_positive,
        cov: crate::linalg::matrix_to_rows(&cov),
        corr,
        zero_variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchurComplement {
    pub cov: SpdMatrix,
    /// True when the conditioning block was singular and its pseudo-inverse was used.
    pub regularized: bool,
}

/// Relative eigenvalue floor below which the conditioning block counts as singular.
const SCHUR_FLOOR: f64 = 1e-10;

/// `Σ₂₂ − Σ₂₁ Σ₁₁⁻¹ Σ₁₂`, the covariance of the remaining coordinates given those in `given`.
pub fn conditional_variance_schur(cov: &SpdMatrix, given: &[usize]) -> Result<SchurComplement> {
    let d = cov.dim();
    if given.is_empty() || given.iter().any(|&g| g >= d) {
        return Err(Error::input("conditioning indices must be non-empty and in range"));
    }
    let mut g = given.to_vec();
    g.sort_unstable();
    g.dedup();
    let rest: Vec<usize> = (0..d).filter(|k| !g.contains(k)).collect();
    if rest.is_empty() {
        return Err(Error::input("nothing left to condition"));
    }
    let s = cov.as_matrix();
    let s11 = s.select_rows(&g).select_columns(&g);
    let s12 = s.select_rows(&g).select_columns(&rest);
    let s22 = s.select_rows(&rest).select_columns(&rest);
    let eig = SpdMatrix::from_psd_unchecked(s11.clone()).eigenvalues();
    let scale = cov.trace().max(f64::MIN_POSITIVE) / d as f64;
    let regularized = eig.min() <= SCHUR_FLOOR * scale;
    let inv = if regularized {
        pinv(&s11)?
    } else {
        s11.clone().try_inverse().ok_or_else(|| Error::input("conditioning block is singular"))?
    };
    let out = s22 - s12.transpose() * inv * s12;
    Ok(SchurComplement { cov: SpdMatrix::psd_projection(&out), regularized })
}
