//! Closed-form optimal transport: quantile-function OT on the line and
//! Bures–Wasserstein geometry for Gaussian measures.

mod gaussian;
mod one_d;

pub use gaussian::{
    barycenter_residual, gaussian_barycenter_fixedpoint, gaussian_transport_coeff, gaussian_w2_squared, TransportCoeff,
};
pub use one_d::{
    barycenter_1d, barycenter_empirical, brenier_1d, w2_squared_1d, w2_squared_sorted,
    MonotoneMap,
};

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Matrix, SpdMatrix, Vector};

/// Number of levels in the default comparison grid.
pub const DEFAULT_GRID_LEVELS: usize = 500;
pub const DEFAULT_GRID_LO: f64 = 0.001;
pub const DEFAULT_GRID_HI: f64 = 0.999;

/// A uniform empirical measure on ℝᵈ with atoms sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDist {
    dim: usize,
    /// Row-major `len × dim` atom coordinates.
    atoms: Vec<f64>,
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

impl EmpiricalDist {
    pub fn new(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("empirical measure dimension must be positive"));
        }
        if points.is_empty() {
            return Err(Error::input("empirical measure needs at least one atom"));
        }
        for p in &points {
            check_dim(dim, p.len())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::input("empirical measure has non-finite atoms"));
            }
        }
        let mut points = points;
        points.sort_by(|a, b| lex_cmp(a, b));
        Ok(EmpiricalDist {
            dim,
            atoms: points.into_iter().flatten().collect(),
        })
    }

    pub fn univariate(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("empirical measure needs at least one atom"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("empirical measure has non-finite atoms"));
        }
        values.sort_by(f64::total_cmp);
        Ok(EmpiricalDist { dim: 1, atoms: values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Sorted atoms of a univariate measure.
    pub fn values(&self) -> &[f64] {
        debug_assert_eq!(self.dim, 1);
        &self.atoms
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.atoms[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.atoms.chunks_exact(self.dim)
    }

    pub fn to_points(&self) -> Vec<Vec<f64>> {
        self.points().map(<[f64]>::to_vec).collect()
    }

    pub fn mean(&self) -> Vector {
        let mut m = Vector::zeros(self.dim);
        for p in self.points() {
            for (acc, v) in m.iter_mut().zip(p) {
                *acc += v;
            }
        }
        m / self.len() as f64
    }

    /// Sample covariance with the unbiased `1/(m-1)` normalization (zero for a single atom).
    pub fn covariance(&self) -> SpdMatrix {
        let m = self.len();
        let mean = self.mean();
        let mut c = Matrix::zeros(self.dim, self.dim);
        for p in self.points() {
            let d = Vector::from_column_slice(p) - &mean;
            c += &d * d.transpose();
        }
        if m > 1 {
            c /= (m - 1) as f64;
        }
        SpdMatrix::psd_projection(&c)
    }

    /// Moment-matched Gaussian (sample mean, sample covariance).
    pub fn to_gaussian(&self) -> GaussianMeasure {
        GaussianMeasure {
            mean: self.mean(),
            cov: self.covariance(),
        }
    }

    /// Quantile function of a univariate measure under the given interpolation.
    pub fn quantile(&self, u: f64, interp: QuantileInterp) -> f64 {
        let v = self.values();
        let m = v.len();
        match interp {
            QuantileInterp::Step => {
                let k = (u * m as f64).ceil() as isize;
                v[(k.clamp(1, m as isize) - 1) as usize]
            }
            QuantileInterp::Linear => {
                // atom k sits at level (k + 0.5) / m
                let pos = u * m as f64 - 0.5;
                if pos <= 0.0 {
                    v[0]
                } else if pos >= (m - 1) as f64 {
                    v[m - 1]
                } else {
                    let lo = pos.floor() as usize;
                    let frac = pos - lo as f64;
                    v[lo] + frac * (v[lo + 1] - v[lo])
                }
            }
        }
    }
}

/// How the quantile function of an empirical measure is read between atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileInterp {
    /// Atoms placed at midpoint levels `(k - 0.5)/m`, linear in between, constant beyond.
    #[default]
    Linear,
    /// The exact (left-continuous) empirical quantile function.
    Step,
}

/// A quantile function tabulated on strictly increasing levels in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct QuantileGrid {
    levels: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawGrid {
    levels: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawGrid> for QuantileGrid {
    type Error = Error;
    fn try_from(raw: RawGrid) -> Result<Self> {
        QuantileGrid::new(raw.levels, raw.values)
    }
}

/// `count` evenly spaced points on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

pub fn default_levels() -> Vec<f64> {
    linspace(DEFAULT_GRID_LO, DEFAULT_GRID_HI, DEFAULT_GRID_LEVELS)
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::input("quantile grid needs at least one level"));
        }
        check_dim(levels.len(), values.len())?;
        if levels.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::input("quantile levels must lie in (0, 1)"));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("quantile levels must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("quantile values must be finite"));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::input("quantile values must be non-decreasing"));
        }
        Ok(QuantileGrid { levels, values })
    }

    pub fn from_fn(levels: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = levels.iter().map(|&u| f(u)).collect();
        QuantileGrid::new(levels, values)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Linear interpolation in the level, constant beyond the outermost levels.
    pub fn eval(&self, u: f64) -> f64 {
        let l = &self.levels;
        let v = &self.values;
        if u <= l[0] {
            return v[0];
        }
        if u >= l[l.len() - 1] {
            return v[v.len() - 1];
        }
        let hi = l.partition_point(|&p| p < u);
        if l[hi] == u {
            return v[hi];
        }
        let lo = hi - 1;
        let frac = (u - l[lo]) / (l[hi] - l[lo]);
        v[lo] + frac * (v[hi] - v[lo])
    }

    pub fn resample(&self, levels: &[f64]) -> Result<QuantileGrid> {
        QuantileGrid::from_fn(levels.to_vec(), |u| self.eval(u))
    }
}

/// A Gaussian measure N(mean, cov).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGaussian", into = "RawGaussian")]
pub struct GaussianMeasure {
    pub mean: Vector,
    pub cov: SpdMatrix,
}

#[derive(Serialize, Deserialize)]
struct RawGaussian {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<RawGaussian> for GaussianMeasure {
    type Error = Error;
    fn try_from(raw: RawGaussian) -> Result<Self> {
        GaussianMeasure::new(Vector::from_vec(raw.mean), SpdMatrix::from_rows(&raw.cov)?)
    }
}

impl From<GaussianMeasure> for RawGaussian {
    fn from(g: GaussianMeasure) -> Self {
        RawGaussian {
            mean: g.mean.iter().copied().collect(),
            cov: g.cov.to_rows(),
        }
    }
}

impl GaussianMeasure {
    pub fn new(mean: Vector, cov: SpdMatrix) -> Result<Self> {
        check_dim(mean.len(), cov.dim())?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("Gaussian mean has non-finite entries"));
        }
        Ok(GaussianMeasure { mean, cov })
    }

    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) {
            return Err(Error::input(format!("variance must be non-negative, got {variance}")));
        }
        GaussianMeasure::new(Vector::from_element(1, mean), SpdMatrix::from_diagonal(&[variance])?)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standard deviation of a univariate Gaussian.
    pub fn sd(&self) -> f64 {
        self.cov.as_matrix()[(0, 0)].max(0.0).sqrt()
    }

    pub fn quantile_1d(&self, u: f64) -> f64 {
        self.mean[0] + self.sd() * std_normal_quantile(u)
    }
}

pub(crate) fn std_normal_quantile(u: f64) -> f64 {
    use statrs::function::erf::erfc_inv;
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

#[cfg(test)]
pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    use statrs::function::erf::erfc;
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub(crate) fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// A univariate probability measure in one of the supported representations.
#[derive(Debug, Clone, PartialEq)]
pub enum Univariate {
    Empirical(EmpiricalDist),
    Quantiles(QuantileGrid),
    Gaussian(GaussianMeasure),
}

impl Univariate {
    pub fn empirical(values: Vec<f64>) -> Result<Self> {
        Ok(Univariate::Empirical(EmpiricalDist::univariate(values)?))
    }

    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        Ok(Univariate::Gaussian(GaussianMeasure::univariate(mean, variance)?))
    }

    /// Wraps a measure, checking that it is one-dimensional.
    pub fn from_empirical(e: EmpiricalDist) -> Result<Self> {
        check_dim(1, e.dim())?;
        Ok(Univariate::Empirical(e))
    }

    pub fn from_gaussian(g: GaussianMeasure) -> Result<Self> {
        check_dim(1, g.dim())?;
        Ok(Univariate::Gaussian(g))
    }

    pub fn quantile(&self, u: f64, interp: QuantileInterp) -> f64 {
        match self {
            Univariate::Empirical(e) => e.quantile(u, interp),
            Univariate::Quantiles(q) => q.eval(u),
            Univariate::Gaussian(g) => g.quantile_1d(u),
        }
    }

    pub fn to_grid(&self, levels: &[f64]) -> Result<QuantileGrid> {
        match self {
            Univariate::Quantiles(q) if q.levels() == levels => Ok(q.clone()),
            _ => QuantileGrid::from_fn(levels.to_vec(), |u| self.quantile(u, QuantileInterp::Linear)),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Univariate::Empirical(e) => e.mean()[0],
            Univariate::Quantiles(q) => q.values().iter().sum::<f64>() / q.len() as f64,
            Univariate::Gaussian(g) => g.mean[0],
        }
    }

    /// Pushforward under `y ↦ a·y + b` with `a ≥ 0`.
    pub fn affine_pushforward(&self, a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0) {
            return Err(Error::input("affine pushforward needs a non-negative slope"));
        }
        Ok(match self {
            Univariate::Empirical(e) => {
                Univariate::empirical(e.values().iter().map(|y| a * y + b).collect())?
            }
            Univariate::Quantiles(q) => Univariate::Quantiles(QuantileGrid::new(
                q.levels().to_vec(),
                q.values().iter().map(|y| a * y + b).collect(),
            )?),
            Univariate::Gaussian(g) => {
                Univariate::gaussian(a * g.mean[0] + b, a * a * g.cov.as_matrix()[(0, 0)])?
            }
        })
    }
}
