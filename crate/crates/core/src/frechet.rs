//! Global Fréchet regression baseline.
//!
//! For univariate responses each quantile level gets its own OLS fit
//! `β(u) = X⁺ S(u)`; predictions are projected back onto non-decreasing
//! sequences with the pool-adjacent-violators algorithm. For Gaussian
//! responses the means and upper-triangle covariance entries are regressed
//! linearly on `x`.

use serde::{Deserialize, Serialize};

use crate::design::{dot, Design};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{matrix_from_rows, matrix_to_rows, pinv, Matrix, SpdMatrix, Vector};
use crate::particle::ParticleCloud;
use crate::transport::{
    linspace, EmpiricalDist, GaussianMeasure, QuantileGrid, QuantileInterp, Univariate, DEFAULT_GRID_HI,
    DEFAULT_GRID_LEVELS, DEFAULT_GRID_LO,
};

/// Euclidean projection of `y` onto non-decreasing sequences (uniform weights).
pub fn pava(y: &[f64]) -> Vec<f64> {
    // blocks of (sum, count), merged while the block means decrease
    let mut sums: Vec<f64> = Vec::with_capacity(y.len());
    let mut counts: Vec<usize> = Vec::with_capacity(y.len());
    for &v in y {
        sums.push(v);
        counts.push(1);
        while sums.len() > 1 {
            let k = sums.len() - 1;
            if sums[k - 1] / counts[k - 1] as f64 > sums[k] / counts[k] as f64 {
                let (s, c) = (sums.pop().unwrap(), counts.pop().unwrap());
                sums[k - 1] += s;
                counts[k - 1] += c;
            } else {
                break;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .flat_map(|(s, &c)| std::iter::repeat_n(s / c as f64, c))
        .collect()
}

/// Per-level coefficient rows `β(u_ℓ)` of the quantile regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel1D", into = "RawModel1D")]
pub struct FrechetModel1D {
    levels: Vec<f64>,
    /// `K × p`, row `ℓ` is `β(u_ℓ)ᵀ`.
    beta: Matrix,
}

#[derive(Serialize, Deserialize)]
struct RawModel1D {
    levels: Vec<f64>,
    beta: Vec<Vec<f64>>,
}

impl TryFrom<RawModel1D> for FrechetModel1D {
    type Error = Error;
    fn try_from(raw: RawModel1D) -> Result<Self> {
        FrechetModel1D::new(raw.levels, matrix_from_rows(&raw.beta)?)
    }
}

impl From<FrechetModel1D> for RawModel1D {
    fn from(m: FrechetModel1D) -> Self {
        RawModel1D { beta: matrix_to_rows(&m.beta), levels: m.levels }
    }
}

impl FrechetModel1D {
    pub fn new(levels: Vec<f64>, beta: Matrix) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::input("need at least two levels"));
        }
        if levels.iter().any(|&u| !(u > 0.0 && u < 1.0)) || levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("levels must be strictly increasing inside (0, 1)"));
        }
        check_dim(levels.len(), beta.nrows())?;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("coefficients must be finite"));
        }
        Ok(FrechetModel1D { levels, beta })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn beta(&self) -> &Matrix {
        &self.beta
    }

    pub fn p(&self) -> usize {
        self.beta.ncols()
    }

    /// Coefficient rows in level order.
    pub fn coeff_rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.beta)
    }

    /// Raw (possibly non-monotone) predicted quantiles `xᵀβ(u_ℓ)`.
    pub fn raw_prediction(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.p(), x.len())?;
        Ok(self.coeff_rows().iter().map(|b| dot(b, x)).collect())
    }
}

/// Fits one OLS per quantile level; `k` levels spread uniformly over `[0.001, 0.999]`.
pub fn frechet_fit_1d(design: &Design, responses: &[Univariate], k: usize) -> Result<FrechetModel1D> {
    check_dim(design.n(), responses.len())?;
    if k < 2 {
        return Err(Error::input("need at least two quantile levels"));
    }
    let levels = linspace(DEFAULT_GRID_LO, DEFAULT_GRID_HI, k);
    let s = Matrix::from_fn(design.n(), k, |i, l| responses[i].quantile(levels[l], QuantileInterp::Linear));
    let beta = pinv(design.matrix())? * s;
    FrechetModel1D::new(levels, beta.transpose())
}

pub fn frechet_fit_1d_default(design: &Design, responses: &[Univariate]) -> Result<FrechetModel1D> {
    frechet_fit_1d(design, responses, DEFAULT_GRID_LEVELS)
}

/// Predicted quantile function at `x`, projected to be non-decreasing.
pub fn frechet_predict_1d(model: &FrechetModel1D, x: &[f64]) -> Result<QuantileGrid> {
    QuantileGrid::new(model.levels.clone(), pava(&model.raw_prediction(x)?))
}

/// The coefficient rows as a uniform measure over `ℝᵖ`.
pub fn frechet_coeff_law(model: &FrechetModel1D) -> Result<EmpiricalDist> {
    EmpiricalDist::new(model.p(), model.coeff_rows())
}

/// The coefficient rows in level order, as a cloud usable by the conditioning queries.
pub fn frechet_coeff_cloud(model: &FrechetModel1D) -> Result<ParticleCloud> {
    ParticleCloud::new(model.coeff_rows())
}

/// Linear model for Gaussian responses: mean and upper-triangle covariance entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrechetModelGauss {
    pub d: usize,
    /// `p × d`: column `k` maps `x` to the k-th mean coordinate.
    #[serde(with = "rows_serde")]
    pub mean_coeffs: Matrix,
    /// `p × d(d+1)/2`: columns follow the upper triangle in row-major order.
    #[serde(with = "rows_serde")]
    pub cov_coeffs: Matrix,
}

mod rows_serde {
    use crate::linalg::{matrix_from_rows, matrix_to_rows, Matrix};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        matrix_from_rows(&Vec::<Vec<f64>>::deserialize(d)?).map_err(D::Error::custom)
    }
}

fn upper_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|r| (r..d).map(move |c| (r, c))).collect()
}

pub fn frechet_fit_gauss(design: &Design, responses: &[GaussianMeasure]) -> Result<FrechetModelGauss> {
    check_dim(design.n(), responses.len())?;
    let d = responses[0].dim();
    for r in responses {
        check_dim(d, r.dim())?;
    }
    let pairs = upper_pairs(d);
    let means = Matrix::from_fn(design.n(), d, |i, k| responses[i].mean[k]);
    let covs = Matrix::from_fn(design.n(), pairs.len(), |i, e| {
        let (r, c) = pairs[e];
        responses[i].cov.as_matrix()[(r, c)]
    });
    let xp = pinv(design.matrix())?;
    Ok(FrechetModelGauss { d, mean_coeffs: &xp * means, cov_coeffs: xp * covs })
}

/// Prediction at `x`; the covariance is clipped to the PSD cone.
pub fn frechet_predict_gauss(model: &FrechetModelGauss, x: &[f64]) -> Result<GaussianMeasure> {
    check_dim(model.mean_coeffs.nrows(), x.len())?;
    let xv = Vector::from_column_slice(x);
    let mean = model.mean_coeffs.transpose() * &xv;
    let entries = model.cov_coeffs.transpose() * xv;
    let d = model.d;
    let mut cov = Matrix::zeros(d, d);
    for (e, (r, c)) in upper_pairs(d).into_iter().enumerate() {
        cov[(r, c)] = entries[e];
        cov[(c, r)] = entries[e];
    }
    GaussianMeasure::new(mean, SpdMatrix::psd_projection(&cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Exhaustive projection onto the monotone cone: every partition of the
    /// sequence into consecutive blocks, block means, keep monotone candidates.
    fn brute_projection(y: &[f64]) -> Vec<f64> {
        let n = y.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0..(1u32 << (n - 1)) {
            let mut out = Vec::with_capacity(n);
            let mut start = 0;
            for i in 0..n {
                if i == n - 1 || mask & (1 << i) != 0 {
                    let mean = y[start..=i].iter().sum::<f64>() / (i + 1 - start) as f64;
                    out.extend(std::iter::repeat_n(mean, i + 1 - start));
                    start = i + 1;
                }
            }
            if out.windows(2).all(|w| w[0] <= w[1] + 1e-15) {
                let cost: f64 = out.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                    best = Some((cost, out));
                }
            }
        }
        best.unwrap().1
    }

    #[test]
    fn pava_examples() {
        assert_eq!(pava(&[3.0, 1.0, 2.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(pava(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(brute_projection(&[3.0, 1.0, 2.0]), vec![2.0, 2.0, 2.0]);
        assert!(pava(&[]).is_empty());
    }

    #[test]
    fn pava_matches_enumeration() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(5);
        for _ in 0..300 {
            let n = rng.random_range(1..=8);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = pava(&y);
            let b = brute_projection(&y);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-8, "{y:?}");
            }
        }
    }

    #[test]
    fn constant_design_gives_quantile_average() {
        let design = Design::constant(2, 1.0).unwrap();
        let r = [Univariate::gaussian(0.0, 1.0).unwrap(), Univariate::gaussian(2.0, 9.0).unwrap()];
        let model = frechet_fit_1d(&design, &r, 50).unwrap();
        let pred = frechet_predict_1d(&model, &[1.0]).unwrap();
        for (u, q) in pred.levels().iter().zip(pred.values()) {
            let expected = 1.0 + 2.0 * crate::transport::std_normal_quantile(*u);
            assert_relative_eq!(*q, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn interpolates_when_square() {
        let design = Design::new(vec![vec![1.0, -1.0], vec![1.0, 1.0]]).unwrap();
        let r = [
            Univariate::empirical(vec![0.0, 1.0, 5.0]).unwrap(),
            Univariate::empirical(vec![2.0, 2.5, 3.0]).unwrap(),
        ];
        let model = frechet_fit_1d(&design, &r, 20).unwrap();
        for (x, nu) in design.rows().iter().zip(&r) {
            let pred = frechet_predict_1d(&model, x).unwrap();
            for (u, q) in pred.levels().iter().zip(pred.values()) {
                assert_relative_eq!(*q, nu.quantile(*u, QuantileInterp::Linear), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn coeff_law_of_constant_curve() {
        let model = FrechetModel1D::new(vec![0.25, 0.75], Matrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0])).unwrap();
        let law = frechet_coeff_law(&model).unwrap();
        assert_eq!(law.to_points(), vec![vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert!(FrechetModel1D::new(vec![0.5, 0.5], Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn gauss_linear_covariance_recovered() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let dm = Matrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.2]);
        let ts = [-1.0, 0.0, 0.5, 1.0];
        let design = Design::new(ts.iter().map(|t| vec![1.0, *t]).collect()).unwrap();
        let resp: Vec<GaussianMeasure> = ts
            .iter()
            .map(|t| {
                GaussianMeasure::new(Vector::from_vec(vec![*t, 1.0]), SpdMatrix::new(&a + &dm * *t).unwrap()).unwrap()
            })
            .collect();
        let model = frechet_fit_gauss(&design, &resp).unwrap();
        for (x, r) in design.rows().iter().zip(&resp) {
            let g = frechet_predict_gauss(&model, x).unwrap();
            assert_relative_eq!(g.cov.as_matrix(), r.cov.as_matrix(), epsilon = 1e-10);
            assert_relative_eq!(g.mean, r.mean, epsilon = 1e-10);
        }
        let s = serde_json::to_string(&model).unwrap();
        assert_eq!(serde_json::from_str::<FrechetModelGauss>(&s).unwrap(), model);
    }
}
