//! Synthetic data from the template-deformation model.
//!
//! A response at covariate `x` is the pushforward of the true marginal
//! `Q⋆_x` through a random monotone map `T = ∇φ` with `E[T(y)] = y` and
//! derivative (or Jacobian spectrum) inside a band `[alpha, beta]`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::gaussian::{marginal, CoeffGaussian};
use crate::linalg::{spd_sqrt, Matrix, SpdMatrix, Vector};
use crate::rng::{job_rng, Rng};
use crate::transport::{EmpiricalDist, GaussianMeasure};

/// Random map families together with their parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum NoiseFamily {
    /// `y + ε`, `ε ~ N(0, σ²)`.
    Additive { sigma: f64 },
    /// `(1 + η) y`, `η ~ U(−a, a)`.
    Radial { a: f64 },
    /// `a y + b` with `a ~ N(1, σ_s²)` restricted to `[1 − 3σ_s, 1 + 3σ_s]` and `b ~ N(0, σ_s²)`.
    LocationScale { sigma_s: f64 },
    /// `y + A sin(k y)`, `A ~ U(−A_max, A_max)`.
    Sinusoidal { k: f64, a_max: f64 },
    /// `y + A y exp(−y² / 2σ_b²)`, `A ~ U(−A_max, A_max)`.
    GaussianBump { a_max: f64, sigma_b: f64 },
    /// `y + A tanh(k y)`, `A ~ U(−A_max, A_max)`.
    TanhWarp { k: f64, a_max: f64 },
    #[serde(rename = "additive2d")]
    Additive2d { sigma: f64 },
    #[serde(rename = "radial2d")]
    Radial2d { a: f64 },
    /// `Rᵀ D R y` with rotation angle `θ ~ N(0, θ_sd²)` and `D = diag(s₁, s₂)`, `s_k ~ U(s_min, s_max)`.
    #[serde(rename = "rotation_scale2d")]
    RotationScale2d { theta_sd: f64, s_min: f64, s_max: f64 },
}

/// Minimum of `(1 − y²/σ²) exp(−y²/2σ²)` over `y`, attained at `y² = 3σ²`.
fn bump_profile_min() -> f64 {
    -2.0 * (-1.5f64).exp()
}

/// Half-width of the location-scale slope window, in units of `σ_s`.
const SCALE_TRUNCATION: f64 = 3.0;

impl NoiseFamily {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseFamily::Additive { .. } => "additive",
            NoiseFamily::Radial { .. } => "radial",
            NoiseFamily::LocationScale { .. } => "location_scale",
            NoiseFamily::Sinusoidal { .. } => "sinusoidal",
            NoiseFamily::GaussianBump { .. } => "gaussian_bump",
            NoiseFamily::TanhWarp { .. } => "tanh_warp",
            NoiseFamily::Additive2d { .. } => "additive2d",
            NoiseFamily::Radial2d { .. } => "radial2d",
            NoiseFamily::RotationScale2d { .. } => "rotation_scale2d",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseFamily::Additive2d { .. }
            | NoiseFamily::Radial2d { .. }
            | NoiseFamily::RotationScale2d { .. } => 2,
            _ => 1,
        }
    }

    /// Whether every realized map is affine, so Gaussian inputs stay Gaussian.
    pub fn is_affine(&self) -> bool {
        !matches!(
            self,
            NoiseFamily::Sinusoidal { .. } | NoiseFamily::GaussianBump { .. } | NoiseFamily::TanhWarp { .. }
        )
    }

    /// Tightest slope band `[lo, hi]` guaranteed for every realization.
    pub fn slope_band(&self) -> (f64, f64) {
        match *self {
            NoiseFamily::Additive { .. } | NoiseFamily::Additive2d { .. } => (1.0, 1.0),
            NoiseFamily::Radial { a } | NoiseFamily::Radial2d { a } => (1.0 - a, 1.0 + a),
            NoiseFamily::LocationScale { sigma_s } => {
                (1.0 - SCALE_TRUNCATION * sigma_s, 1.0 + SCALE_TRUNCATION * sigma_s)
            }
            NoiseFamily::Sinusoidal { k, a_max } | NoiseFamily::TanhWarp { k, a_max } => {
                (1.0 - a_max * k, 1.0 + a_max * k)
            }
            // slope is 1 + A g(y) with g ranging over [bump_profile_min(), 1]
            NoiseFamily::GaussianBump { a_max, .. } => {
                (1.0 + (a_max * bump_profile_min()).min(-a_max), 1.0 + a_max)
            }
            NoiseFamily::RotationScale2d { s_min, s_max, .. } => (s_min, s_max),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::input(format!("{}: {what}", self.name())));
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        match *self {
            NoiseFamily::Additive { sigma } | NoiseFamily::Additive2d { sigma } => {
                if !finite_nonneg(sigma) {
                    return bad("sigma must be finite and non-negative");
                }
            }
            NoiseFamily::Radial { a } | NoiseFamily::Radial2d { a } => {
                if !finite_nonneg(a) || a >= 1.0 {
                    return bad("a must lie in [0, 1)");
                }
            }
            NoiseFamily::LocationScale { sigma_s } => {
                if !finite_nonneg(sigma_s) || SCALE_TRUNCATION * sigma_s >= 1.0 {
                    return bad("sigma_s must lie in [0, 1/3)");
                }
            }
            NoiseFamily::Sinusoidal { k, a_max } | NoiseFamily::TanhWarp { k, a_max } => {
                if !finite_nonneg(k) || !finite_nonneg(a_max) || a_max * k >= 1.0 {
                    return bad("need k, a_max >= 0 and a_max * k < 1");
                }
            }
            NoiseFamily::GaussianBump { a_max, sigma_b } => {
                if !finite_nonneg(a_max) || a_max >= 1.0 || !(sigma_b > 0.0 && sigma_b.is_finite()) {
                    return bad("need a_max in [0, 1) and sigma_b > 0");
                }
            }
            NoiseFamily::RotationScale2d { theta_sd, s_min, s_max } => {
                if !finite_nonneg(theta_sd) || !(s_min > 0.0) || !(s_max >= s_min) || !s_max.is_finite() {
                    return bad("need theta_sd >= 0 and 0 < s_min <= s_max");
                }
                if (s_min + s_max - 2.0).abs() > 1e-12 {
                    // E[D] = I is what makes the map mean-preserving
                    return bad("scale range must be centred at 1");
                }
            }
        }
        Ok(())
    }
}

/// A noise family with its declared curvature band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformSpec {
    pub family: NoiseFamily,
    pub alpha: f64,
    pub beta: f64,
}

impl DeformSpec {
    /// Validates parameters and checks that every realization stays inside `[alpha, beta]`.
    pub fn new(family: NoiseFamily, alpha: f64, beta: f64) -> Result<Self> {
        family.validate()?;
        if !(alpha > 0.0 && alpha <= 1.0 && beta >= 1.0 && beta.is_finite()) {
            return Err(Error::input(format!(
                "curvature band must satisfy 0 < alpha <= 1 <= beta, got [{alpha}, {beta}]"
            )));
        }
        let (lo, hi) = family.slope_band();
        let slack = 1e-12;
        if lo < alpha - slack || hi > beta + slack {
            return Err(Error::input(format!(
                "{} parameters give slopes in [{lo}, {hi}], outside the band [{alpha}, {beta}]",
                family.name()
            )));
        }
        Ok(DeformSpec { family, alpha, beta })
    }

    /// Uses the family's own slope range as the band.
    pub fn tight(family: NoiseFamily) -> Result<Self> {
        family.validate()?;
        let (lo, hi) = family.slope_band();
        DeformSpec::new(family, lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn validate(&self) -> Result<()> {
        DeformSpec::new(self.family, self.alpha, self.beta).map(|_| ())
    }
}

/// Named presets with the published parameters and bands.
pub fn preset(name: &str) -> Result<DeformSpec> {
    use NoiseFamily::*;
    let (family, alpha, beta) = match name {
        "additive" => (Additive { sigma: 0.3 }, 1.0, 1.0),
        "radial" => (Radial { a: 0.3 }, 0.7, 1.3),
        "location_scale" => (LocationScale { sigma_s: 0.2 }, 0.4, 1.6),
        "sinusoidal" => (Sinusoidal { k: 1.2, a_max: 0.25 }, 0.7, 1.3),
        "sinusoidal_k2.5" => (Sinusoidal { k: 2.5, a_max: 0.3 }, 0.25, 1.75),
        "gaussian_bump" => (GaussianBump { a_max: 0.8, sigma_b: 1.0 }, 0.2, 1.8),
        "tanh_warp" => (TanhWarp { k: 0.8, a_max: 0.4 }, 0.68, 1.32),
        "additive2d" => (Additive2d { sigma: 0.3 }, 1.0, 1.0),
        "radial2d" => (Radial2d { a: 0.3 }, 0.7, 1.3),
        "rotation_scale2d" => (RotationScale2d { theta_sd: 0.3, s_min: 0.8, s_max: 1.2 }, 0.8, 1.2),
        other => return Err(Error::input(format!("unknown noise family '{other}'"))),
    };
    DeformSpec::new(family, alpha, beta)
}

pub const PRESETS_1D: [&str; 7] = [
    "additive",
    "radial",
    "location_scale",
    "sinusoidal",
    "sinusoidal_k2.5",
    "gaussian_bump",
    "tanh_warp",
];

/// The five univariate families used in the main comparison (the other two are illustration-only).
pub const BENCHMARK_1D: [&str; 5] = ["additive", "radial", "location_scale", "sinusoidal", "tanh_warp"];

pub const PRESETS_2D: [&str; 3] = ["additive2d", "radial2d", "rotation_scale2d"];

/// A realized deformation map.
#[derive(Debug, Clone, PartialEq)]
pub enum Deformation {
    Shift(Vector),
    Scale { dim: usize, factor: f64 },
    Affine1d { slope: f64, intercept: f64 },
    Sinusoidal { amp: f64, k: f64 },
    Bump { amp: f64, sigma_b: f64 },
    Tanh { amp: f64, k: f64 },
    Linear(Matrix),
}

impl Deformation {
    pub fn dim(&self) -> usize {
        match self {
            Deformation::Shift(v) => v.len(),
            Deformation::Scale { dim, .. } => *dim,
            Deformation::Linear(m) => m.nrows(),
            _ => 1,
        }
    }

    pub fn apply_1d(&self, y: f64) -> f64 {
        match *self {
            Deformation::Shift(ref v) => y + v[0],
            Deformation::Scale { factor, .. } => factor * y,
            Deformation::Affine1d { slope, intercept } => slope * y + intercept,
            Deformation::Sinusoidal { amp, k } => y + amp * (k * y).sin(),
            Deformation::Bump { amp, sigma_b } => {
                y + amp * y * (-y * y / (2.0 * sigma_b * sigma_b)).exp()
            }
            Deformation::Tanh { amp, k } => y + amp * (k * y).tanh(),
            Deformation::Linear(ref m) => m[(0, 0)] * y,
        }
    }

    pub fn derivative_1d(&self, y: f64) -> f64 {
        match *self {
            Deformation::Shift(_) => 1.0,
            Deformation::Scale { factor, .. } => factor,
            Deformation::Affine1d { slope, .. } => slope,
            Deformation::Sinusoidal { amp, k } => 1.0 + amp * k * (k * y).cos(),
            Deformation::Bump { amp, sigma_b } => {
                let s2 = sigma_b * sigma_b;
                1.0 + amp * (1.0 - y * y / s2) * (-y * y / (2.0 * s2)).exp()
            }
            Deformation::Tanh { amp, k } => {
                let c = (k * y).cosh();
                1.0 + amp * k / (c * c)
            }
            Deformation::Linear(ref m) => m[(0, 0)],
        }
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Deformation::Shift(v) => y.iter().zip(v.iter()).map(|(a, b)| a + b).collect(),
            Deformation::Scale { factor, .. } => y.iter().map(|a| factor * a).collect(),
            Deformation::Linear(m) => (m * Vector::from_column_slice(y)).iter().copied().collect(),
            _ => vec![self.apply_1d(y[0])],
        }
    }

    /// `(A, b)` with `T(y) = A y + b` when the map is affine.
    pub fn affine_parts(&self) -> Option<(Matrix, Vector)> {
        match self {
            Deformation::Shift(v) => Some((Matrix::identity(v.len(), v.len()), v.clone())),
            Deformation::Scale { dim, factor } => {
                Some((Matrix::identity(*dim, *dim) * *factor, Vector::zeros(*dim)))
            }
            Deformation::Affine1d { slope, intercept } => Some((
                Matrix::from_element(1, 1, *slope),
                Vector::from_element(1, *intercept),
            )),
            Deformation::Linear(m) => Some((m.clone(), Vector::zeros(m.nrows()))),
            _ => None,
        }
    }
}

fn symmetric_uniform(rng: &mut Rng, half_width: f64) -> f64 {
    half_width * (2.0 * rng.random::<f64>() - 1.0)
}

/// Draws one realization of the family's random map.
pub fn sample_deformation(spec: &DeformSpec, rng: &mut Rng) -> Deformation {
    match spec.family {
        NoiseFamily::Additive { sigma } => {
            let e: f64 = rng.sample(StandardNormal);
            Deformation::Shift(Vector::from_element(1, sigma * e))
        }
        NoiseFamily::Additive2d { sigma } => {
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            Deformation::Shift(Vector::from_vec(vec![sigma * e1, sigma * e2]))
        }
        NoiseFamily::Radial { a } => Deformation::Scale { dim: 1, factor: 1.0 + symmetric_uniform(rng, a) },
        NoiseFamily::Radial2d { a } => Deformation::Scale { dim: 2, factor: 1.0 + symmetric_uniform(rng, a) },
        NoiseFamily::LocationScale { sigma_s } => {
            let bound = SCALE_TRUNCATION * sigma_s;
            let slope = loop {
                let z: f64 = rng.sample(StandardNormal);
                if (sigma_s * z).abs() <= bound {
                    break 1.0 + sigma_s * z;
                }
            };
            let b: f64 = rng.sample(StandardNormal);
            Deformation::Affine1d { slope, intercept: sigma_s * b }
        }
        NoiseFamily::Sinusoidal { k, a_max } => Deformation::Sinusoidal { amp: symmetric_uniform(rng, a_max), k },
        NoiseFamily::GaussianBump { a_max, sigma_b } => {
            Deformation::Bump { amp: symmetric_uniform(rng, a_max), sigma_b }
        }
        NoiseFamily::TanhWarp { k, a_max } => Deformation::Tanh { amp: symmetric_uniform(rng, a_max), k },
        NoiseFamily::RotationScale2d { theta_sd, s_min, s_max } => {
            let z: f64 = rng.sample(StandardNormal);
            let theta = theta_sd * z;
            let s1 = rng.random_range(s_min..=s_max);
            let s2 = rng.random_range(s_min..=s_max);
            let (s, c) = theta.sin_cos();
            let r = Matrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let d = Matrix::from_diagonal(&Vector::from_vec(vec![s1, s2]));
            let m = r.transpose() * d * &r;
            Deformation::Linear((&m + m.transpose()) * 0.5)
        }
    }
}

/// Ground-truth coefficient law; covariates are `x = (1, t)` with `t ~ U[t_min, t_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemplateKind {
    /// `β ~ N((0, 1), I₂)`, so `Q⋆_x = N(t, 1 + t²)`.
    UnivariateQuadraticVariance,
    /// `vec(Bᵀ) ~ N((0,0,0,1), [[A, B], [Bᵀ, C]])`, so `Σ(t) = A + t(B + Bᵀ) + t²C`.
    BivariateQuadraticCov { a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, c: Vec<Vec<f64>> },
    CustomGaussian { law: CoeffGaussian },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    #[serde(flatten)]
    pub kind: TemplateKind,
    #[serde(default = "default_t_range")]
    pub t_range: (f64, f64),
}

fn default_t_range() -> (f64, f64) {
    (-2.0, 2.0)
}

impl TemplateSpec {
    pub fn univariate() -> Self {
        TemplateSpec { kind: TemplateKind::UnivariateQuadraticVariance, t_range: default_t_range() }
    }

    /// The bivariate template with `A = I`, `B = [[.5,.2],[.2,.1]]`, `C = diag(1, .3)`.
    pub fn bivariate() -> Self {
        TemplateSpec {
            kind: TemplateKind::BivariateQuadraticCov {
                a: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                b: vec![vec![0.5, 0.2], vec![0.2, 0.1]],
                c: vec![vec![1.0, 0.0], vec![0.0, 0.3]],
            },
            t_range: default_t_range(),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "univariate" | "univariate_quadratic_variance" => Ok(Self::univariate()),
            "bivariate" | "bivariate_quadratic_cov" => Ok(Self::bivariate()),
            other => Err(Error::input(format!("unknown template '{other}'"))),
        }
    }

    /// The coefficient law `Q⋆` over `vec(Bᵀ)`.
    pub fn coeff_law(&self) -> Result<CoeffGaussian> {
        match &self.kind {
            TemplateKind::UnivariateQuadraticVariance => CoeffGaussian::new(
                1,
                2,
                Vector::from_vec(vec![0.0, 1.0]),
                SpdMatrix::identity(2),
            ),
            TemplateKind::BivariateQuadraticCov { a, b, c } => {
                let a = SpdMatrix::from_rows(a)?.into_matrix();
                let b = crate::linalg::matrix_from_rows(b)?;
                let c = SpdMatrix::from_rows(c)?.into_matrix();
                if a.nrows() != 2 || b.shape() != (2, 2) || c.nrows() != 2 {
                    return Err(Error::input("bivariate template blocks must be 2x2"));
                }
                let mut full = Matrix::zeros(4, 4);
                full.view_mut((0, 0), (2, 2)).copy_from(&a);
                full.view_mut((0, 2), (2, 2)).copy_from(&b);
                full.view_mut((2, 0), (2, 2)).copy_from(&b.transpose());
                full.view_mut((2, 2), (2, 2)).copy_from(&c);
                let cov = SpdMatrix::new(full).map_err(|e| {
                    Error::input(format!("template blocks do not form a covariance: {e}"))
                })?;
                CoeffGaussian::new(2, 2, Vector::from_vec(vec![0.0, 0.0, 0.0, 1.0]), cov)
            }
            TemplateKind::CustomGaussian { law } => {
                if law.p != 2 {
                    return Err(Error::input("custom template must have p = 2 (covariates (1, t))"));
                }
                Ok(law.clone())
            }
        }
    }

    pub fn dim(&self) -> Result<usize> {
        Ok(self.coeff_law()?.d)
    }

    /// True marginal `Q⋆_x` at `x = (1, t)`; errors when it is not strictly positive definite.
    pub fn marginal(&self, t: f64) -> Result<GaussianMeasure> {
        marginal_checked(&self.coeff_law()?, t)
    }
}

fn marginal_checked(law: &CoeffGaussian, t: f64) -> Result<GaussianMeasure> {
    let g = marginal(law, &[1.0, t])?;
    let eig = g.cov.eigenvalues();
    if eig.min() <= 1e-12 * eig.max().max(1.0) {
        return Err(Error::input(format!(
            "template covariance is not positive definite at t = {t}"
        )));
    }
    Ok(g)
}

/// Responses drawn from the deformation model.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub design: Design,
    pub responses: Vec<EmpiricalDist>,
    pub truth: Vec<GaussianMeasure>,
    pub seed: u64,
    pub template: TemplateSpec,
    pub spec: DeformSpec,
}

/// Responses observed exactly (no sampling); only defined for affine families.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDataset {
    pub design: Design,
    pub responses: Vec<GaussianMeasure>,
    pub truth: Vec<GaussianMeasure>,
    pub seed: u64,
}

fn check_template_spec(template: &TemplateSpec, spec: &DeformSpec) -> Result<CoeffGaussian> {
    spec.validate()?;
    let law = template.coeff_law()?;
    if law.d != spec.dim() {
        return Err(Error::Dimension { expected: law.d, got: spec.dim() });
    }
    let (lo, hi) = template.t_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::input(format!("invalid covariate range [{lo}, {hi}]")));
    }
    Ok(law)
}

fn draw_t(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws `n` rows; row `i` uses its own stream derived from `(seed, i)`.
pub fn generate_dataset(
    template: &TemplateSpec,
    spec: &DeformSpec,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n == 0 || m == 0 {
        return Err(Error::input("need n >= 1 and m >= 1"));
    }
    let law = check_template_spec(template, spec)?;
    let d = law.d;
    let rows: Vec<(f64, EmpiricalDist, GaussianMeasure)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = job_rng(seed, i as u64);
            let t = draw_t(&mut rng, template.t_range);
            let truth = marginal_checked(&law, t)?;
            let map = sample_deformation(spec, &mut rng);
            let root = spd_sqrt(&truth.cov).into_matrix();
            let points = (0..m)
                .map(|_| {
                    let g = Vector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
                    let z = &truth.mean + &root * g;
                    map.apply(z.as_slice())
                })
                .collect();
            Ok((t, EmpiricalDist::new(d, points)?, truth))
        })
        .collect::<Result<_>>()?;
    let design = Design::new(rows.iter().map(|(t, _, _)| vec![1.0, *t]).collect())?;
    let (responses, truth) = rows.into_iter().map(|(_, r, g)| (r, g)).unzip();
    Ok(SyntheticDataset {
        design,
        responses,
        truth,
        seed,
        template: template.clone(),
        spec: *spec,
    })
}

/// Exact Gaussian responses `T_# Q⋆_{xᵢ}` for affine families.
pub fn generate_exact_dataset(
    template: &TemplateSpec,
    spec: &DeformSpec,
    n: usize,
    seed: u64,
) -> Result<ExactDataset> {
    if n == 0 {
        return Err(Error::input("need n >= 1"));
    }
    if !spec.family.is_affine() {
        return Err(Error::input(format!(
            "{} maps are not affine; exact Gaussian responses are unavailable",
            spec.family.name()
        )));
    }
    let law = check_template_spec(template, spec)?;
    let rows: Vec<(f64, GaussianMeasure, GaussianMeasure)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = job_rng(seed, i as u64);
            let t = draw_t(&mut rng, template.t_range);
            let truth = marginal_checked(&law, t)?;
            let (a, b) = sample_deformation(spec, &mut rng)
                .affine_parts()
                .expect("affine family yields affine map");
            let cov = &a * truth.cov.as_matrix() * a.transpose();
            let resp = GaussianMeasure::new(&a * &truth.mean + b, SpdMatrix::psd_projection(&cov))?;
            Ok((t, resp, truth))
        })
        .collect::<Result<_>>()?;
    let design = Design::new(rows.iter().map(|(t, _, _)| vec![1.0, *t]).collect())?;
    let (responses, truth) = rows.into_iter().map(|(_, r, g)| (r, g)).unzip();
    Ok(ExactDataset { design, responses, truth, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C2Report {
    /// Largest `‖mean of T(y) − y‖` over the grid.
    pub max_deviation: f64,
    /// Largest coordinate deviation divided by its Monte-Carlo standard error.
    pub max_z: f64,
    pub n_draws: usize,
}

/// Monte-Carlo check of the identity-mean condition `E[T(y)] = y` on grid points.
pub fn check_c2_montecarlo(
    spec: &DeformSpec,
    grid: &[Vec<f64>],
    n_draws: usize,
    seed: u64,
) -> Result<C2Report> {
    spec.validate()?;
    if n_draws < 1000 {
        return Err(Error::input("n_draws must be at least 1000"));
    }
    let d = spec.dim();
    for y in grid {
        crate::error::check_dim(d, y.len())?;
    }
    let mut rng = job_rng(seed, 0);
    // running sums of displacement T(y) − y and its square, per grid point and coordinate
    let mut sum = vec![0.0; grid.len() * d];
    let mut sum_sq = vec![0.0; grid.len() * d];
    for _ in 0..n_draws {
        let map = sample_deformation(spec, &mut rng);
        for (g, y) in grid.iter().enumerate() {
            let ty = map.apply(y);
            for k in 0..d {
                let disp = ty[k] - y[k];
                sum[g * d + k] += disp;
                sum_sq[g * d + k] += disp * disp;
            }
        }
    }
    let nd = n_draws as f64;
    let mut max_deviation = 0.0f64;
    let mut max_z = 0.0f64;
    for g in 0..grid.len() {
        let mut norm_sq = 0.0;
        for k in 0..d {
            let mean = sum[g * d + k] / nd;
            let var = ((sum_sq[g * d + k] / nd - mean * mean) * nd / (nd - 1.0)).max(0.0);
            let se = (var / nd).sqrt();
            norm_sq += mean * mean;
            let z = if se > 0.0 {
                mean.abs() / se
            } else if mean.abs() <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            max_z = max_z.max(z);
        }
        max_deviation = max_deviation.max(norm_sq.sqrt());
    }
    Ok(C2Report { max_deviation, max_z, n_draws })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C3Report {
    pub min_slope: f64,
    pub max_slope: f64,
}

const FD_STEP: f64 = 1e-5;

/// Empirical slope range over draws × grid via central differences.
/// For two-dimensional families the slopes are eigenvalues of the symmetrized Jacobian.
pub fn check_c3(spec: &DeformSpec, grid: &[Vec<f64>], n_draws: usize, seed: u64) -> Result<C3Report> {
    spec.validate()?;
    if n_draws == 0 || grid.is_empty() {
        return Err(Error::input("need at least one draw and one grid point"));
    }
    let d = spec.dim();
    for y in grid {
        crate::error::check_dim(d, y.len())?;
    }
    let mut rng = job_rng(seed, 1);
    let mut min_slope = f64::INFINITY;
    let mut max_slope = f64::NEG_INFINITY;
    for _ in 0..n_draws {
        let map = sample_deformation(spec, &mut rng);
        for y in grid {
            let mut jac = Matrix::zeros(d, d);
            for k in 0..d {
                let mut up = y.clone();
                let mut down = y.clone();
                up[k] += FD_STEP;
                down[k] -= FD_STEP;
                let (tu, td) = (map.apply(&up), map.apply(&down));
                for r in 0..d {
                    jac[(r, k)] = (tu[r] - td[r]) / (2.0 * FD_STEP);
                }
            }
            let (lo, hi) = if d == 1 {
                (jac[(0, 0)], jac[(0, 0)])
            } else {
                let sym = (&jac + jac.transpose()) * 0.5;
                let eig = nalgebra::SymmetricEigen::new(sym).eigenvalues;
                (eig.min(), eig.max())
            };
            min_slope = min_slope.min(lo);
            max_slope = max_slope.max(hi);
        }
    }
    Ok(C3Report { min_slope, max_slope })
}

/// Evenly spaced one-dimensional grid points, wrapped as length-1 vectors.
pub fn grid_1d(lo: f64, hi: f64, count: usize) -> Vec<Vec<f64>> {
    crate::transport::linspace(lo, hi, count).into_iter().map(|v| vec![v]).collect()
}

/// Tensor grid on `[lo, hi]²`.
pub fn grid_2d(lo: f64, hi: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let axis = crate::transport::linspace(lo, hi, per_axis);
    axis.iter().flat_map(|&a| axis.iter().map(move |&b| vec![a, b])).collect()
}
