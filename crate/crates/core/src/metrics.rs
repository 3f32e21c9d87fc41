//! Goodness-of-fit measures, cross-validation, design diagnostics and the
//! convergence-rate experiment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deform::{generate_exact_dataset, DeformSpec, TemplateSpec};
use crate::design::Design;
use crate::error::{check_dim, Error, Result};
use crate::gaussian::{fit_gaussian, marginal, GaussianConfig};
use crate::linalg::{pinv, Vector};
use crate::rng::derive_seed;
use crate::transport::{
    barycenter_1d, default_levels, gaussian_barycenter_fixedpoint, gaussian_w2_squared, w2_squared_1d,
    GaussianMeasure, Univariate,
};

/// A fitted or observed measure in one of the two comparable representations.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    OneD(Univariate),
    Gaussian(GaussianMeasure),
}

impl From<Univariate> for Measure {
    fn from(u: Univariate) -> Self {
        Measure::OneD(u)
    }
}

impl From<GaussianMeasure> for Measure {
    fn from(g: GaussianMeasure) -> Self {
        Measure::Gaussian(g)
    }
}

/// Squared W₂ between two measures of the same representation.
pub fn w2_squared(a: &Measure, b: &Measure) -> Result<f64> {
    match (a, b) {
        (Measure::OneD(u), Measure::OneD(v)) => w2_squared_1d(u, v),
        (Measure::Gaussian(g), Measure::Gaussian(h)) => gaussian_w2_squared(g, h),
        _ => Err(Error::input(
            "cannot compare a one-dimensional measure with a Gaussian measure; convert one side first",
        )),
    }
}

fn pairwise_sq(a: &[Measure], b: &[Measure]) -> Result<Vec<f64>> {
    check_dim(a.len(), b.len())?;
    a.par_iter().zip(b).map(|(u, v)| w2_squared(u, v)).collect()
}

/// `(1/n) Σ W₂²(Q̂_{xᵢ}, Q⋆_{xᵢ})`.
pub fn in_sample_error(model: &[Measure], truth: &[Measure]) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::input("no marginals to compare"));
    }
    Ok(pairwise_sq(model, truth)?.iter().sum::<f64>() / model.len() as f64)
}

/// Equal-weight barycenter: quantile average for one-dimensional responses,
/// fixed-point iteration for Gaussian ones.
pub fn barycenter(responses: &[Measure]) -> Result<Measure> {
    if responses.is_empty() {
        return Err(Error::input("no responses"));
    }
    let w = vec![1.0 / responses.len() as f64; responses.len()];
    match &responses[0] {
        Measure::OneD(_) => {
            let levels = default_levels();
            let grids = responses
                .iter()
                .map(|r| match r {
                    Measure::OneD(u) => u.to_grid(&levels),
                    Measure::Gaussian(_) => Err(Error::input("mixed response representations")),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Measure::OneD(Univariate::Quantiles(barycenter_1d(&grids, &w)?)))
        }
        Measure::Gaussian(first) => {
            let d = first.dim();
            let mut mean = Vector::zeros(d);
            let mut covs = Vec::with_capacity(responses.len());
            for r in responses {
                match r {
                    Measure::Gaussian(g) => {
                        check_dim(d, g.dim())?;
                        mean += &g.mean * w[0];
                        covs.push(g.cov.clone());
                    }
                    Measure::OneD(_) => return Err(Error::input("mixed response representations")),
                }
            }
            let cov = gaussian_barycenter_fixedpoint(&covs, &w, 1e-12, 10_000)?;
            Ok(Measure::Gaussian(GaussianMeasure::new(mean, cov)?))
        }
    }
}

/// `1 − Σ W₂²(νᵢ, Q̂_{xᵢ}) / Σ W₂²(νᵢ, ν̄)` with `ν̄` the barycenter of the responses.
pub fn wasserstein_r2(fitted: &[Measure], responses: &[Measure]) -> Result<f64> {
    if responses.len() < 2 {
        return Err(Error::input("R² needs at least two responses"));
    }
    let bar = barycenter(responses)?;
    wasserstein_r2_with(fitted, responses, &bar)
}

/// R² against a given reference measure.
pub fn wasserstein_r2_with(fitted: &[Measure], responses: &[Measure], reference: &Measure) -> Result<f64> {
    let num: f64 = pairwise_sq(responses, fitted)?.iter().sum();
    let den: f64 = responses
        .par_iter()
        .map(|r| w2_squared(r, reference))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum();
    if !(den > 1e-14 * (1.0 + num)) {
        return Err(Error::Undefined(
            "all responses coincide with their barycenter, so R² is undefined".into(),
        ));
    }
    Ok(1.0 - num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    /// W₂ (not squared) per fold; `None` for folds whose fit failed.
    pub per_fold: Vec<Option<f64>>,
    pub mean: f64,
    pub std: f64,
    pub failed: usize,
}

/// Leave-one-out: fit on all rows but `i`, predict at `xᵢ`, compare with `νᵢ`.
pub fn loo_cv<F>(design: &Design, responses: &[Measure], fit_predict: F) -> Result<LooReport>
where
    F: Fn(&Design, &[Measure], &[f64]) -> Result<Measure> + Sync,
{
    let n = design.n();
    check_dim(n, responses.len())?;
    if n < 3 {
        return Err(Error::input("leave-one-out needs at least three rows"));
    }
    let per_fold: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let train = design.without_row(i).ok()?;
            let rest: Vec<Measure> = responses
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, r)| r.clone())
                .collect();
            let pred = fit_predict(&train, &rest, design.row(i)).ok()?;
            w2_squared(&pred, &responses[i]).ok().map(f64::sqrt)
        })
        .collect();
    let ok: Vec<f64> = per_fold.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(Error::Convergence { iterations: 0, residual: f64::NAN });
    }
    let (mean, std) = mean_std(&ok);
    Ok(LooReport { failed: n - ok.len(), per_fold, mean, std })
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incoherence {
    /// `μ = (n/p) max hᵢᵢ`.
    pub mu: f64,
    pub leverages: Vec<f64>,
}

/// Leverages `hᵢᵢ = xᵢᵀ(XᵀX)⁺xᵢ` and the incoherence constant.
pub fn incoherence(design: &Design) -> Result<Incoherence> {
    let x = design.matrix();
    let hat = x * pinv(x)?;
    let leverages: Vec<f64> = (0..design.n()).map(|i| hat[(i, i)]).collect();
    let max = leverages.iter().copied().fold(0.0, f64::max);
    Ok(Incoherence { mu: design.n() as f64 / design.p() as f64 * max, leverages })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub n: usize,
    pub seed: u64,
    /// In-sample `W₂²` error against the truth, `None` if the fit failed.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub cells: Vec<RateCell>,
    /// `(n, median error)` per sample size.
    pub medians: Vec<(usize, f64)>,
    /// Least-squares slope of log median error against log n; `None` when the
    /// errors are all at solver precision.
    pub slope: Option<f64>,
}

/// Median error floor under which the slope is not reported.
const RATE_FLOOR: f64 = 1e-14;

/// Fits exact Gaussian responses for each `(n, seed)` cell and regresses log error on log n.
pub fn rate_study(
    template: &TemplateSpec,
    spec: &DeformSpec,
    n_list: &[usize],
    seeds: &[u64],
    config: &GaussianConfig,
) -> Result<RateStudy> {
    if n_list.len() < 2 || seeds.is_empty() {
        return Err(Error::input("need at least two sample sizes and one seed"));
    }
    let jobs: Vec<(usize, u64)> = n_list.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let cells: Vec<RateCell> = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let error = rate_cell(template, spec, n, derive_seed(seed, n as u64), config).ok();
            RateCell { n, seed, error }
        })
        .collect();
    let mut medians = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut errs: Vec<f64> = cells.iter().filter(|c| c.n == n).filter_map(|c| c.error).collect();
        if errs.is_empty() {
            return Err(Error::Convergence { iterations: config.iterations, residual: f64::NAN });
        }
        errs.sort_by(f64::total_cmp);
        let k = errs.len();
        let med = if k % 2 == 1 { errs[k / 2] } else { 0.5 * (errs[k / 2 - 1] + errs[k / 2]) };
        medians.push((n, med));
    }
    let slope = if medians.iter().all(|&(_, e)| e > RATE_FLOOR) {
        let pts: Vec<(f64, f64)> = medians.iter().map(|&(n, e)| ((n as f64).ln(), e.ln())).collect();
        Some(ls_slope(&pts))
    } else {
        None
    };
    Ok(RateStudy { cells, medians, slope })
}

fn rate_cell(template: &TemplateSpec, spec: &DeformSpec, n: usize, seed: u64, config: &GaussianConfig) -> Result<f64> {
    let ds = generate_exact_dataset(template, spec, n, seed)?;
    let (q, _) = fit_gaussian(&ds.design, &ds.responses, config)?;
    let mut total = 0.0;
    for (x, truth) in ds.design.rows().iter().zip(&ds.truth) {
        total += gaussian_w2_squared(&marginal(&q, x)?, truth)?;
    }
    Ok(total / n as f64)
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Per-row fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// W₂ between each fitted marginal and its response.
    pub vs_responses: Vec<f64>,
    pub vs_responses_mean: f64,
    pub vs_responses_std: f64,
    /// W₂ against the true marginals, when known.
    pub vs_truth: Option<Vec<f64>>,
    pub vs_truth_mean: Option<f64>,
    pub vs_truth_std: Option<f64>,
    /// `None` when R² is undefined for these responses.
    pub r2: Option<f64>,
    pub metadata: serde_json::Value,
}

pub fn evaluate(
    fitted: &[Measure],
    responses: &[Measure],
    truth: Option<&[Measure]>,
    metadata: serde_json::Value,
) -> Result<EvalReport> {
    let vs_responses: Vec<f64> = pairwise_sq(fitted, responses)?.into_iter().map(f64::sqrt).collect();
    let (vs_responses_mean, vs_responses_std) = mean_std(&vs_responses);
    let (vs_truth, vs_truth_mean, vs_truth_std) = match truth {
        Some(t) => {
            let v: Vec<f64> = pairwise_sq(fitted, t)?.into_iter().map(f64::sqrt).collect();
            let (m, s) = mean_std(&v);
            (Some(v), Some(m), Some(s))
        }
        None => (None, None, None),
    };
    let r2 = if responses.len() < 2 {
        None
    } else {
        match wasserstein_r2(fitted, responses) {
            Ok(v) => Some(v),
            Err(Error::Undefined(_)) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(EvalReport {
        vs_responses,
        vs_responses_mean,
        vs_responses_std,
        vs_truth,
        vs_truth_mean,
        vs_truth_std,
        r2,
        metadata,
    })
}
