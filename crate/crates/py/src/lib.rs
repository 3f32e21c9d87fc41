//! Python module `wlsq`: datasets, the three solvers, evaluation, the exact
//! oracle and conditional selection.

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wls_core::deform::{generate_dataset, generate_exact_dataset, preset, TemplateSpec};
use wls_core::frechet::{frechet_fit_1d, frechet_fit_gauss};
use wls_core::gaussian::{fit_gaussian as core_fit_gaussian, GaussianConfig};
use wls_core::inference::{select, ConditionSpec, Constraint};
use wls_core::io::{read_dataset, read_json, write_json, Model as CoreModel, ModelFile, Responses};
use wls_core::linalg::SpdMatrix;
use wls_core::metrics::{evaluate as core_evaluate, Measure};
use wls_core::oracle::{solve_multimarginal, DiscreteProblem};
use wls_core::particle::{fit as core_fit_particles, normal_equation_residual, SolverConfig};
use wls_core::transport::{GaussianMeasure, QuantileInterp, Univariate};
use wls_core::Design;

create_exception!(wlsq, WlsError, PyValueError);

fn err(e: wls_core::Error) -> PyErr {
    WlsError::new_err(format!("{}: {e}", e.code()))
}

fn json_err(e: serde_json::Error) -> PyErr {
    WlsError::new_err(format!("E_PARSE: {e}"))
}

type PResult<T> = PyResult<T>;

/// Covariates with one response distribution per row.
#[pyclass(module = "wlsq", skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: wls_core::io::Dataset,
}

#[pymethods]
impl Dataset {
    /// Synthetic data from a named template and noise preset.
    #[staticmethod]
    #[pyo3(signature = (n, seed, template="univariate", noise="additive", m=500, exact=false))]
    fn simulate(n: usize, seed: u64, template: &str, noise: &str, m: usize, exact: bool) -> PResult<Self> {
        let t = TemplateSpec::by_name(template).map_err(err)?;
        let spec = preset(noise).map_err(err)?;
        let inner = if exact {
            generate_exact_dataset(&t, &spec, n, seed).and_then(|d| d.to_dataset(&t, &spec))
        } else {
            generate_dataset(&t, &spec, n, m, seed).and_then(|d| d.to_dataset())
        }
        .map_err(err)?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    fn from_samples(design: Vec<Vec<f64>>, samples: Vec<Vec<f64>>) -> PResult<Self> {
        let design = Design::new(design).map_err(err)?;
        let inner = wls_core::io::Dataset::new(design, Responses::Samples { data: samples }).map_err(err)?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    fn from_gaussians(design: Vec<Vec<f64>>, means: Vec<Vec<f64>>, covs: Vec<Vec<Vec<f64>>>) -> PResult<Self> {
        let design = Design::new(design).map_err(err)?;
        let data = means
            .into_iter()
            .zip(covs)
            .map(|(m, c)| GaussianMeasure::new(m.into(), SpdMatrix::from_rows(&c)?))
            .collect::<wls_core::Result<Vec<_>>>()
            .map_err(err)?;
        let inner = wls_core::io::Dataset::new(design, Responses::Gaussian { data }).map_err(err)?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PResult<Self> {
        Ok(Dataset { inner: read_dataset(path.as_ref()).map_err(err)? })
    }

    fn save(&self, path: &str) -> PResult<()> {
        write_json(path.as_ref(), &self.inner).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PResult<Self> {
        let inner: wls_core::io::Dataset = serde_json::from_str(text).map_err(json_err)?;
        inner.validate().map_err(err)?;
        Ok(Dataset { inner })
    }

    fn to_json(&self) -> PResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.design.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.design.p()
    }

    /// `samples`, `quantiles` or `gaussian`.
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.responses.kind()
    }

    #[getter]
    fn design(&self) -> Vec<Vec<f64>> {
        self.inner.design.rows().to_vec()
    }

    #[getter]
    fn seed(&self) -> Option<u64> {
        self.inner.seed
    }

    /// Raw samples per row, or `None` for other representations.
    fn samples(&self) -> Option<Vec<Vec<f64>>> {
        match &self.inner.responses {
            Responses::Samples { data } => Some(data.clone()),
            _ => None,
        }
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={}, kind={})", self.n(), self.p(), self.kind())
    }
}

/// A fitted model of any kind.
#[pyclass(module = "wlsq", skip_from_py_object)]
#[derive(Clone)]
struct Model {
    inner: CoreModel,
}

fn univariate(ds: &Dataset) -> PResult<Vec<Univariate>> {
    ds.inner.responses.univariate().map_err(err)
}

#[pymethods]
impl Model {
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    /// Coefficient vectors: the particles, or the Fréchet coefficient curve.
    fn coefficients(&self) -> PResult<Vec<Vec<f64>>> {
        Ok(self.inner.coeff_cloud().map_err(err)?.to_rows())
    }

    /// Quantiles of the fitted marginal at `x`, evaluated at `levels`.
    fn predict_quantiles(&self, x: Vec<f64>, levels: Vec<f64>) -> PResult<Vec<f64>> {
        match self.inner.predict(&x).map_err(err)? {
            Measure::OneD(u) => Ok(levels.iter().map(|&l| u.quantile(l, QuantileInterp::Linear)).collect()),
            Measure::Gaussian(_) => Err(WlsError::new_err("E_INPUT: the fitted marginal is multivariate")),
        }
    }

    /// Mean and covariance of the fitted Gaussian marginal at `x`.
    fn predict_gaussian(&self, x: Vec<f64>) -> PResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let g = match self.inner.predict(&x).map_err(err)? {
            Measure::Gaussian(g) | Measure::OneD(Univariate::Gaussian(g)) => g,
            Measure::OneD(_) => return Err(WlsError::new_err("E_INPUT: the fitted marginal is not Gaussian")),
        };
        Ok((g.mean.iter().copied().collect(), g.cov.to_rows()))
    }

    /// `(iteration, objective)` pairs recorded during fitting.
    fn objective_trace(&self) -> Vec<(usize, f64)> {
        match &self.inner {
            CoreModel::Particle { report, .. } | CoreModel::Gaussian { report, .. } => {
                report.objective_trace.iter().map(|t| (t.iteration, t.objective)).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Final first-order residual reported by the solver, if any.
    fn final_residual(&self) -> Option<f64> {
        match &self.inner {
            CoreModel::Particle { report, .. } | CoreModel::Gaussian { report, .. } => Some(report.final_gradient_norm),
            _ => None,
        }
    }

    /// Normal-equation residual of a particle model on `ds`.
    fn normal_equation_residual(&self, ds: &Dataset) -> PResult<f64> {
        match &self.inner {
            CoreModel::Particle { particles, config, .. } => {
                normal_equation_residual(particles, &ds.inner.design, &univariate(ds)?, config.interp).map_err(err)
            }
            _ => Err(WlsError::new_err("E_INPUT: only particle models have a normal-equation residual")),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PResult<Self> {
        let file: ModelFile = read_json(path.as_ref()).map_err(err)?;
        Ok(Model { inner: file.model })
    }

    fn save(&self, path: &str) -> PResult<()> {
        write_json(path.as_ref(), &ModelFile::new(self.inner.clone())).map_err(err)
    }

    fn to_json(&self) -> PResult<String> {
        serde_json::to_string(&ModelFile::new(self.inner.clone())).map_err(json_err)
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={})", self.kind())
    }
}

#[pyfunction]
#[pyo3(signature = (ds, seed, particles=2000, iterations=3000, step=0.1, decay=1e-3, momentum=0.9, batch=None))]
#[allow(clippy::too_many_arguments)]
fn fit_particle(
    py: Python<'_>,
    ds: &Dataset,
    seed: u64,
    particles: usize,
    iterations: usize,
    step: f64,
    decay: f64,
    momentum: f64,
    batch: Option<usize>,
) -> PResult<Model> {
    let config = SolverConfig { particles, iterations, step, decay, momentum, batch, seed, ..SolverConfig::default() };
    let responses = univariate(ds)?;
    let design = ds.inner.design.clone();
    let (cloud, report) = py.detach(|| core_fit_particles(&design, &responses, &config)).map_err(err)?;
    Ok(Model { inner: CoreModel::Particle { particles: cloud, config, seed, report } })
}

#[pyfunction]
#[pyo3(signature = (ds, iterations=300, tol=1e-10, step=None))]
fn fit_gaussian(ds: &Dataset, iterations: usize, tol: f64, step: Option<f64>) -> PResult<Model> {
    let config = GaussianConfig { step, iterations, tol, init_cov: None };
    let responses = ds.inner.responses.gaussian().map_err(err)?;
    let (law, report) = core_fit_gaussian(&ds.inner.design, responses, &config).map_err(err)?;
    Ok(Model { inner: CoreModel::Gaussian { law, config, report } })
}

#[pyfunction]
#[pyo3(signature = (ds, levels=500))]
fn fit_frechet(ds: &Dataset, levels: usize) -> PResult<Model> {
    let inner = match &ds.inner.responses {
        Responses::Gaussian { data } if data.first().is_some_and(|g| g.dim() > 1) => {
            CoreModel::FrechetGauss { model: frechet_fit_gauss(&ds.inner.design, data).map_err(err)? }
        }
        _ => CoreModel::Frechet1d { model: frechet_fit_1d(&ds.inner.design, &univariate(ds)?, levels).map_err(err)? },
    };
    Ok(Model { inner })
}

/// W₂ errors against the responses and the truth, plus the Wasserstein R².
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, model: &Model, ds: &Dataset) -> PResult<Bound<'py, PyDict>> {
    let responses = ds.inner.responses.measures().map_err(err)?;
    let fitted = ds.inner.design.rows().iter().map(|x| model.inner.predict(x)).collect::<wls_core::Result<Vec<_>>>().map_err(err)?;
    let truth = ds.inner.truth_measures().map_err(err)?;
    let r = core_evaluate(&fitted, &responses, truth.as_deref(), serde_json::Value::Null).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("vs_responses", r.vs_responses)?;
    out.set_item("vs_responses_mean", r.vs_responses_mean)?;
    out.set_item("vs_truth", r.vs_truth)?;
    out.set_item("vs_truth_mean", r.vs_truth_mean)?;
    out.set_item("r2", r.r2)?;
    Ok(out)
}

/// Squared W₂ between two univariate samples.
#[pyfunction]
fn w2_squared_samples(a: Vec<f64>, b: Vec<f64>) -> PResult<f64> {
    let a = Univariate::empirical(a).map_err(err)?;
    let b = Univariate::empirical(b).map_err(err)?;
    wls_core::transport::w2_squared_1d(&a, &b).map_err(err)
}

/// Squared W₂ (Bures–Wasserstein) between two Gaussians.
#[pyfunction]
fn gaussian_w2_squared(m1: Vec<f64>, c1: Vec<Vec<f64>>, m2: Vec<f64>, c2: Vec<Vec<f64>>) -> PResult<f64> {
    let a = GaussianMeasure::new(m1.into(), SpdMatrix::from_rows(&c1).map_err(err)?).map_err(err)?;
    let b = GaussianMeasure::new(m2.into(), SpdMatrix::from_rows(&c2).map_err(err)?).map_err(err)?;
    wls_core::transport::gaussian_w2_squared(&a, &b).map_err(err)
}

/// Exact optimum of a tiny discrete problem: `(value, matching)`.
#[pyfunction]
fn oracle(design: Vec<Vec<f64>>, responses: Vec<Vec<Vec<f64>>>) -> PResult<(f64, Vec<Vec<usize>>)> {
    let problem = DiscreteProblem::new(Design::new(design).map_err(err)?, responses).map_err(err)?;
    let s = solve_multimarginal(&problem).map_err(err)?;
    Ok((s.value, s.matching))
}

/// Indices of coefficient vectors with `lo ≤ xᵀβ ≤ hi` for every `(x, lo, hi)`.
#[pyfunction]
fn condition(model: &Model, constraints: Vec<(Vec<f64>, Option<f64>, Option<f64>)>) -> PResult<Vec<usize>> {
    let cloud = model.inner.coeff_cloud().map_err(err)?;
    let spec = ConditionSpec::new(constraints.into_iter().map(|(x, lo, hi)| Constraint { x, lo, hi }).collect())
        .map_err(err)?;
    select(&cloud, &spec).map_err(err)
}

#[pymodule]
fn wlsq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("WlsError", m.py().get_type::<WlsError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(fit_particle, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(fit_frechet, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(w2_squared_samples, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_w2_squared, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(condition, m)?)?;
    Ok(())
}
