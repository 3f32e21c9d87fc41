use std::path::Path;

use serde::{Deserialize, Serialize};
use wls_core::deform::{generate_dataset, generate_exact_dataset, preset, TemplateSpec};
use wls_core::frechet::{frechet_fit_1d, frechet_fit_gauss};
use wls_core::gaussian::{fit_gaussian, GaussianConfig};
use wls_core::inference::{conditional_band, exceedance_prob, select, ConditionSpec, Constraint};
use wls_core::io::{ingest_csv, read_dataset, read_json, responses_to_csv, Dataset, Model, ModelFile, Responses};
use wls_core::metrics::{evaluate, loo_cv, rate_study as run_rate_study, Measure};
use wls_core::oracle::{solve_multimarginal, DiscreteProblem};
use wls_core::particle::{fit as fit_particles, SolverConfig};
use wls_core::{Design, Error, Result};

use crate::{Artifacts, ConditionArgs, EvalArgs, FitArgs, IngestArgs, OracleArgs, RateStudyArgs, SimulateArgs, Solver};

pub(crate) fn simulate(a: &SimulateArgs) -> Result<Artifacts> {
    let template = TemplateSpec::by_name(&a.template)?;
    let spec = preset(&a.noise)?;
    let config = serde_json::json!({
        "template": template, "noise": spec, "n": a.n, "m": a.m, "exact": a.exact,
    });
    let ds = if a.exact {
        generate_exact_dataset(&template, &spec, a.n, a.seed)?.to_dataset(&template, &spec)?
    } else {
        generate_dataset(&template, &spec, a.n, a.m, a.seed)?.to_dataset()?
    };
    let mut out = Artifacts::new("simulate", config, Some(a.seed));
    out.json(&a.out.out, &ds)?;
    if let Some(csv) = &a.csv {
        out.text(csv, responses_to_csv(&ds)?);
    }
    Ok(out)
}

pub(crate) fn ingest(a: &IngestArgs) -> Result<Artifacts> {
    let (ds, report) = ingest_csv(&a.csv, a.min_count)?;
    let config = serde_json::json!({ "csv": a.csv, "min_count": a.min_count, "report": report });
    let mut out = Artifacts::new("ingest", config, None);
    out.json(&a.out.out, &ds)?;
    Ok(out)
}

fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn particle_config(a: &FitArgs) -> Result<SolverConfig> {
    let mut c: SolverConfig = load_config(a.config.as_deref())?;
    c.particles = a.particles.unwrap_or(c.particles);
    c.iterations = a.iters.unwrap_or(c.iterations);
    c.step = a.step.unwrap_or(c.step);
    c.decay = a.decay.unwrap_or(c.decay);
    c.momentum = a.momentum.unwrap_or(c.momentum);
    if let Some(b) = a.batch {
        c.batch = (b > 0).then_some(b);
    }
    c.tol = a.tol.or(c.tol);
    c.seed = a
        .seed
        .ok_or_else(|| Error::Input("the particle solver is stochastic and needs --seed".into()))?;
    Ok(c)
}

fn gaussian_config(a: &FitArgs) -> Result<GaussianConfig> {
    let mut c: GaussianConfig = load_config(a.config.as_deref())?;
    c.step = a.step.or(c.step);
    c.iterations = a.iters.unwrap_or(c.iterations);
    c.tol = a.tol.unwrap_or(c.tol);
    Ok(c)
}

/// Gaussian responses of dimension above one, or `None` for univariate data.
fn multivariate(ds: &Dataset) -> Option<&[wls_core::transport::GaussianMeasure]> {
    match &ds.responses {
        Responses::Gaussian { data } if data.first().is_some_and(|g| g.dim() > 1) => Some(data),
        _ => None,
    }
}

fn fit_model(solver: Solver, a: &FitArgs, ds: &Dataset) -> Result<Model> {
    Ok(match solver {
        Solver::Particle => {
            if multivariate(ds).is_some() {
                return Err(Error::Input("the particle solver needs univariate responses".into()));
            }
            let config = particle_config(a)?;
            let (particles, report) = fit_particles(&ds.design, &ds.responses.univariate()?, &config)?;
            Model::Particle { particles, seed: config.seed, config, report }
        }
        Solver::Gaussian => {
            let config = gaussian_config(a)?;
            let (law, report) = fit_gaussian(&ds.design, ds.responses.gaussian()?, &config)?;
            Model::Gaussian { law, config, report }
        }
        Solver::Frechet => match multivariate(ds) {
            Some(g) => Model::FrechetGauss { model: frechet_fit_gauss(&ds.design, g)? },
            None => Model::Frechet1d { model: frechet_fit_1d(&ds.design, &ds.responses.univariate()?, a.levels)? },
        },
    })
}

pub(crate) fn fit(a: &FitArgs) -> Result<Artifacts> {
    let ds = read_dataset(&a.data)?;
    let model = fit_model(a.solver, a, &ds)?;
    let seed = match &model {
        Model::Particle { seed, .. } => Some(*seed),
        _ => None,
    };
    let config = serde_json::json!({
        "data": a.data,
        "solver": format!("{:?}", a.solver).to_lowercase(),
        "model_kind": model.kind(),
        "settings": match &model {
            Model::Particle { config, .. } => serde_json::to_value(config).unwrap_or_default(),
            Model::Gaussian { config, .. } => serde_json::to_value(config).unwrap_or_default(),
            _ => serde_json::json!({ "levels": a.levels }),
        },
    });
    let mut out = Artifacts::new("fit", config, seed);
    out.json(&a.out.out, &ModelFile::new(model))?;
    Ok(out)
}

/// Refit on a subset with the settings stored in `model`, then predict at `x`.
fn refit_predict(model: &Model, design: &Design, responses: &[Measure], x: &[f64]) -> Result<Measure> {
    let one_d = || -> Result<Vec<_>> {
        responses
            .iter()
            .map(|m| match m {
                Measure::OneD(u) => Ok(u.clone()),
                Measure::Gaussian(_) => Err(Error::Input("expected univariate responses".into())),
            })
            .collect()
    };
    let gauss = || -> Result<Vec<_>> {
        responses
            .iter()
            .map(|m| match m {
                Measure::Gaussian(g) => Ok(g.clone()),
                Measure::OneD(wls_core::transport::Univariate::Gaussian(g)) => Ok(g.clone()),
                Measure::OneD(_) => Err(Error::Input("expected Gaussian responses".into())),
            })
            .collect()
    };
    let refit = match model {
        Model::Particle { config, seed, .. } => {
            let (particles, report) = fit_particles(design, &one_d()?, config)?;
            Model::Particle { particles, config: config.clone(), seed: *seed, report }
        }
        Model::Gaussian { config, .. } => {
            let (law, report) = fit_gaussian(design, &gauss()?, config)?;
            Model::Gaussian { law, config: config.clone(), report }
        }
        Model::Frechet1d { model } => Model::Frechet1d { model: frechet_fit_1d(design, &one_d()?, model.levels().len())? },
        Model::FrechetGauss { .. } => Model::FrechetGauss { model: frechet_fit_gauss(design, &gauss()?)? },
    };
    refit.predict(x)
}

#[derive(Serialize)]
struct EvalOutput {
    model_kind: &'static str,
    #[serde(flatten)]
    report: wls_core::metrics::EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    loo: Option<wls_core::metrics::LooReport>,
}

pub(crate) fn eval(a: &EvalArgs) -> Result<Artifacts> {
    let ds = read_dataset(&a.data)?;
    let file: ModelFile = read_json(&a.model)?;
    let model = file.model;
    let responses = ds.responses.measures()?;
    let fitted: Vec<Measure> = ds.design.rows().iter().map(|x| model.predict(x)).collect::<Result<_>>()?;
    let truth = ds.truth_measures()?;
    let metadata = serde_json::json!({ "data": a.data, "model": a.model, "n": ds.design.n() });
    let report = evaluate(&fitted, &responses, truth.as_deref(), metadata)?;
    let loo = if a.loo {
        Some(loo_cv(&ds.design, &responses, |d, r, x| refit_predict(&model, d, r, x))?)
    } else {
        None
    };
    let config = serde_json::json!({ "data": a.data, "model": a.model, "loo": a.loo });
    let mut out = Artifacts::new("eval", config, None);
    if let Some(csv) = &a.csv {
        let mut text = String::from("row,w2_response,w2_truth\n");
        for (i, w) in report.vs_responses.iter().enumerate() {
            let t = report.vs_truth.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
            text.push_str(&format!("{i},{w},{t}\n"));
        }
        out.text(csv, text);
    }
    out.json(&a.out.out, &EvalOutput { model_kind: model.kind(), report, loo })?;
    Ok(out)
}

pub(crate) fn oracle(a: &OracleArgs) -> Result<Artifacts> {
    let raw: DiscreteProblem = read_json(&a.problem)?;
    let problem = DiscreteProblem::new(raw.design, raw.responses)?;
    let solution = solve_multimarginal(&problem)?;
    let config = serde_json::json!({ "problem": a.problem, "n": problem.n(), "m": problem.m(), "d": problem.d() });
    let mut out = Artifacts::new("oracle", config, None);
    out.json(&a.out.out, &solution)?;
    Ok(out)
}

pub(crate) fn rate_study(a: &RateStudyArgs) -> Result<Artifacts> {
    let template = TemplateSpec::by_name(&a.template)?;
    let spec = preset(&a.noise)?;
    let seeds: Vec<u64> = (0..a.seeds).map(|k| a.seed + k).collect();
    let mut gconf = GaussianConfig::default();
    gconf.iterations = a.iters.unwrap_or(gconf.iterations);
    let study = run_rate_study(&template, &spec, &a.n, &seeds, &gconf)?;
    let config = serde_json::json!({
        "template": template, "noise": spec, "n": a.n, "seeds": seeds, "solver": gconf,
    });
    let mut out = Artifacts::new("rate-study", config, Some(a.seed));
    if let Some(csv) = &a.csv {
        let mut text = String::from("n,seed,error\n");
        for c in &study.cells {
            let e = c.error.map(|e| e.to_string()).unwrap_or_default();
            text.push_str(&format!("{},{},{e}\n", c.n, c.seed));
        }
        out.text(csv, text);
    }
    out.json(&a.out.out, &study)?;
    Ok(out)
}

fn default_coverages() -> Vec<f64> {
    vec![0.5, 0.9]
}

#[derive(Debug, Deserialize, Serialize)]
struct Query {
    constraints: Vec<Constraint>,
    /// Covariates at which bands are reported.
    #[serde(default)]
    grid: Vec<Vec<f64>>,
    /// Central interval coverages.
    #[serde(default = "default_coverages")]
    levels: Vec<f64>,
    /// Exceedance probabilities `P(xᵀβ > threshold)` are reported on the grid.
    #[serde(default)]
    threshold: Option<f64>,
}

#[derive(Serialize)]
struct Exceedance {
    x: Vec<f64>,
    /// `None` when nothing was retained.
    probability: Option<f64>,
}

#[derive(Serialize)]
struct ConditionOutput {
    model_kind: &'static str,
    total: usize,
    retained: usize,
    bands: Option<Vec<wls_core::inference::BandPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    probabilities: Option<Vec<Exceedance>>,
}

pub(crate) fn condition(a: &ConditionArgs) -> Result<Artifacts> {
    let file: ModelFile = read_json(&a.model)?;
    let query: Query = read_json(&a.query)?;
    let cloud = file.model.coeff_cloud()?;
    let spec = ConditionSpec::new(query.constraints.clone())?;
    let idx = select(&cloud, &spec)?;
    let bands = conditional_band(&cloud, &idx, &query.grid, &query.levels)?;
    let probabilities = match query.threshold {
        Some(t) => Some(
            query
                .grid
                .iter()
                .map(|x| {
                    let probability = match exceedance_prob(&cloud, &idx, x, t) {
                        Ok(p) => Some(p),
                        Err(Error::Undefined(_)) => None,
                        Err(e) => return Err(e),
                    };
                    Ok(Exceedance { x: x.clone(), probability })
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let config = serde_json::json!({ "model": a.model, "query": query });
    let mut out = Artifacts::new("condition", config, None);
    out.json(
        &a.out.out,
        &ConditionOutput {
            model_kind: file.model.kind(),
            total: cloud.len(),
            retained: bands.retained,
            bands: bands.bands,
            threshold: query.threshold,
            probabilities,
        },
    )?;
    Ok(out)
}
