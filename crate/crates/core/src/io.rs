//! File formats: datasets, fitted models and run manifests as JSON, bulk
//! tables as CSV. Every write goes through a temporary file and a rename.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::deform::{DeformSpec, ExactDataset, SyntheticDataset, TemplateSpec};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::frechet::{frechet_coeff_cloud, frechet_predict_1d, frechet_predict_gauss, FrechetModel1D, FrechetModelGauss};
use crate::gaussian::{CoeffGaussian, GaussianConfig};
use crate::metrics::Measure;
use crate::particle::{ParticleCloud, SolverConfig};
use crate::report::FitReport;
use crate::rng::RNG_NAME;
use crate::transport::{GaussianMeasure, QuantileGrid, Univariate};

pub const FORMAT_VERSION: u32 = 1;

/// Responses in exactly one representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Responses {
    /// Raw univariate samples, one list per row.
    Samples { data: Vec<Vec<f64>> },
    /// Quantile values on shared levels.
    Quantiles { levels: Vec<f64>, data: Vec<Vec<f64>> },
    Gaussian { data: Vec<GaussianMeasure> },
}

impl Responses {
    pub fn len(&self) -> usize {
        match self {
            Responses::Samples { data } => data.len(),
            Responses::Quantiles { data, .. } => data.len(),
            Responses::Gaussian { data } => data.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Responses::Samples { .. } => "samples",
            Responses::Quantiles { .. } => "quantiles",
            Responses::Gaussian { .. } => "gaussian",
        }
    }

    /// Univariate views of the responses; errors for multivariate Gaussians.
    pub fn univariate(&self) -> Result<Vec<Univariate>> {
        match self {
            Responses::Samples { data } => data.iter().map(|v| Univariate::empirical(v.clone())).collect(),
            Responses::Quantiles { levels, data } => data
                .iter()
                .map(|v| Ok(Univariate::Quantiles(QuantileGrid::new(levels.clone(), v.clone())?)))
                .collect(),
            Responses::Gaussian { data } => data.iter().map(|g| Univariate::from_gaussian(g.clone())).collect(),
        }
    }

    pub fn gaussian(&self) -> Result<&[GaussianMeasure]> {
        match self {
            Responses::Gaussian { data } => Ok(data),
            other => Err(Error::input(format!("expected Gaussian responses, found {}", other.kind()))),
        }
    }

    /// Responses as comparable measures: Gaussian datasets of dimension above one stay Gaussian.
    pub fn measures(&self) -> Result<Vec<Measure>> {
        match self {
            Responses::Gaussian { data } if data.first().is_some_and(|g| g.dim() > 1) => {
                Ok(data.iter().cloned().map(Measure::Gaussian).collect())
            }
            _ => Ok(self.univariate()?.into_iter().map(Measure::OneD).collect()),
        }
    }
}

/// Observed pairs `(xᵢ, νᵢ)` with optional ground truth and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format_version: u32,
    pub design: Design,
    pub responses: Responses,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<GaussianMeasure>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Dataset {
    pub fn new(design: Design, responses: Responses) -> Result<Self> {
        let ds = Dataset {
            format_version: FORMAT_VERSION,
            design,
            responses,
            truth: None,
            seed: None,
            rng: None,
            spec: None,
            source: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::input(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let n = self.design.n();
        if self.responses.len() != n {
            return Err(Error::input(format!(
                "design has {n} rows but there are {} responses",
                self.responses.len()
            )));
        }
        if let Some(t) = &self.truth {
            if t.len() != n {
                return Err(Error::input(format!("design has {n} rows but truth has {}", t.len())));
            }
        }
        match &self.responses {
            Responses::Samples { data } => {
                if let Some(i) = data.iter().position(|v| v.is_empty() || v.iter().any(|x| !x.is_finite())) {
                    return Err(Error::input(format!("response {i} is empty or has non-finite values")));
                }
            }
            Responses::Quantiles { levels, data } => {
                for v in data {
                    QuantileGrid::new(levels.clone(), v.clone())?;
                }
            }
            Responses::Gaussian { data } => {
                if let Some(first) = data.first() {
                    if data.iter().any(|g| g.dim() != first.dim()) {
                        return Err(Error::input("Gaussian responses must share a dimension"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn truth_measures(&self) -> Result<Option<Vec<Measure>>> {
        let Some(truth) = &self.truth else { return Ok(None) };
        let as_gauss = matches!(self.responses.measures()?.first(), Some(Measure::Gaussian(_)));
        truth
            .iter()
            .map(|g| {
                if as_gauss {
                    Ok(Measure::Gaussian(g.clone()))
                } else {
                    Ok(Measure::OneD(Univariate::from_gaussian(g.clone())?))
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

fn spec_json(template: &TemplateSpec, spec: &DeformSpec, m: Option<usize>) -> serde_json::Value {
    serde_json::json!({ "template": template, "noise": spec, "m": m })
}

impl SyntheticDataset {
    /// Univariate datasets keep raw samples; multivariate ones are summarized by
    /// sample mean and covariance.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let d = self.responses.first().map_or(1, |r| r.dim());
        let responses = if d == 1 {
            Responses::Samples { data: self.responses.iter().map(|r| r.values().to_vec()).collect() }
        } else {
            Responses::Gaussian { data: self.responses.iter().map(|r| r.to_gaussian()).collect() }
        };
        let m = self.responses.first().map(|r| r.len());
        let mut ds = Dataset::new(self.design.clone(), responses)?;
        ds.truth = Some(self.truth.clone());
        ds.seed = Some(self.seed);
        ds.rng = Some(RNG_NAME.into());
        ds.spec = Some(spec_json(&self.template, &self.spec, m));
        Ok(ds)
    }
}

impl ExactDataset {
    pub fn to_dataset(&self, template: &TemplateSpec, spec: &DeformSpec) -> Result<Dataset> {
        let mut ds = Dataset::new(self.design.clone(), Responses::Gaussian { data: self.responses.clone() })?;
        ds.truth = Some(self.truth.clone());
        ds.seed = Some(self.seed);
        ds.rng = Some(RNG_NAME.into());
        ds.spec = Some(spec_json(template, spec, None));
        Ok(ds)
    }
}

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io { path: path.display().to_string(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse { path: path.display().to_string(), message: e.to_string() })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.display().to_string(), message: e.to_string() })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let ds: Dataset = read_json(path)?;
    ds.validate().map_err(|e| Error::Parse { path: path.display().to_string(), message: e.to_string() })?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub cells_read: usize,
    pub cells_kept: usize,
    /// Cell ids dropped for having fewer than `min_count` values.
    pub dropped: Vec<String>,
    pub min_count: usize,
}

/// Reads `cell_id,x1,…,xp,value` rows and groups the values by cell.
///
/// Covariates must agree within a cell. Cells with fewer than `min_count`
/// values are dropped and listed in the report.
pub fn ingest_csv(path: &Path, min_count: usize) -> Result<(Dataset, IngestReport)> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    ingest_csv_reader(file, &path.display().to_string(), min_count)
}

pub fn ingest_csv_reader<R: std::io::Read>(reader: R, name: &str, min_count: usize) -> Result<(Dataset, IngestReport)> {
    let parse_err = |line: u64, msg: String| Error::Parse { path: name.to_string(), message: format!("line {line}: {msg}") };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.len() < 3 || &headers[0] != "cell_id" || &headers[headers.len() - 1] != "value" {
        return Err(parse_err(1, "header must be cell_id,x1,...,xp,value".into()));
    }
    let p = headers.len() - 2;
    let mut order: Vec<String> = Vec::new();
    let mut cells: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |k: usize| -> Result<f64> {
            let v: f64 = record[k]
                .parse()
                .map_err(|_| parse_err(line, format!("'{}' in column {} is not a number", &record[k], headers[k].to_string())))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(line, format!("non-finite value in column {}", &headers[k])))
            }
        };
        let id = record[0].to_string();
        let x = (1..=p).map(num).collect::<Result<Vec<f64>>>()?;
        let value = num(p + 1)?;
        match cells.get_mut(&id) {
            Some((cx, values)) => {
                if *cx != x {
                    return Err(parse_err(line, format!("covariates for cell '{id}' differ from its first row")));
                }
                values.push(value);
            }
            None => {
                order.push(id.clone());
                cells.insert(id, (x, vec![value]));
            }
        }
    }
    let mut rows = Vec::new();
    let mut data = Vec::new();
    let mut dropped = Vec::new();
    for id in &order {
        let (x, values) = cells.remove(id).expect("cell recorded");
        if values.len() < min_count {
            dropped.push(id.clone());
        } else {
            rows.push(x);
            data.push(values);
        }
    }
    if rows.is_empty() {
        return Err(Error::input(format!("no cell has at least {min_count} values")));
    }
    let report = IngestReport { cells_read: order.len(), cells_kept: rows.len(), dropped, min_count };
    let mut ds = Dataset::new(Design::new(rows)?, Responses::Samples { data })?;
    ds.source = Some(name.to_string());
    Ok((ds, report))
}

/// One row per atom: `cell_id,x1,…,xp,value`. Only sample responses have atoms.
pub fn responses_to_csv(ds: &Dataset) -> Result<String> {
    let Responses::Samples { data } = &ds.responses else {
        return Err(Error::input("CSV export needs sample responses"));
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let p = ds.design.p();
    let mut header = vec!["cell_id".to_string()];
    header.extend((1..=p).map(|k| format!("x{k}")));
    header.push("value".into());
    let csv_err = |e: csv::Error| Error::input(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (i, (x, values)) in ds.design.rows().iter().zip(data).enumerate() {
        for v in values {
            let mut rec = vec![i.to_string()];
            rec.extend(x.iter().map(f64::to_string));
            rec.push(v.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// A fitted model as stored on disk, with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Particle {
        particles: ParticleCloud,
        config: SolverConfig,
        seed: u64,
        report: FitReport,
    },
    Gaussian {
        #[serde(flatten)]
        law: CoeffGaussian,
        config: GaussianConfig,
        report: FitReport,
    },
    #[serde(rename = "frechet_1d")]
    Frechet1d {
        #[serde(flatten)]
        model: FrechetModel1D,
    },
    FrechetGauss {
        #[serde(flatten)]
        model: FrechetModelGauss,
    },
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Particle { .. } => "particle",
            Model::Gaussian { .. } => "gaussian",
            Model::Frechet1d { .. } => "frechet_1d",
            Model::FrechetGauss { .. } => "frechet_gauss",
        }
    }

    /// Fitted marginal at covariate `x`.
    pub fn predict(&self, x: &[f64]) -> Result<Measure> {
        match self {
            Model::Particle { particles, .. } => Ok(Measure::OneD(Univariate::from_empirical(particles.pushforward(x)?)?)),
            Model::Gaussian { law, .. } => {
                let g = crate::gaussian::marginal(law, x)?;
                if g.dim() == 1 {
                    Ok(Measure::OneD(Univariate::from_gaussian(g)?))
                } else {
                    Ok(Measure::Gaussian(g))
                }
            }
            Model::Frechet1d { model } => Ok(Measure::OneD(Univariate::Quantiles(frechet_predict_1d(model, x)?))),
            Model::FrechetGauss { model } => {
                let g = frechet_predict_gauss(model, x)?;
                if g.dim() == 1 {
                    Ok(Measure::OneD(Univariate::from_gaussian(g)?))
                } else {
                    Ok(Measure::Gaussian(g))
                }
            }
        }
    }

    /// Coefficient vectors usable for conditional queries: the particles, or
    /// the Fréchet coefficient curve over its quantile levels.
    pub fn coeff_cloud(&self) -> Result<ParticleCloud> {
        match self {
            Model::Particle { particles, .. } => Ok(particles.clone()),
            Model::Frechet1d { model } => frechet_coeff_cloud(model),
            other => Err(Error::input(format!("a {} model has no coefficient cloud", other.kind()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    #[serde(flatten)]
    pub model: Model,
}

impl ModelFile {
    pub fn new(model: Model) -> Self {
        ModelFile { format_version: FORMAT_VERSION, model }
    }
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub command: String,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub rng: String,
    pub version: String,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>, outputs: Vec<String>) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            command: command.into(),
            config,
            seed,
            rng: RNG_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            outputs,
        }
    }
}
