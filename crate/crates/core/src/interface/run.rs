//! Fit, bootstrap and evaluation pipelines behind the command-line tool, and
//! the JSON manifest they exchange.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::{load_dataset, orthogonalize, ColumnSchema, DataPaths, Table};
use super::metrics::{evaluate_metrics, EvaluationInput, MetricReport, Validation};
use crate::comparators::{fit_comparator, ComparatorFit, ComparatorMethod, ComparatorSpec};
use crate::data::TransferDataset;
use crate::error::{AtrelError, Result, ResultExt};
use crate::estimator::{coordinate_loadings, fit_atrel, AtrelConfig, BootstrapSummary};
use crate::nuisance::{expand_terms, NuisanceSpec, Tunings};
use crate::numerics::glm::fit_glm;
use crate::numerics::{Link, NewtonOptions};

pub const SOFTWARE: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRequest {
    pub data: DataPaths,
    pub schema: ColumnSchema,
    /// `(a, b)`: residualize column `a` on column `b` after loading.
    pub orthogonalize: Vec<(String, String)>,
    pub link: Link,
    pub config: AtrelConfig,
    pub comparators: Vec<ComparatorMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub estimator: String,
    pub estimates: Vec<f64>,
    pub intervals: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub software: String,
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the serialized model specification.
    pub spec_hash: String,
    /// SHA-256 of the input files, in order.
    pub data_hash: String,
    pub request: FitRequest,
    pub spec: NuisanceSpec,
    pub parameters: Vec<String>,
    pub tunings: Tunings,
    pub atrel: Coefficients,
    pub bootstrap: Option<BootstrapSummary>,
    pub comparators: Vec<ComparatorFit>,
}

impl FitManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AtrelError::Data(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    /// Coefficients of `estimator` (`atrel` or a comparator name).
    pub fn coefficients(&self, estimator: &str) -> Result<Vec<f64>> {
        if estimator == "atrel" {
            return Ok(self.atrel.estimates.clone());
        }
        self.comparators
            .iter()
            .find(|c| c.method.name() == estimator)
            .map(|c| c.beta.clone())
            .ok_or_else(|| AtrelError::Config(format!("estimator '{estimator}' not in the manifest")))
    }

    /// `estimator,parameter,estimate,lower,upper` rows.
    pub fn coefficient_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["estimator", "parameter", "estimate", "lower", "upper"])?;
        let mut sets = vec![self.atrel.clone()];
        sets.extend(self.comparators.iter().map(|c| Coefficients {
            estimator: c.method.name().to_string(),
            estimates: c.beta.clone(),
            intervals: None,
        }));
        for set in &sets {
            for (j, name) in self.parameters.iter().enumerate() {
                let (lo, hi) = match &set.intervals {
                    Some(iv) => (iv[j].0.to_string(), iv[j].1.to_string()),
                    None => (String::new(), String::new()),
                };
                w.write_record([set.estimator.clone(), name.clone(), set.estimates[j].to_string(), lo, hi])?;
            }
        }
        w.into_inner().map_err(|e| AtrelError::Io(e.into_error()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn spec_hash(spec: &NuisanceSpec) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(spec)?))
}

fn data_hash(paths: &DataPaths) -> Result<String> {
    let files: Vec<&PathBuf> = match paths {
        DataPaths::Split { source, target } => vec![source, target],
        DataPaths::Single(p) => vec![p],
    };
    let mut h = Sha256::new();
    for f in files {
        h.update(std::fs::read(f).map_err(|e| AtrelError::Data(format!("{}: {e}", f.display())))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Loads the request's data and applies its column transforms.
pub fn load_request_data(req: &FitRequest) -> Result<TransferDataset> {
    let mut data = load_dataset(&req.data, &req.schema)?;
    for (a, b) in &req.orthogonalize {
        orthogonalize(&mut data, a, b)?;
    }
    Ok(data)
}

/// Empty `config.loadings` means one coordinate loading per entry of β.
pub fn run_fit(req: &FitRequest) -> Result<FitManifest> {
    let data = load_request_data(req)?;
    let spec = req.schema.spec(&data, req.link)?;
    let mut req = req.clone();
    if req.config.loadings.is_empty() {
        req.config.loadings = coordinate_loadings(spec.d());
    }
    let fit = fit_atrel(&data, &spec, &req.config).context("ATReL fit")?;
    let intervals = fit
        .bootstrap
        .as_ref()
        .map(|_| fit.intervals().into_iter().map(|iv| iv.expect("bootstrap ran")).collect());
    let mut comparators = Vec::new();
    for &method in &req.comparators {
        let mut cs = ComparatorSpec::new(method);
        cs.seed = req.config.seed;
        comparators.push(fit_comparator(&data, &spec, &cs, None).context(method.name())?);
    }
    Ok(FitManifest {
        software: SOFTWARE.to_string(),
        version: VERSION.to_string(),
        seed: req.config.seed,
        spec_hash: spec_hash(&spec)?,
        data_hash: data_hash(&req.data)?,
        parameters: req.schema.parameter_names(&data),
        request: req,
        spec,
        tunings: fit.tunings.clone(),
        atrel: Coefficients {
            estimator: "atrel".to_string(),
            estimates: fit.estimates(),
            intervals,
        },
        bootstrap: fit.bootstrap,
        comparators,
    })
}

/// Adds percentile intervals to a fit, reusing its tunings and seed.
pub fn run_bootstrap(manifest: &FitManifest, reps: usize, level: f64) -> Result<FitManifest> {
    if reps == 0 {
        return Err(AtrelError::Config("bootstrap needs at least one resample".into()));
    }
    if data_hash(&manifest.request.data)? != manifest.data_hash {
        return Err(AtrelError::Data("input files changed since the fit".into()));
    }
    let data = load_request_data(&manifest.request)?;
    let mut config = manifest.request.config.clone();
    config.bootstrap_reps = reps;
    config.confidence_level = level;
    config.tunings = Some(manifest.tunings.clone());
    let fit = fit_atrel(&data, &manifest.spec, &config).context("bootstrap")?;
    let mut out = manifest.clone();
    out.request.config.bootstrap_reps = reps;
    out.request.config.confidence_level = level;
    out.atrel.estimates = fit.estimates();
    out.atrel.intervals = Some(fit.intervals().into_iter().map(|iv| iv.expect("bootstrap ran")).collect());
    out.bootstrap = fit.bootstrap;
    Ok(out)
}

/// Benchmark for [`run_evaluate`]: explicit coefficients, or labeled
/// validation data from which they are fitted.
#[derive(Debug, Clone, PartialEq)]
pub enum Benchmark {
    Coefficients(Vec<f64>),
    Labels { path: PathBuf, response: String },
}

/// Metrics of one estimator in a fit manifest on the manifest's target rows.
pub fn run_evaluate(manifest: &FitManifest, estimator: &str, benchmark: &Benchmark) -> Result<MetricReport> {
    let data = load_request_data(&manifest.request)?;
    let link = manifest.spec.link;
    let a_terms = &manifest.spec.a_columns;
    let target_a = expand_terms(a_terms, &data.target_x);
    let (beta_valid, validation) = match benchmark {
        Benchmark::Coefficients(b) => (b.clone(), None),
        Benchmark::Labels { path, response } => {
            let table = Table::read(path)?;
            let (x, y) = table.extract(&data.covariate_names, Some(response), |_| true)?;
            let a = expand_terms(a_terms, &crate::numerics::Rows::new(data.covariate_names.len(), x)?);
            let beta = fit_glm(&a, &y, None, link, &NewtonOptions::default()).context("validation fit")?;
            (beta, Some(Validation { a, labels: y }))
        }
    };
    let input = EvaluationInput {
        beta_hat: manifest.coefficients(estimator)?,
        beta_valid,
        target_a,
        validation,
    };
    evaluate_metrics(&input, link)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interface::io::{atomic_write, dataset_csv};
    use crate::simbench::{gen_population, ConfigId, GeneratorParams};

    fn request(dir: &Path) -> FitRequest {
        let pop = gen_population(&GeneratorParams::config(ConfigId::Iv), 300, 400, 3).unwrap();
        let path = dir.join("d.csv");
        atomic_write(&path, &dataset_csv(&pop.data, Some(&pop.target_y)).unwrap()).unwrap();
        let mut schema = ColumnSchema::new("y", vec!["X1".into()]);
        schema.population = Some("population".into());
        schema.a = Some(vec!["X1".into(), "X2".into(), "X3".into()]);
        let mut config = AtrelConfig::coordinates(4);
        config.bootstrap_reps = 0;
        config.seed = 11;
        FitRequest {
            data: DataPaths::Single(path),
            schema,
            orthogonalize: vec![],
            link: Link::Logit,
            config,
            comparators: vec![ComparatorMethod::SourceGlm],
        }
    }

    #[test]
    fn fit_is_reproducible_and_bootstrap_reuses_tunings() {
        let dir = tempfile::tempdir().unwrap();
        let req = request(dir.path());
        let m = run_fit(&req).unwrap();
        assert_eq!(m, run_fit(&req).unwrap());
        assert_eq!(m.parameters, ["intercept", "X1", "X2", "X3"]);
        assert!(m.atrel.estimates.iter().all(|v| v.is_finite()));
        assert_eq!(m.spec_hash.len(), 64);
        let csv = String::from_utf8(m.coefficient_csv().unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 4);

        let b = run_bootstrap(&m, 20, 0.9).unwrap();
        assert_eq!(b.atrel.estimates, m.atrel.estimates);
        assert_eq!(b.tunings, m.tunings);
        assert_eq!(b.atrel.intervals.as_ref().unwrap().len(), 4);
        let back = FitManifest::read(&{
            let p = dir.path().join("m.json");
            atomic_write(&p, &b.to_json().unwrap()).unwrap();
            p
        })
        .unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn evaluating_against_itself_is_perfect() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_fit(&request(dir.path())).unwrap();
        let r = run_evaluate(&m, "atrel", &Benchmark::Coefficients(m.atrel.estimates.clone())).unwrap();
        assert_eq!((r.rmspe, r.cc, r.fcr), (0.0, 1.0, 0.0));
        // labeled validation rows drawn from the same target population
        let pop = gen_population(&GeneratorParams::config(ConfigId::Iv), 10, 500, 4).unwrap();
        let mut text = String::from("y,X1,X2,X3,X4,X5,X6,X7\n");
        for (i, r) in pop.data.target_x.iter_rows().enumerate() {
            text += &format!(
                "{},{}\n",
                pop.target_y[i],
                r.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
            );
        }
        let vpath = dir.path().join("v.csv");
        std::fs::write(&vpath, text).unwrap();
        let r = run_evaluate(
            &m,
            "source_glm",
            &Benchmark::Labels {
                path: vpath,
                response: "y".into(),
            },
        )
        .unwrap();
        assert!(r.auc.unwrap() > 0.5 && r.rmspe >= 0.0);
    }

    #[test]
    fn changed_data_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_fit(&request(dir.path())).unwrap();
        std::fs::write(dir.path().join("d.csv"), "population,y,X1\n").unwrap();
        assert!(run_bootstrap(&m, 5, 0.95).unwrap_err().is_data());
    }
}
