use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generator::{gen_population, ConfigId, GeneratorParams, SimPopulation, Truncation};
use super::{sim_spec, truth_oracle, TRUTH_ROWS};
use crate::comparators::{fit_comparator, ComparatorMethod, ComparatorSpec};
use crate::data::TransferDataset;
use crate::error::{AtrelError, Result, ResultExt};
use crate::estimator::{coordinate_loadings, fit_atrel, percentile_bootstrap, AtrelConfig, MAX_BOOTSTRAP_FAILURE};
use crate::nuisance::NuisanceSpec;
use crate::rng::{derive_seed, DOMAIN_BOOTSTRAP, DOMAIN_REPLICATION};

/// Share of replications an estimator may fail before the study is rejected.
pub const MAX_REPLICATION_FAILURE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    Atrel,
    Parametric,
    SourceGlm,
    IwOnly,
    ImputationOnly,
    DmlBe,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 6] = [
        EstimatorId::Atrel,
        EstimatorId::Parametric,
        EstimatorId::SourceGlm,
        EstimatorId::IwOnly,
        EstimatorId::ImputationOnly,
        EstimatorId::DmlBe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorId::Atrel => "atrel",
            EstimatorId::Parametric => "parametric",
            EstimatorId::SourceGlm => "source_glm",
            EstimatorId::IwOnly => "iw_only",
            EstimatorId::ImputationOnly => "imputation_only",
            EstimatorId::DmlBe => "dml_be",
        }
    }

    pub fn comparator(self) -> Option<ComparatorMethod> {
        match self {
            EstimatorId::Atrel => None,
            EstimatorId::Parametric => Some(ComparatorMethod::ParametricDr),
            EstimatorId::SourceGlm => Some(ComparatorMethod::SourceGlm),
            EstimatorId::IwOnly => Some(ComparatorMethod::IwOnly),
            EstimatorId::ImputationOnly => Some(ComparatorMethod::ImputationOnly),
            EstimatorId::DmlBe => Some(ComparatorMethod::DmlBe),
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorId {
    type Err = AtrelError;
    fn from_str(s: &str) -> Result<Self> {
        EstimatorId::ALL
            .into_iter()
            .find(|e| e.name() == s || (s == "parametric_dr" && *e == EstimatorId::Parametric))
            .ok_or_else(|| AtrelError::Config(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub id: ConfigId,
    pub n: usize,
    pub big_n: usize,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorId>,
    /// Estimators that also get bootstrap intervals.
    pub interval_estimators: Vec<EstimatorId>,
    pub bootstrap_reps: usize,
    pub confidence_level: f64,
    pub folds: usize,
    pub truncation: Truncation,
    pub truth_rows: usize,
}

impl SimConfig {
    pub fn new(id: ConfigId) -> Self {
        Self {
            id,
            n: 500,
            big_n: 1000,
            replications: 100,
            seed: 0,
            estimators: vec![EstimatorId::Atrel, EstimatorId::Parametric],
            interval_estimators: vec![EstimatorId::Atrel, EstimatorId::Parametric],
            bootstrap_reps: 100,
            confidence_level: 0.95,
            folds: 5,
            truncation: Truncation::Clamp,
            truth_rows: TRUTH_ROWS,
        }
    }

    pub fn params(&self) -> GeneratorParams {
        let mut p = GeneratorParams::config(self.id);
        p.truncation = self.truncation;
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(AtrelError::Config("a study needs at least 2 replications".into()));
        }
        if self.estimators.is_empty() {
            return Err(AtrelError::Config("no estimators selected".into()));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(AtrelError::Config("confidence level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Point estimates of the coordinates of β and, when requested, intervals.
pub type EstimateOutput = (Vec<f64>, Option<Vec<(f64, f64)>>);

/// One estimator as seen by a study.
pub trait StudyEstimator: Sync {
    fn name(&self) -> String;
    /// `bootstrap` is `(reps, level)` when intervals are wanted.
    fn estimate(&self, data: &TransferDataset, seed: u64, bootstrap: Option<(usize, f64)>) -> Result<EstimateOutput>;
}

pub struct AtrelStudyEstimator {
    pub spec: NuisanceSpec,
    pub folds: usize,
}

impl StudyEstimator for AtrelStudyEstimator {
    fn name(&self) -> String {
        EstimatorId::Atrel.name().into()
    }

    fn estimate(&self, data: &TransferDataset, seed: u64, bootstrap: Option<(usize, f64)>) -> Result<EstimateOutput> {
        let (reps, level) = bootstrap.unwrap_or((0, 0.95));
        let config = AtrelConfig {
            folds: self.folds,
            loadings: coordinate_loadings(self.spec.d()),
            bootstrap_reps: reps,
            confidence_level: level,
            seed,
            ..AtrelConfig::default()
        };
        let fit = fit_atrel(data, &self.spec, &config)?;
        let intervals = bootstrap.map(|_| fit.intervals().into_iter().map(|iv| iv.expect("bootstrap ran")).collect());
        Ok((fit.estimates(), intervals))
    }
}

pub struct ComparatorStudyEstimator {
    pub id: EstimatorId,
    pub spec: NuisanceSpec,
    pub comparator: ComparatorSpec,
}

impl StudyEstimator for ComparatorStudyEstimator {
    fn name(&self) -> String {
        self.id.name().into()
    }

    fn estimate(&self, data: &TransferDataset, seed: u64, bootstrap: Option<(usize, f64)>) -> Result<EstimateOutput> {
        let mut cs = self.comparator.clone();
        cs.seed = seed;
        let fit = fit_comparator(data, &self.spec, &cs, None)?;
        let Some((reps, level)) = bootstrap else {
            return Ok((fit.beta, None));
        };
        // penalties stay at the values chosen on the original data
        let draws = percentile_bootstrap(data.n(), data.big_n(), reps, seed, MAX_BOOTSTRAP_FAILURE, |b, s, t| {
            let mut cs = cs.clone();
            cs.seed = derive_seed(seed, DOMAIN_BOOTSTRAP, b as u64 + 1);
            Ok(fit_comparator(&data.resample(s, t), &self.spec, &cs, fit.dml.as_ref())?.beta)
        })?;
        Ok((fit.beta, Some(draws.intervals(level))))
    }
}

/// Builds the estimators named in `ids` over `spec`.
pub fn study_estimators(ids: &[EstimatorId], spec: &NuisanceSpec, folds: usize) -> Vec<Box<dyn StudyEstimator>> {
    ids.iter()
        .map(|&id| -> Box<dyn StudyEstimator> {
            match id.comparator() {
                None => Box::new(AtrelStudyEstimator { spec: spec.clone(), folds }),
                Some(method) => {
                    let mut comparator = ComparatorSpec::new(method);
                    comparator.folds = folds;
                    Box::new(ComparatorStudyEstimator {
                        id,
                        spec: spec.clone(),
                        comparator,
                    })
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub estimator: String,
    pub estimates: Option<Vec<f64>>,
    pub intervals: Option<Vec<(f64, f64)>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub estimator: String,
    pub parameter: usize,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// `None` when no intervals were computed.
    pub coverage: Option<f64>,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub average_rmse: f64,
    pub average_abs_bias: f64,
    pub max_coverage_deviance: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyReport {
    pub config: SimConfig,
    pub truth: Vec<f64>,
    pub cells: Vec<StudyCell>,
    pub summaries: Vec<EstimatorSummary>,
    pub records: Vec<ReplicationRecord>,
}

impl SimStudyReport {
    pub fn summary(&self, estimator: &str) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == estimator)
    }

    pub fn cell(&self, estimator: &str, parameter: usize) -> Option<&StudyCell> {
        self.cells.iter().find(|c| c.estimator == estimator && c.parameter == parameter)
    }

    /// `(estimator, parameter, metric, value)` rows; undefined coverage is omitted.
    pub fn long_rows(&self) -> Vec<(String, String, &'static str, f64)> {
        let mut rows = Vec::new();
        for c in &self.cells {
            let p = format!("beta{}", c.parameter);
            let mut push = |m: &'static str, v: f64| rows.push((c.estimator.clone(), p.clone(), m, v));
            push("truth", c.truth);
            push("mean", c.mean);
            push("bias", c.bias);
            push("rmse", c.rmse);
            if let Some(cp) = c.coverage {
                push("coverage", cp);
            }
            push("failures", c.failures as f64);
        }
        for s in &self.summaries {
            let mut push = |m: &'static str, v: f64| rows.push((s.estimator.clone(), "average".to_string(), m, v));
            push("rmse", s.average_rmse);
            push("abs_bias", s.average_abs_bias);
            if let Some(d) = s.max_coverage_deviance {
                push("max_coverage_deviance", d);
            }
        }
        rows
    }
}

/// Aggregates replication records against `truth`.
pub fn summarize(
    config: &SimConfig,
    truth: Vec<f64>,
    names: &[String],
    records: Vec<ReplicationRecord>,
    level: f64,
) -> Result<SimStudyReport> {
    let mut cells = Vec::new();
    let mut summaries = Vec::new();
    for name in names {
        let mine: Vec<&ReplicationRecord> = records.iter().filter(|r| &r.estimator == name).collect();
        let ok: Vec<&ReplicationRecord> = mine.iter().copied().filter(|r| r.estimates.is_some()).collect();
        let failures = mine.len() - ok.len();
        if failures as f64 > MAX_REPLICATION_FAILURE * mine.len() as f64 {
            let first = mine.iter().find_map(|r| r.error.clone()).unwrap_or_default();
            return Err(AtrelError::Inference(format!(
                "{name} failed in {failures} of {} replications (first error: {first})",
                mine.len()
            )));
        }
        let mut rmse_sum = 0.0;
        let mut bias_sum = 0.0;
        let mut max_dev: Option<f64> = None;
        for (j, &t) in truth.iter().enumerate() {
            let values: Vec<f64> = ok.iter().map(|r| r.estimates.as_ref().unwrap()[j]).collect();
            let m = values.len() as f64;
            let bias = values.iter().map(|v| v - t).sum::<f64>() / m;
            let mean = t + bias;
            let rmse = (values.iter().map(|v| (v - t).powi(2)).sum::<f64>() / m).sqrt();
            let with_iv: Vec<(f64, f64)> = ok.iter().filter_map(|r| r.intervals.as_ref().map(|iv| iv[j])).collect();
            let coverage =
                (!with_iv.is_empty()).then(|| with_iv.iter().filter(|(lo, hi)| *lo <= t && t <= *hi).count() as f64 / with_iv.len() as f64);
            if let Some(cp) = coverage {
                let d = (cp - level).abs();
                max_dev = Some(max_dev.map_or(d, |x: f64| x.max(d)));
            }
            rmse_sum += rmse;
            bias_sum += bias.abs();
            cells.push(StudyCell {
                estimator: name.clone(),
                parameter: j,
                truth: t,
                mean,
                bias,
                rmse,
                coverage,
                successes: ok.len(),
                failures,
            });
        }
        let d = truth.len() as f64;
        summaries.push(EstimatorSummary {
            estimator: name.clone(),
            average_rmse: rmse_sum / d,
            average_abs_bias: bias_sum / d,
            max_coverage_deviance: max_dev,
            failures,
        });
    }
    Ok(SimStudyReport {
        config: config.clone(),
        truth,
        cells,
        summaries,
        records,
    })
}

/// Runs `estimators` on `config.replications` fresh draws of `draw`.
pub fn run_study_with<D>(config: &SimConfig, truth: Vec<f64>, estimators: &[Box<dyn StudyEstimator>], draw: D) -> Result<SimStudyReport>
where
    D: Fn(u64) -> Result<SimPopulation> + Sync,
{
    config.validate()?;
    let names: Vec<String> = estimators.iter().map(|e| e.name()).collect();
    let interval_names: Vec<&str> = config.interval_estimators.iter().map(|e| e.name()).collect();
    let per_rep: Vec<Result<Vec<ReplicationRecord>>> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(config.seed, DOMAIN_REPLICATION, r as u64);
            let pop = draw(seed).context(format!("replication {r}"))?;
            Ok(estimators
                .iter()
                .map(|e| {
                    let name = e.name();
                    let bootstrap = (config.bootstrap_reps > 0 && interval_names.contains(&name.as_str()))
                        .then_some((config.bootstrap_reps, config.confidence_level));
                    match e.estimate(&pop.data, seed, bootstrap) {
                        Ok((estimates, intervals)) => ReplicationRecord {
                            replication: r,
                            seed,
                            estimator: name,
                            estimates: Some(estimates),
                            intervals,
                            error: None,
                        },
                        Err(err) => {
                            log::warn!("replication {r}: {name} failed: {err}");
                            ReplicationRecord {
                                replication: r,
                                seed,
                                estimator: name,
                                estimates: None,
                                intervals: None,
                                error: Some(err.to_string()),
                            }
                        }
                    }
                })
                .collect())
        })
        .collect();
    let mut records = Vec::new();
    for r in per_rep {
        records.extend(r?);
    }
    summarize(config, truth, &names, records, config.confidence_level)
}

/// A replicated study of one configuration with the default simulation spec.
pub fn run_study(config: &SimConfig) -> Result<SimStudyReport> {
    run_study_spec(config, &sim_spec())
}

pub fn run_study_spec(config: &SimConfig, spec: &NuisanceSpec) -> Result<SimStudyReport> {
    config.validate()?;
    let params = config.params();
    let truth = truth_oracle(&params, config.truth_rows, config.seed)?;
    let estimators = study_estimators(&config.estimators, spec, config.folds);
    run_study_with(config, truth, &estimators, |seed| {
        gen_population(&params, config.n, config.big_n, seed)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<f64>, Option<f64>);

    impl StudyEstimator for Fixed {
        fn name(&self) -> String {
            "fixed".into()
        }
        fn estimate(&self, _: &TransferDataset, seed: u64, bootstrap: Option<(usize, f64)>) -> Result<EstimateOutput> {
            let jitter = self.1.map_or(0.0, |s| s * ((seed % 7) as f64 - 3.0));
            let est: Vec<f64> = self.0.iter().map(|v| v + jitter).collect();
            let iv = bootstrap.map(|_| est.iter().map(|&v| (v - 0.1, v + 0.1)).collect());
            Ok((est, iv))
        }
    }

    struct Flaky;

    impl StudyEstimator for Flaky {
        fn name(&self) -> String {
            "flaky".into()
        }
        fn estimate(&self, _: &TransferDataset, seed: u64, _: Option<(usize, f64)>) -> Result<EstimateOutput> {
            if seed % 3 == 0 {
                Err(AtrelError::Data("boom".into()))
            } else {
                Ok((vec![0.0], None))
            }
        }
    }

    fn tiny_config() -> SimConfig {
        SimConfig {
            n: 20,
            big_n: 30,
            replications: 12,
            truth_rows: 1000,
            ..SimConfig::new(ConfigId::Iv)
        }
    }

    fn draw(seed: u64) -> Result<SimPopulation> {
        gen_population(&GeneratorParams::config(ConfigId::Iv), 20, 30, seed)
    }

    #[test]
    fn truth_returning_estimator_has_zero_error() {
        let truth = vec![0.1, -0.2, 0.3, 0.4];
        let mut cfg = tiny_config();
        cfg.interval_estimators.clear();
        let est: Vec<Box<dyn StudyEstimator>> = vec![Box::new(Fixed(truth.clone(), None))];
        let rep = run_study_with(&cfg, truth, &est, draw).unwrap();
        for c in &rep.cells {
            assert_eq!((c.bias, c.rmse, c.coverage), (0.0, 0.0, None));
        }
        assert_eq!(rep.summary("fixed").unwrap().max_coverage_deviance, None);
    }

    #[test]
    fn rmse_dominates_bias_and_coverage_is_a_proportion() {
        let truth = vec![0.0, 1.0];
        let mut cfg = tiny_config();
        cfg.interval_estimators = vec![];
        let est: Vec<Box<dyn StudyEstimator>> = vec![Box::new(Fixed(vec![0.05, 1.0], Some(0.04)))];
        let rep = run_study_with(&cfg, truth, &est, draw).unwrap();
        for c in &rep.cells {
            assert!(c.rmse * c.rmse >= c.bias * c.bias);
        }
    }

    #[test]
    fn failing_estimator_rejects_study() {
        let est: Vec<Box<dyn StudyEstimator>> = vec![Box::new(Flaky)];
        let err = run_study_with(&tiny_config(), vec![0.0], &est, draw).unwrap_err();
        assert!(matches!(err, AtrelError::Inference(_)), "{err}");
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in EstimatorId::ALL {
            assert_eq!(e.name().parse::<EstimatorId>().unwrap(), e);
        }
    }

    #[test]
    fn parametric_study_is_reproducible() {
        let mut cfg = tiny_config();
        cfg.n = 200;
        cfg.big_n = 300;
        cfg.replications = 4;
        cfg.bootstrap_reps = 5;
        cfg.estimators = vec![EstimatorId::Parametric, EstimatorId::SourceGlm];
        let a = run_study(&cfg).unwrap();
        assert_eq!(a, run_study(&cfg).unwrap());
        let cp = a.cell("parametric", 1).unwrap().coverage.unwrap();
        assert!((0.0..=1.0).contains(&cp));
        assert!(a.cell("source_glm", 0).unwrap().coverage.is_none());
    }
}
