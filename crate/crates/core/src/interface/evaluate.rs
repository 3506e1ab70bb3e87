//! End-to-end metric comparison on simulated transfer data where the
//! validation coefficients are known from a large labeled target sample.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_metrics, EvaluationInput, MetricReport, Validation};
use crate::comparators::{fit_source_glm, ComparatorMethod};
use crate::error::{Result, ResultExt};
use crate::estimator::{fit_atrel, AtrelConfig};
use crate::nuisance::expand_terms;
use crate::numerics::glm::fit_glm;
use crate::numerics::{Link, NewtonOptions};
use crate::rng::{derive_seed, DOMAIN_REPLICATION, DOMAIN_TRUTH};
use crate::simbench::{gen_population, sim_spec, ConfigId, GeneratorParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferEvaluationConfig {
    pub config: ConfigId,
    pub n: usize,
    pub big_n: usize,
    pub replications: usize,
    /// Labeled target rows behind `β_valid`.
    pub validation_rows: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TransferEvaluationConfig {
    fn default() -> Self {
        Self {
            config: ConfigId::I,
            n: 500,
            big_n: 1000,
            replications: 100,
            validation_rows: 1_000_000,
            folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferEvaluation {
    pub beta_valid: Vec<f64>,
    pub atrel: Vec<MetricReport>,
    pub source: Vec<MetricReport>,
    /// Replications where ATReL has the smaller RMSPE.
    pub atrel_wins: usize,
}

/// Each replication fits ATReL and the source-only GLM, then scores both
/// against `β_valid`, the logistic fit of observed labels on `A` over a
/// separately drawn target sample. The AUC uses the replication's own
/// target labels.
pub fn transfer_evaluation(cfg: &TransferEvaluationConfig) -> Result<TransferEvaluation> {
    let params = GeneratorParams::config(cfg.config);
    let spec = sim_spec();
    let held_out = gen_population(&params, 1, cfg.validation_rows, derive_seed(cfg.seed, DOMAIN_TRUTH, 2))?;
    let valid_a = expand_terms(&spec.a_columns, &held_out.data.target_x);
    let beta_valid = fit_glm(&valid_a, &held_out.target_y, None, Link::Logit, &NewtonOptions::with_tol(1e-12)).context("validation fit")?;
    let d = spec.d();
    let results = (0..cfg.replications)
        .into_par_iter()
        .map(|r| -> Result<(MetricReport, MetricReport)> {
            let seed = derive_seed(cfg.seed, DOMAIN_REPLICATION, r as u64);
            let pop = gen_population(&params, cfg.n, cfg.big_n, seed)?;
            let mut config = AtrelConfig::coordinates(d);
            config.folds = cfg.folds;
            config.bootstrap_reps = 0;
            config.seed = seed;
            let atrel = fit_atrel(&pop.data, &spec, &config)?.estimates();
            let source = fit_source_glm(&spec.design(&pop.data)?, spec.link).context(ComparatorMethod::SourceGlm.name())?;
            let target_a = expand_terms(&spec.a_columns, &pop.data.target_x);
            let score = |beta: Vec<f64>| {
                let input = EvaluationInput {
                    beta_hat: beta,
                    beta_valid: beta_valid.clone(),
                    target_a: target_a.clone(),
                    validation: Some(Validation {
                        a: target_a.clone(),
                        labels: pop.target_y.clone(),
                    }),
                };
                evaluate_metrics(&input, spec.link)
            };
            Ok((score(atrel)?, score(source)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (atrel, source): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let atrel_wins = atrel.iter().zip(&source).filter(|(a, s)| a.rmspe < s.rmspe).count();
    Ok(TransferEvaluation {
        beta_valid,
        atrel,
        source,
        atrel_wins,
    })
}
