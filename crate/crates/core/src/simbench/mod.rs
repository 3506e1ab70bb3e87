//! The four simulation configurations and replicated studies over them.

pub mod generator;
pub mod robustness;
pub mod study;

pub use generator::{features, gen_covariates, gen_population, ConfigId, GeneratorParams, SimPopulation, Truncation, ZTerm};
pub use robustness::{gen_robustness, robustness_truth, RobustnessCase};
pub use study::{
    run_study, run_study_spec, run_study_with, study_estimators, EstimatorId, SimConfig, SimStudyReport, StudyCell, StudyEstimator,
};

use crate::error::{Result, ResultExt};
use crate::nuisance::{expand_terms, NuisanceSpec, Term};
use crate::numerics::glm::fit_glm;
use crate::numerics::{Link, NewtonOptions};
use crate::rng::{derive_seed, DOMAIN_TRUTH};

/// Target rows drawn for the population value of `β`.
pub const TRUTH_ROWS: usize = 1_000_000;

/// `A = (1, X₁, X₂, X₃)`, `ψ = φ = X`, `Z = X₁`, logistic link.
pub fn sim_spec() -> NuisanceSpec {
    let mut spec = NuisanceSpec::linear(generator::P, vec![0], Link::Logit);
    spec.a_columns = (0..3).map(Term::Column).collect();
    spec
}

/// Population `β` of the working model on the target: the logistic GLM of
/// `P(Y = 1 | X)` on `A` over `rows` fresh target draws.
pub fn truth_oracle(params: &GeneratorParams, rows: usize, seed: u64) -> Result<Vec<f64>> {
    let pop = gen_population(params, 1, rows, derive_seed(seed, DOMAIN_TRUTH, 0)).context("truth oracle draw")?;
    let spec = sim_spec();
    let a = expand_terms(&spec.a_columns, &pop.data.target_x);
    fit_glm(&a, &pop.target_mu, None, Link::Logit, &NewtonOptions::with_tol(1e-12)).context("truth oracle fit")
}
