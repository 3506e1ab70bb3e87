//! Two Gaussian designs in which exactly one of the two nuisance models of
//! the estimator is correctly specified.
//!
//! Covariates are `X₁..X₄`, the working model uses `A = (1, X₁, X₂, X₃)`,
//! both nuisance models use `ψ = φ = X` and `Z = X₁`. Source covariates are
//! standard normal in both designs.
//!
//! * [`RobustnessCase::RatioCorrect`]: the target shifts the means of `X₂`
//!   and `X₃` and shifts and shrinks `X₁`, so the log density ratio is linear
//!   in `X` plus a quadratic in `Z`. The outcome carries an `X₂X₃`
//!   interaction that no imputation model in the family can represent.
//! * [`RobustnessCase::ImputationCorrect`]: the outcome is logistic in `X`
//!   plus a sine of `Z`. The target correlates `X₂` with `X₄`, which puts an
//!   `X₂X₄` term into the log density ratio.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::generator::SimPopulation;
use crate::data::TransferDataset;
use crate::error::{AtrelError, Result, ResultExt};
use crate::nuisance::{expand_terms, NuisanceSpec, Term};
use crate::numerics::glm::fit_glm;
use crate::numerics::link::logistic;
use crate::numerics::{Link, NewtonOptions, Rows};
use crate::rng::{derive_seed, unit_rng, DOMAIN_TRUTH};

const P: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustnessCase {
    RatioCorrect,
    ImputationCorrect,
}

impl RobustnessCase {
    pub fn name(self) -> &'static str {
        match self {
            RobustnessCase::RatioCorrect => "ratio_correct",
            RobustnessCase::ImputationCorrect => "imputation_correct",
        }
    }

    /// `P(Y = 1 | x)`.
    pub fn outcome_probability(self, x: &[f64]) -> f64 {
        match self {
            RobustnessCase::RatioCorrect => logistic(0.2 + 0.5 * x[0] - 0.5 * x[1] + 0.5 * x[2] + x[1] * x[2]),
            RobustnessCase::ImputationCorrect => logistic(0.2 + 0.5 * x[0] + 0.5 * x[1] - 0.5 * x[2] + x[3] + 0.8 * (2.0 * x[0]).sin()),
        }
    }

    fn draw_target(self, rng: &mut impl Rng) -> [f64; P] {
        let mut e = [0.0; P];
        e.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        match self {
            RobustnessCase::RatioCorrect => [0.3 + 0.8 * e[0], e[1] + 0.5, e[2] + 0.5, e[3]],
            RobustnessCase::ImputationCorrect => {
                let rho: f64 = 0.6;
                [e[0] + 0.3, e[1], e[2], rho * e[1] + (1.0 - rho * rho).sqrt() * e[3]]
            }
        }
    }

    /// The estimator specification the design is built around.
    pub fn spec(self) -> NuisanceSpec {
        let mut spec = NuisanceSpec::linear(P, vec![0], Link::Logit);
        spec.a_columns = (0..3).map(Term::Column).collect();
        spec
    }
}

impl std::str::FromStr for RobustnessCase {
    type Err = AtrelError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio_correct" => Ok(RobustnessCase::RatioCorrect),
            "imputation_correct" => Ok(RobustnessCase::ImputationCorrect),
            other => Err(AtrelError::Config(format!("unknown robustness design '{other}'"))),
        }
    }
}

pub fn gen_robustness(case: RobustnessCase, n: usize, big_n: usize, seed: u64) -> Result<SimPopulation> {
    let mut rng = unit_rng(seed, 0, 0);
    let mut rng_y = unit_rng(seed, 0, 1);
    let mut sx = Vec::with_capacity(n * P);
    let mut sy = Vec::with_capacity(n);
    let mut smu = Vec::with_capacity(n);
    for _ in 0..n {
        let x: [f64; P] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let mu = case.outcome_probability(&x);
        sy.push(f64::from(rng_y.gen::<f64>() < mu));
        smu.push(mu);
        sx.extend_from_slice(&x);
    }
    let mut tx = Vec::with_capacity(big_n * P);
    let mut ty = Vec::with_capacity(big_n);
    let mut tmu = Vec::with_capacity(big_n);
    for _ in 0..big_n {
        let x = case.draw_target(&mut rng);
        let mu = case.outcome_probability(&x);
        ty.push(f64::from(rng_y.gen::<f64>() < mu));
        tmu.push(mu);
        tx.extend_from_slice(&x);
    }
    let names = (1..=P).map(|j| format!("X{j}")).collect();
    Ok(SimPopulation {
        data: TransferDataset::new(names, Rows::new(P, sx)?, sy, Rows::new(P, tx)?)?,
        target_y: ty,
        source_mu: smu,
        target_mu: tmu,
    })
}

/// Target working-model β from `rows` target draws.
pub fn robustness_truth(case: RobustnessCase, rows: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = unit_rng(derive_seed(seed, DOMAIN_TRUTH, 1), 0, 0);
    let mut x = Vec::with_capacity(rows * P);
    let mut mu = Vec::with_capacity(rows);
    for _ in 0..rows {
        let t = case.draw_target(&mut rng);
        mu.push(case.outcome_probability(&t));
        x.extend_from_slice(&t);
    }
    let a = expand_terms(&case.spec().a_columns, &Rows::new(P, x)?);
    fit_glm(&a, &mu, None, Link::Logit, &NewtonOptions::with_tol(1e-12)).context("robustness truth")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_moments() {
        let mut rng = unit_rng(1, 0, 0);
        let draws: Vec<[f64; P]> = (0..100_000)
            .map(|_| RobustnessCase::ImputationCorrect.draw_target(&mut rng))
            .collect();
        let m = |j: usize| draws.iter().map(|x| x[j]).sum::<f64>() / 1e5;
        let c24 = draws.iter().map(|x| (x[1] - m(1)) * (x[3] - m(3))).sum::<f64>() / 1e5;
        assert!((c24 - 0.6).abs() < 0.01);
        assert!((m(0) - 0.3).abs() < 0.01);
        let mut rng = unit_rng(2, 0, 0);
        let draws: Vec<[f64; P]> = (0..100_000).map(|_| RobustnessCase::RatioCorrect.draw_target(&mut rng)).collect();
        let var1 = draws.iter().map(|x| (x[0] - 0.3).powi(2)).sum::<f64>() / 1e5;
        assert!((var1 - 0.64).abs() < 0.01);
    }

    #[test]
    fn sizes_and_determinism() {
        let a = gen_robustness(RobustnessCase::RatioCorrect, 30, 40, 5).unwrap();
        assert_eq!((a.data.n(), a.data.big_n()), (30, 40));
        assert_eq!(a, gen_robustness(RobustnessCase::RatioCorrect, 30, 40, 5).unwrap());
    }
}
