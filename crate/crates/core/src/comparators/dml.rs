//! Double machine learning with a spline basis expansion and elastic-net
//! nuisance models, cross-fitted over source folds.

use serde::{Deserialize, Serialize};

use super::enet::{cv_elastic_net, elastic_net_path, lambda_path, ElasticNetFit, ElasticNetOptions};
use super::{solve_augmented, without_intercept, ComparatorSpec};
use crate::error::{AtrelError, Result, ResultExt};
use crate::estimator::kfold_partition;
use crate::nuisance::Design;
use crate::numerics::basis::NaturalSplineKnots;
use crate::numerics::{Link, Rows};
use crate::rng::derive_seed;
use crate::rng::DOMAIN_COMPARATOR;

/// Raw covariates plus natural splines with `df` columns per covariate,
/// optionally with the products of spline columns from every pair of
/// distinct covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplineExpansion {
    pub df: usize,
    pub interactions: bool,
}

impl Default for SplineExpansion {
    fn default() -> Self {
        Self { df: 4, interactions: true }
    }
}

impl SplineExpansion {
    /// The identity expansion: raw columns, no interactions.
    pub fn raw() -> Self {
        Self {
            df: 1,
            interactions: false,
        }
    }

    /// Places knots per column of `x`. Columns whose quantiles do not give
    /// distinct knots enter linearly.
    pub fn fit(&self, x: &Rows) -> Result<FittedExpansion> {
        if self.df == 0 {
            return Err(AtrelError::Config("expansion needs at least one column per covariate".into()));
        }
        let knots = (0..x.ncols())
            .map(|j| {
                if self.df == 1 {
                    None
                } else {
                    NaturalSplineKnots::from_quantiles(&x.column(j), self.df).ok()
                }
            })
            .collect();
        Ok(FittedExpansion {
            knots,
            interactions: self.interactions,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedExpansion {
    knots: Vec<Option<NaturalSplineKnots>>,
    interactions: bool,
}

impl FittedExpansion {
    fn widths(&self) -> Vec<usize> {
        self.knots.iter().map(|k| k.as_ref().map_or(1, |k| k.df())).collect()
    }

    pub fn n_columns(&self) -> usize {
        let w = self.widths();
        let main: usize = w.iter().sum::<usize>() + self.knots.iter().filter(|k| k.is_some()).count();
        let mut pairs = 0;
        if self.interactions {
            for a in 0..w.len() {
                for b in a + 1..w.len() {
                    pairs += w[a] * w[b];
                }
            }
        }
        main + pairs
    }

    pub fn transform(&self, x: &Rows) -> Rows {
        let widths = self.widths();
        let total = self.n_columns();
        let mut data = Vec::with_capacity(x.nrows() * total);
        let mut blocks: Vec<Vec<f64>> = widths.iter().map(|&w| vec![0.0; w]).collect();
        for row in x.iter_rows() {
            // spline blocks span linear functions, but the penalty treats the raw column separately
            for (j, k) in self.knots.iter().enumerate() {
                if k.is_some() {
                    data.push(row[j]);
                }
            }
            for (j, k) in self.knots.iter().enumerate() {
                match k {
                    Some(k) => k.eval_into(row[j], &mut blocks[j]),
                    None => blocks[j][0] = row[j],
                }
            }
            for b in &blocks {
                data.extend_from_slice(b);
            }
            if self.interactions {
                for a in 0..blocks.len() {
                    for b in a + 1..blocks.len() {
                        for u in &blocks[a] {
                            data.extend(blocks[b].iter().map(|v| u * v));
                        }
                    }
                }
            }
        }
        Rows::new(total, data).expect("consistent width")
    }
}

/// Penalties chosen by cross-validation, reusable across resamples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmlTunings {
    pub selection_path: Vec<f64>,
    pub selection_lambda: f64,
    pub imputation_path: Vec<f64>,
    pub imputation_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmlFit {
    pub beta: Vec<f64>,
    pub tunings: DmlTunings,
    pub expansion_columns: usize,
}

/// Fits the path from its start down to `lambda` and keeps the last fit.
fn fit_at(x: &Rows, y: &[f64], link: Link, mix: f64, path: &[f64], lambda: f64, opts: &ElasticNetOptions) -> Result<ElasticNetFit> {
    let mut sub: Vec<f64> = path.iter().copied().filter(|&l| l > lambda).collect();
    sub.push(lambda);
    Ok(elastic_net_path(x, y, link, mix, &sub, None, opts)?.pop().expect("nonempty path"))
}

fn penalty_path(x: &Rows, y: &[f64], link: Link, cs: &ComparatorSpec) -> Result<Vec<f64>> {
    if !cs.penalty_path.is_empty() {
        let mut p = cs.penalty_path.clone();
        if p.iter().any(|l| !(*l >= 0.0)) {
            return Err(AtrelError::Config("penalty path entries must be nonnegative".into()));
        }
        p.sort_by(|a, b| b.total_cmp(a));
        return Ok(p);
    }
    lambda_path(x, y, link, cs.penalty_mix, None, cs.path_length, cs.path_min_ratio)
}

fn select(x: &Rows, y: &[f64], link: Link, cs: &ComparatorSpec, stream: u64) -> Result<(Vec<f64>, f64)> {
    let path = penalty_path(x, y, link, cs)?;
    if path.len() == 1 {
        return Ok((path.clone(), path[0]));
    }
    let cv = cv_elastic_net(
        x,
        y,
        link,
        cs.penalty_mix,
        &path,
        cs.cv_folds,
        derive_seed(cs.seed, DOMAIN_COMPARATOR, stream),
        &ElasticNetOptions::screening(),
    )?;
    Ok((path, cv.lambda))
}

/// Cross-fitted doubly robust estimate with elastic-net nuisances on the
/// expanded `ψ` and `φ`. `frozen` skips penalty selection.
pub fn fit_dml_be(design: &Design, link: Link, cs: &ComparatorSpec, frozen: Option<&DmlTunings>) -> Result<DmlFit> {
    let (n, big_n) = (design.n(), design.big_n());
    let opts = ElasticNetOptions::default();
    let psi = without_intercept(&design.src.psi.stack(&design.tgt.psi)?);
    let phi_src = without_intercept(&design.src.phi);
    let phi_tgt = without_intercept(&design.tgt.phi);
    let s_x = cs.expansion.fit(&psi)?.transform(&psi);
    let m_expansion = cs.expansion.fit(&phi_src.stack(&phi_tgt)?)?;
    let m_src = m_expansion.transform(&phi_src);
    let m_tgt = m_expansion.transform(&phi_tgt);
    let mut s = vec![1.0; n];
    s.resize(n + big_n, 0.0);

    let tunings = match frozen {
        Some(t) => t.clone(),
        None => {
            let (selection_path, selection_lambda) = select(&s_x, &s, Link::Logit, cs, 1).context("selection model penalty")?;
            let (imputation_path, imputation_lambda) = select(&m_src, &design.y, link, cs, 2).context("imputation model penalty")?;
            DmlTunings {
                selection_path,
                selection_lambda,
                imputation_path,
                imputation_lambda,
            }
        }
    };

    let folds = kfold_partition(n, cs.folds, derive_seed(cs.seed, DOMAIN_COMPARATOR, 3))?;
    let mut omega = vec![0.0; n];
    let mut m_eval = vec![0.0; n];
    let mut m_target = vec![0.0; big_n];
    let inv_k = 1.0 / folds.len() as f64;
    for (k, eval) in folds.iter().enumerate() {
        let mut in_eval = vec![false; n];
        eval.iter().for_each(|&i| in_eval[i] = true);
        let train: Vec<usize> = (0..n).filter(|&i| !in_eval[i]).collect();
        let mut pooled_idx = train.clone();
        pooled_idx.extend(n..n + big_n);
        let s_fit = fit_at(
            &s_x.select(&pooled_idx),
            &pooled_idx.iter().map(|&i| s[i]).collect::<Vec<_>>(),
            Link::Logit,
            cs.penalty_mix,
            &tunings.selection_path,
            tunings.selection_lambda,
            &opts,
        )
        .context(format!("selection model, fold {k}"))?;
        let share = train.len() as f64 / big_n as f64;
        for &i in eval {
            omega[i] = share * (-s_fit.linear_predictor(s_x.row(i))).exp();
        }
        let y_train: Vec<f64> = train.iter().map(|&i| design.y[i]).collect();
        let m_fit = fit_at(
            &m_src.select(&train),
            &y_train,
            link,
            cs.penalty_mix,
            &tunings.imputation_path,
            tunings.imputation_lambda,
            &opts,
        )
        .context(format!("imputation model, fold {k}"))?;
        for &i in eval {
            m_eval[i] = link.eval(m_fit.linear_predictor(m_src.row(i)));
        }
        for (j, acc) in m_target.iter_mut().enumerate() {
            *acc += inv_k * link.eval(m_fit.linear_predictor(m_tgt.row(j)));
        }
    }
    let beta = solve_augmented(design, link, &omega, &m_eval, &m_target)?;
    Ok(DmlFit {
        beta,
        tunings,
        expansion_columns: s_x.ncols(),
    })
}
