//! Cross-fitted doubly robust estimation of `cᵀβ₀` with bootstrap intervals.

pub mod bootstrap;
mod diagnostic;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bootstrap::{percentile_bootstrap, percentile_interval, resample_indices, BootstrapDraws};
pub use diagnostic::{dr_residual_diagnostic, DrDiagnostic};

use crate::data::TransferDataset;
use crate::error::{AtrelError, Result, ResultExt};
use crate::nuisance::prelim::dr_rhs;
use crate::nuisance::{
    calibrate_fold, fit_preliminary, select_tunings, solve_preliminary_beta, CalibrationBackend, CalibrationDiagnostics,
    CalibrationSettings, Design, FoldInput, FoldValues, NuisanceSpec, PrelimValues, PreliminaryFit, SplitRule, Tunings,
};
use crate::numerics::glm::{mean_residual, solve_mean_equation};
use crate::numerics::solve::sup_norm;
use crate::numerics::{Link, NewtonOptions};
use crate::rng::{derive_seed, unit_rng, DOMAIN_BOOTSTRAP, DOMAIN_FOLDS, DOMAIN_TUNING};

/// Resample failures tolerated before the bootstrap is declared failed.
pub const MAX_BOOTSTRAP_FAILURE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtrelConfig {
    pub folds: usize,
    /// Loading vectors `c`; normalized to unit length before use.
    pub loadings: Vec<Vec<f64>>,
    pub bootstrap_reps: usize,
    pub confidence_level: f64,
    pub seed: u64,
    /// Overrides the backend named in the nuisance spec.
    pub backend: Option<CalibrationBackend>,
    /// Skips tuning selection when set.
    pub tunings: Option<Tunings>,
}

impl Default for AtrelConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            loadings: vec![],
            bootstrap_reps: 200,
            confidence_level: 0.95,
            seed: 0,
            backend: None,
            tunings: None,
        }
    }
}

impl AtrelConfig {
    /// One coordinate loading per entry of β.
    pub fn coordinates(d: usize) -> Self {
        Self {
            loadings: coordinate_loadings(d),
            ..Self::default()
        }
    }

    pub fn validate(&self, d: usize) -> Result<Vec<Vec<f64>>> {
        if self.folds < 2 {
            return Err(AtrelError::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(AtrelError::Config(format!(
                "confidence level {} outside (0, 1)",
                self.confidence_level
            )));
        }
        if self.loadings.is_empty() {
            return Err(AtrelError::Config("no loading vectors given".into()));
        }
        self.loadings.iter().map(|c| normalize_loading(c, d)).collect()
    }
}

pub fn coordinate_loadings(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|j| {
            let mut c = vec![0.0; d];
            c[j] = 1.0;
            c
        })
        .collect()
}

pub fn normalize_loading(c: &[f64], d: usize) -> Result<Vec<f64>> {
    if c.len() != d {
        return Err(AtrelError::Config(format!("loading has {} entries, β has {d}", c.len())));
    }
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(AtrelError::Config("loading vector must be nonzero and finite".into()));
    }
    Ok(c.iter().map(|v| v / norm).collect())
}

/// Random split of `0..n` into `k` sets whose sizes differ by at most one.
pub fn kfold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || n < k {
        return Err(AtrelError::Config(format!("cannot split {n} rows into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut unit_rng(seed, DOMAIN_FOLDS, 0));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (t, i) in idx.into_iter().enumerate() {
        folds[t % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut keep = vec![true; n];
    fold.iter().for_each(|&i| keep[i] = false);
    (0..n).filter(|&i| keep[i]).collect()
}

/// Loading-free state of one fold: preliminary fits on the training part and
/// their values where the calibration needs them.
#[derive(Debug, Clone)]
pub struct FoldPrelim {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub fit: PreliminaryFit,
    pub train_values: PrelimValues,
    pub eval_values: PrelimValues,
    pub target_values: PrelimValues,
    pub beta_tilde: Vec<f64>,
}

pub fn prepare_folds(
    design: &Design,
    tunings: &Tunings,
    link: Link,
    folds: &[Vec<usize>],
    opts: &NewtonOptions,
) -> Result<Vec<FoldPrelim>> {
    let settings = tunings.prelim_settings(link);
    folds
        .iter()
        .enumerate()
        .map(|(k, eval)| {
            let train = complement(design.n(), eval);
            let train_pop = design.src.select(&train);
            let eval_pop = design.src.select(eval);
            let y_train: Vec<f64> = train.iter().map(|&i| design.y[i]).collect();
            let fit = fit_preliminary(&train_pop, &y_train, &design.tgt, &settings, opts).context(format!("fold {k}"))?;
            let train_values = fit.values(&train_pop)?;
            let eval_values = fit.values(&eval_pop)?;
            let target_values = fit.values(&design.tgt)?;
            let beta_tilde = solve_preliminary_beta(
                &train_pop.a,
                &y_train,
                &train_values.omega,
                &train_values.m,
                &design.tgt.a,
                &target_values.m,
                link,
                None,
                opts,
            )
            .context(format!("preliminary β, fold {k}"))?
            .x;
            Ok(FoldPrelim {
                train,
                eval: eval.clone(),
                fit,
                train_values,
                eval_values,
                target_values,
                beta_tilde,
            })
        })
        .collect()
}

/// Right-hand side of the cross-fitted equation: the fold-wise source
/// augmentation over all source rows plus the target term with `m̂` averaged
/// over folds.
pub fn cross_fitted_rhs(design: &Design, folds: &[FoldPrelim], values: &[FoldValues]) -> Result<Vec<f64>> {
    let n = design.n();
    let big_n = design.big_n();
    let mut omega = vec![0.0; n];
    let mut m_src = vec![0.0; n];
    let mut m_tgt = vec![0.0; big_n];
    let inv_k = 1.0 / folds.len() as f64;
    for (f, v) in folds.iter().zip(values) {
        for (t, &i) in f.eval.iter().enumerate() {
            omega[i] = v.omega_eval[t];
            m_src[i] = v.m_eval[t];
        }
        for (acc, m) in m_tgt.iter_mut().zip(&v.m_target) {
            *acc += inv_k * m;
        }
    }
    dr_rhs(&design.src.a, &design.y, &omega, &m_src, 1.0 / n as f64, &design.tgt.a, &m_tgt)
}

/// Residual of the cross-fitted equation at `beta`.
pub fn cross_fitted_residual(design: &Design, link: Link, folds: &[FoldPrelim], values: &[FoldValues], beta: &[f64]) -> Result<Vec<f64>> {
    let rhs = cross_fitted_rhs(design, folds, values)?;
    let w = vec![1.0 / design.big_n() as f64; design.big_n()];
    Ok(mean_residual(&design.tgt.a, &w, link, &rhs, beta))
}

/// Solves the cross-fitted equation for β starting from `x0`.
pub fn solve_cross_fitted(
    design: &Design,
    link: Link,
    folds: &[FoldPrelim],
    values: &[FoldValues],
    x0: &[f64],
    opts: &NewtonOptions,
) -> Result<crate::numerics::NewtonSolution> {
    let rhs = cross_fitted_rhs(design, folds, values)?;
    let w = vec![1.0 / design.big_n() as f64; design.big_n()];
    solve_mean_equation(&design.tgt.a, &w, link, &rhs, x0, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub eval_size: usize,
    pub beta_tilde: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    pub split_rule: SplitRule,
    pub kappa_threshold: f64,
    /// Training-source and target rows in each κ group.
    pub group_sizes: [[usize; 2]; 2],
    pub weight_residual: f64,
    pub imputation_residual: f64,
    pub diagnostics: CalibrationDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingEstimate {
    pub loading: Vec<f64>,
    pub beta: Vec<f64>,
    /// `cᵀβ̂`.
    pub estimate: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub interval: Option<(f64, f64)>,
    /// Set when the point estimate falls outside its percentile interval.
    pub outside_interval: bool,
    pub folds: Vec<FoldSummary>,
    pub diagnostics: CalibrationDiagnostics,
    pub bias_terms: DrDiagnostic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub reps: usize,
    pub failures: usize,
    pub failure_fraction: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtrelEstimate {
    pub loadings: Vec<LoadingEstimate>,
    pub tunings: Tunings,
    pub folds: usize,
    pub backend: CalibrationBackend,
    pub link: Link,
    pub bootstrap: Option<BootstrapSummary>,
}

impl AtrelEstimate {
    pub fn estimates(&self) -> Vec<f64> {
        self.loadings.iter().map(|l| l.estimate).collect()
    }

    pub fn intervals(&self) -> Vec<Option<(f64, f64)>> {
        self.loadings.iter().map(|l| l.interval).collect()
    }
}

/// Point estimation for fixed tunings and fold seed; everything except the bootstrap.
pub fn fit_point(
    design: &Design,
    spec: &NuisanceSpec,
    backend: CalibrationBackend,
    loadings: &[Vec<f64>],
    tunings: &Tunings,
    folds: usize,
    fold_seed: u64,
) -> Result<Vec<LoadingEstimate>> {
    let opts = NewtonOptions::default();
    let partition = kfold_partition(design.n(), folds, fold_seed)?;
    let prelims = prepare_folds(design, tunings, spec.link, &partition, &opts)?;
    let settings = CalibrationSettings {
        link: spec.link,
        backend,
        kernel: tunings.kernel()?,
        median_split: spec.median_split_intercept,
        exact_point_limit: spec.exact_point_limit,
        grid_points: spec.grid_points,
        min_group_fraction: spec.min_group_fraction,
        opts,
    };
    let d = design.src.a.ncols();
    let mut x0 = vec![0.0; d];
    for f in &prelims {
        for (x, b) in x0.iter_mut().zip(&f.beta_tilde) {
            *x += b / prelims.len() as f64;
        }
    }
    loadings
        .par_iter()
        .enumerate()
        .map(|(l, c)| fit_loading(design, &prelims, c, &settings, &x0, &opts).context(format!("loading {l}")))
        .collect()
}

fn fit_loading(
    design: &Design,
    prelims: &[FoldPrelim],
    c: &[f64],
    settings: &CalibrationSettings,
    x0: &[f64],
    opts: &NewtonOptions,
) -> Result<LoadingEstimate> {
    let mut values = Vec::with_capacity(prelims.len());
    let mut summaries = Vec::with_capacity(prelims.len());
    let mut diagnostics = CalibrationDiagnostics::default();
    for (k, f) in prelims.iter().enumerate() {
        let input = FoldInput {
            design,
            train: &f.train,
            eval: &f.eval,
            prelim: &f.fit,
            train_values: &f.train_values,
            eval_values: &f.eval_values,
            target_values: &f.target_values,
            beta: &f.beta_tilde,
        };
        let (nuisance, v) = calibrate_fold(&input, c, settings).context(format!("fold {k}"))?;
        diagnostics.merge(&nuisance.diagnostics);
        summaries.push(FoldSummary {
            eval_size: f.eval.len(),
            beta_tilde: f.beta_tilde.clone(),
            alpha_hat: nuisance.alpha_hat.clone(),
            gamma_hat: nuisance.gamma_hat.clone(),
            split_rule: nuisance.partition.rule,
            kappa_threshold: nuisance.partition.threshold,
            group_sizes: nuisance.group_sizes,
            weight_residual: f.fit.weight_residual,
            imputation_residual: f.fit.imputation_residual,
            diagnostics: nuisance.diagnostics.clone(),
        });
        values.push(v);
    }
    let sol = solve_cross_fitted(design, settings.link, prelims, &values, x0, opts).context("final equation")?;
    let bias_terms = dr_residual_diagnostic(design, settings.link, &sol.x, prelims, &values)?;
    Ok(LoadingEstimate {
        loading: c.to_vec(),
        estimate: c.iter().zip(&sol.x).map(|(a, b)| a * b).sum(),
        residual_norm: sup_norm(&bias_terms.residual),
        iterations: sol.iterations,
        beta: sol.x,
        interval: None,
        outside_interval: false,
        folds: summaries,
        diagnostics,
        bias_terms,
    })
}

fn resolve(data: &TransferDataset, spec: &NuisanceSpec, config: &AtrelConfig) -> Result<(Design, Vec<Vec<f64>>, CalibrationBackend)> {
    spec.validate(data.source_x.ncols())?;
    let design = spec.design(data)?;
    let loadings = config.validate(design.src.a.ncols())?;
    if design.n() < config.folds {
        return Err(AtrelError::Config(format!(
            "{} source rows cannot fill {} folds",
            design.n(),
            config.folds
        )));
    }
    let backend = config.backend.unwrap_or(spec.calibration_backend);
    Ok((design, loadings, backend))
}

fn resolve_tunings(design: &Design, spec: &NuisanceSpec, config: &AtrelConfig, loadings: &[Vec<f64>]) -> Result<Tunings> {
    match &config.tunings {
        Some(t) => Ok(t.clone()),
        None => {
            let mut spec = spec.clone();
            spec.calibration_backend = config.backend.unwrap_or(spec.calibration_backend);
            select_tunings(design, &spec, loadings, derive_seed(config.seed, DOMAIN_TUNING, 0)).context("tuning")
        }
    }
}

/// Bootstrap draws of `cᵀβ̂` for every loading; tunings stay at `tunings`.
fn bootstrap_draws(
    design: &Design,
    spec: &NuisanceSpec,
    backend: CalibrationBackend,
    loadings: &[Vec<f64>],
    tunings: &Tunings,
    config: &AtrelConfig,
) -> Result<BootstrapDraws> {
    percentile_bootstrap(
        design.n(),
        design.big_n(),
        config.bootstrap_reps,
        config.seed,
        MAX_BOOTSTRAP_FAILURE,
        |b, src, tgt| {
            let resampled = design.resample(src, tgt);
            let fold_seed = derive_seed(config.seed, DOMAIN_BOOTSTRAP, b as u64 + 1);
            let fits = fit_point(&resampled, spec, backend, loadings, tunings, config.folds, fold_seed)?;
            Ok(fits.into_iter().map(|f| f.estimate).collect())
        },
    )
}

/// Full estimation: tuning, cross-fitted point estimates and, when
/// `bootstrap_reps > 0`, percentile intervals.
pub fn fit_atrel(data: &TransferDataset, spec: &NuisanceSpec, config: &AtrelConfig) -> Result<AtrelEstimate> {
    let (design, loadings, backend) = resolve(data, spec, config)?;
    let tunings = resolve_tunings(&design, spec, config, &loadings)?;
    let mut fits = fit_point(&design, spec, backend, &loadings, &tunings, config.folds, config.seed)?;
    let mut summary = None;
    if config.bootstrap_reps > 0 {
        let draws = bootstrap_draws(&design, spec, backend, &loadings, &tunings, config)?;
        let intervals = draws.intervals(config.confidence_level);
        for (f, iv) in fits.iter_mut().zip(intervals) {
            f.outside_interval = !(iv.0 <= f.estimate && f.estimate <= iv.1);
            if f.outside_interval {
                log::warn!("estimate {} lies outside its bootstrap interval {:?}", f.estimate, iv);
            }
            f.interval = Some(iv);
        }
        summary = Some(BootstrapSummary {
            reps: draws.reps,
            failures: draws.failures,
            failure_fraction: draws.failure_fraction(),
            level: config.confidence_level,
        });
    }
    Ok(AtrelEstimate {
        loadings: fits,
        tunings,
        folds: config.folds,
        backend,
        link: spec.link,
        bootstrap: summary,
    })
}

/// Percentile intervals for every loading, with tunings selected once on the
/// original data.
pub fn bootstrap_ci(data: &TransferDataset, spec: &NuisanceSpec, config: &AtrelConfig) -> Result<Vec<(f64, f64)>> {
    let (design, loadings, backend) = resolve(data, spec, config)?;
    let tunings = resolve_tunings(&design, spec, config, &loadings)?;
    fit_point(&design, spec, backend, &loadings, &tunings, config.folds, config.seed)?;
    let draws = bootstrap_draws(&design, spec, backend, &loadings, &tunings, config)?;
    Ok(draws.intervals(config.confidence_level))
}
