//! Competing estimators of the target working-model coefficients.

pub mod dml;
pub mod enet;

use serde::{Deserialize, Serialize};

pub use dml::{fit_dml_be, DmlFit, DmlTunings, SplineExpansion};
pub use enet::{cv_elastic_net, elastic_net_glm, elastic_net_path, lambda_path, ElasticNetFit, ElasticNetOptions};

use crate::data::TransferDataset;
use crate::error::{AtrelError, Result, ResultExt};
use crate::nuisance::prelim::{dr_rhs, solve_exponential_tilt};
use crate::nuisance::{Design, NuisanceSpec};
use crate::numerics::glm::{fit_glm, solve_mean_equation};
use crate::numerics::{Link, NewtonOptions, Rows};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorMethod {
    SourceGlm,
    IwOnly,
    ParametricDr,
    /// Target GLM of the parametric imputations.
    ImputationOnly,
    DmlBe,
}

impl ComparatorMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::SourceGlm => "source_glm",
            Self::IwOnly => "iw_only",
            Self::ParametricDr => "parametric_dr",
            Self::ImputationOnly => "imputation_only",
            Self::DmlBe => "dml_be",
        }
    }
}

impl std::str::FromStr for ComparatorMethod {
    type Err = AtrelError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "source_glm" => Self::SourceGlm,
            "iw_only" => Self::IwOnly,
            "parametric_dr" | "parametric" => Self::ParametricDr,
            "imputation_only" => Self::ImputationOnly,
            "dml_be" => Self::DmlBe,
            other => return Err(AtrelError::Config(format!("unknown comparator '{other}'"))),
        })
    }
}

/// How the parametric density ratio is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioModel {
    /// Logistic regression of the population indicator, converted by its odds.
    #[default]
    SelectionOdds,
    /// Exponential tilt of `ψ` matching the target mean.
    MomentTilt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorSpec {
    pub method: ComparatorMethod,
    pub expansion: SplineExpansion,
    pub penalty_mix: f64,
    /// Explicit penalty path; empty means a log-spaced path from the data.
    pub penalty_path: Vec<f64>,
    pub path_length: usize,
    pub path_min_ratio: f64,
    pub cv_folds: usize,
    pub folds: usize,
    pub ratio_model: RatioModel,
    pub seed: u64,
}

impl ComparatorSpec {
    pub fn new(method: ComparatorMethod) -> Self {
        Self {
            method,
            expansion: SplineExpansion::default(),
            penalty_mix: 0.5,
            penalty_path: Vec::new(),
            path_length: 50,
            path_min_ratio: 1e-3,
            cv_folds: 5,
            folds: 5,
            ratio_model: RatioModel::default(),
            seed: 0,
        }
    }
}

/// Drops the leading constant column.
pub(crate) fn without_intercept(rows: &Rows) -> Rows {
    let p = rows.ncols() - 1;
    let mut data = Vec::with_capacity(rows.nrows() * p);
    for r in rows.iter_rows() {
        data.extend_from_slice(&r[1..]);
    }
    Rows::new(p, data).expect("consistent width")
}

/// Plain GLM of `Y` on `A` over the source rows.
pub fn fit_source_glm(design: &Design, link: Link) -> Result<Vec<f64>> {
    fit_glm(&design.src.a, &design.y, None, link, &NewtonOptions::default()).context("source GLM")
}

/// Solves `n⁻¹ Σ ωᵢ Aᵢ {Yᵢ - g(Aᵢᵀβ)} = 0`.
pub fn fit_iw_only(design: &Design, omega: &[f64], link: Link) -> Result<Vec<f64>> {
    if omega.len() != design.n() {
        return Err(AtrelError::Config("one weight per source row required".into()));
    }
    fit_glm(&design.src.a, &design.y, Some(omega), link, &NewtonOptions::default()).context("importance-weighted GLM")
}

/// `ω̂` on the source rows from a logistic model of the population indicator
/// on `ψ`: `(n/N)(1 - p̂)/p̂` with `p̂ = P̂(source | ψ)`.
pub fn selection_odds_ratio(design: &Design) -> Result<Vec<f64>> {
    let pooled = design.src.psi.stack(&design.tgt.psi)?;
    let mut s = vec![1.0; design.n()];
    s.resize(design.n() + design.big_n(), 0.0);
    let alpha = fit_glm(&pooled, &s, None, Link::Logit, &NewtonOptions::default()).context("selection model")?;
    let share = design.n() as f64 / design.big_n() as f64;
    Ok((0..design.n())
        .map(|i| {
            // (1-p)/p = exp(-η)
            share * (-design.src.psi.dot_row(i, &alpha)).exp()
        })
        .collect())
}

/// `ω̂ = exp(ψᵀα)` with `n⁻¹ Σ_src ω̂ ψ` equal to the target mean of `ψ`.
pub fn moment_tilt_ratio(design: &Design) -> Result<Vec<f64>> {
    let big_n = design.big_n() as f64;
    let mut target_mean = vec![0.0; design.src.psi.ncols()];
    for r in design.tgt.psi.iter_rows() {
        target_mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / big_n);
    }
    let alpha = solve_exponential_tilt(&design.src.psi, &target_mean, 0.0, &NewtonOptions::default())
        .context("moment tilt")?
        .x;
    Ok((0..design.n()).map(|i| design.src.psi.dot_row(i, &alpha).exp()).collect())
}

pub fn parametric_ratio(design: &Design, model: RatioModel) -> Result<Vec<f64>> {
    match model {
        RatioModel::SelectionOdds => selection_odds_ratio(design),
        RatioModel::MomentTilt => moment_tilt_ratio(design),
    }
}

/// Parametric imputation `g(φᵀγ̂)` fitted on the source, evaluated on source and target.
pub fn parametric_imputation(design: &Design, link: Link) -> Result<(Vec<f64>, Vec<f64>)> {
    let gamma = fit_glm(&design.src.phi, &design.y, None, link, &NewtonOptions::default()).context("imputation model")?;
    let eval = |rows: &Rows| (0..rows.nrows()).map(|i| link.eval(rows.dot_row(i, &gamma))).collect::<Vec<f64>>();
    Ok((eval(&design.src.phi), eval(&design.tgt.phi)))
}

/// Solves the augmented equation
/// `(1/N) Σ_tgt A g(Aᵀβ) = n⁻¹ Σ_src ω A (Y - m) + (1/N) Σ_tgt A m`.
pub fn solve_augmented(design: &Design, link: Link, omega: &[f64], m_src: &[f64], m_tgt: &[f64]) -> Result<Vec<f64>> {
    let rhs = dr_rhs(
        &design.src.a,
        &design.y,
        omega,
        m_src,
        1.0 / design.n() as f64,
        &design.tgt.a,
        m_tgt,
    )?;
    let w = vec![1.0 / design.big_n() as f64; design.big_n()];
    let opts = NewtonOptions::default();
    // the imputation-only solution is a natural start
    let start = fit_glm(&design.tgt.a, m_tgt, None, link, &opts).unwrap_or_else(|_| vec![0.0; design.tgt.a.ncols()]);
    Ok(solve_mean_equation(&design.tgt.a, &w, link, &rhs, &start, &opts)
        .context("augmented equation")?
        .x)
}

/// Doubly robust estimate with parametric nuisances fitted once on the full data.
pub fn fit_parametric_dr(design: &Design, link: Link, ratio: RatioModel) -> Result<Vec<f64>> {
    let omega = parametric_ratio(design, ratio)?;
    let (m_src, m_tgt) = parametric_imputation(design, link)?;
    solve_augmented(design, link, &omega, &m_src, &m_tgt)
}

/// Target GLM of the parametric imputations.
pub fn fit_imputation_only(design: &Design, link: Link) -> Result<Vec<f64>> {
    let (_, m_tgt) = parametric_imputation(design, link)?;
    fit_glm(&design.tgt.a, &m_tgt, None, link, &NewtonOptions::default()).context("imputation-only GLM")
}

/// Fitted comparator: coefficients plus the penalties chosen by `dml_be`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorFit {
    pub method: ComparatorMethod,
    pub beta: Vec<f64>,
    pub dml: Option<DmlTunings>,
}

/// Fits `cs.method`; `frozen` reuses previously chosen `dml_be` penalties.
pub fn fit_comparator(
    data: &TransferDataset,
    spec: &NuisanceSpec,
    cs: &ComparatorSpec,
    frozen: Option<&DmlTunings>,
) -> Result<ComparatorFit> {
    let design = spec.design(data)?;
    let link = spec.link;
    let (beta, dml) = match cs.method {
        ComparatorMethod::SourceGlm => (fit_source_glm(&design, link)?, None),
        ComparatorMethod::IwOnly => (fit_iw_only(&design, &parametric_ratio(&design, cs.ratio_model)?, link)?, None),
        ComparatorMethod::ParametricDr => (fit_parametric_dr(&design, link, cs.ratio_model)?, None),
        ComparatorMethod::ImputationOnly => (fit_imputation_only(&design, link)?, None),
        ComparatorMethod::DmlBe => {
            let fit = fit_dml_be(&design, link, cs, frozen)?;
            (fit.beta, Some(fit.tunings))
        }
    };
    Ok(ComparatorFit {
        method: cs.method,
        beta,
        dml,
    })
}
