//! Cross-validated choice of the ridge penalties and the kernel bandwidth.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::calibrate::{calibrate_r_saturating, GroupData};
use super::kappa::{compute_jhat, sign_partition, KappaWeights};
use super::prelim::{fit_density_ratio_prelim, fit_imputation_prelim, fit_preliminary, solve_preliminary_beta, PrelimSettings};
use super::spec::{CalibrationBackend, Design, NuisanceSpec, PopulationDesign};
use crate::error::{AtrelError, Result};
use crate::numerics::design::dot;
use crate::numerics::{Basis, BasisFamily, BasisSpec, KernelSpec, Link, NewtonOptions, Rows};

/// Multipliers `c` of the ridge rate `λ = c·n^{-2/3}`.
pub const RIDGE_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
/// Multipliers `c` of the bandwidth rate `h = c·sd(Z)·n^{-1/5}`.
pub const BANDWIDTH_GRID: [f64; 6] = [0.5, 0.75, 1.0, 1.5, 2.0, 3.0];
pub const CV_FOLDS: usize = 5;

/// Resolved tuning parameters of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tunings {
    pub basis_family: BasisFamily,
    pub weight_df: usize,
    pub imputation_df: usize,
    pub ridge_weight: f64,
    pub ridge_imputation: f64,
    pub bandwidth: Vec<f64>,
}

impl Tunings {
    pub fn prelim_settings(&self, link: Link) -> PrelimSettings {
        PrelimSettings {
            link,
            basis_w: self.basis_spec(self.weight_df),
            basis_m: self.basis_spec(self.imputation_df),
            ridge_w: self.ridge_weight,
            ridge_m: self.ridge_imputation,
        }
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::gaussian(self.bandwidth.clone())
    }

    fn basis_spec(&self, df: usize) -> BasisSpec {
        match self.basis_family {
            BasisFamily::NaturalCubicSpline => BasisSpec::natural_spline(df),
            BasisFamily::HermiteTensor => BasisSpec::hermite(df),
        }
    }
}

fn ceil_root4(x: usize) -> usize {
    ((x as f64).powf(0.25).ceil() as usize).max(1)
}

/// `(weight_df, imputation_df)` defaults `⌈(N+n)^{1/4}⌉` and `⌈n^{1/4}⌉`.
pub fn default_dfs(n: usize, big_n: usize) -> (usize, usize) {
    (ceil_root4(n + big_n), ceil_root4(n))
}

/// Random split of `0..n` into `k` folds whose sizes differ by at most one.
pub fn random_folds(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    folds
}

fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    fold.iter().for_each(|&i| mask[i] = false);
    (0..n).filter(|&i| mask[i]).collect()
}

fn sd(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

fn argmin(scores: &[f64]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

fn augmented(pop: &PopulationDesign, base: &Rows, basis: &Basis) -> Result<Rows> {
    let b = basis.eval_rows(pop.z.as_slice(), pop.z.ncols())?;
    base.hcat(&Rows::new(basis.n_columns()?, b)?)
}

/// Held-out deviance of the ridge imputation fit.
fn imputation_cv(design: &Design, folds: &[Vec<usize>], link: Link, basis: BasisSpec, ridge: f64) -> f64 {
    let opts = NewtonOptions::default();
    let mut total = 0.0;
    for fold in folds {
        let train = complement(design.n(), fold);
        let tr = design.src.select(&train);
        let y: Vec<f64> = train.iter().map(|&i| design.y[i]).collect();
        let Ok((theta, basis, _)) = fit_imputation_prelim(&tr, &y, link, basis, ridge, &opts) else {
            return f64::INFINITY;
        };
        let te = design.src.select(fold);
        let Ok(phi) = augmented(&te, &te.phi, &basis) else {
            return f64::INFINITY;
        };
        for (t, &i) in fold.iter().enumerate() {
            let eta = dot(phi.row(t), &theta);
            let yi = design.y[i];
            total += match link {
                Link::Identity => (yi - eta).powi(2),
                // binomial deviance, valid for fractional responses too
                Link::Logit => {
                    let log1pexp = |x: f64| if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
                    2.0 * (yi * log1pexp(-eta) + (1.0 - yi) * log1pexp(eta))
                }
            };
        }
    }
    total
}

/// Held-out exponential-tilt loss `mean_src exp(θᵀΨ) - θᵀ mean_tgt Ψ`.
fn weight_cv(design: &Design, src_folds: &[Vec<usize>], tgt_folds: &[Vec<usize>], basis: BasisSpec, ridge: f64) -> f64 {
    let opts = NewtonOptions::default();
    let mut total = 0.0;
    for (sf, tf) in src_folds.iter().zip(tgt_folds) {
        let s_train = design.src.select(&complement(design.n(), sf));
        let t_train = design.tgt.select(&complement(design.big_n(), tf));
        let Ok((theta, basis, _)) = fit_density_ratio_prelim(&s_train, &t_train, basis, ridge, &opts) else {
            return f64::INFINITY;
        };
        let s_test = design.src.select(sf);
        let t_test = design.tgt.select(tf);
        let (Ok(ps), Ok(pt)) = (augmented(&s_test, &s_test.psi, &basis), augmented(&t_test, &t_test.psi, &basis)) else {
            return f64::INFINITY;
        };
        let src_term = ps.iter_rows().map(|r| dot(r, &theta).exp()).sum::<f64>() / ps.nrows() as f64;
        let tgt_term = pt.iter_rows().map(|r| dot(r, &theta)).sum::<f64>() / pt.nrows() as f64;
        total += src_term - tgt_term;
    }
    if total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

/// Held-out squared imputation-calibration residual `Σ (κ ω̃ (Y - m̂))²`,
/// summed over loadings. Preliminary fits use the full data.
fn bandwidth_cv(
    design: &Design,
    folds: &[Vec<usize>],
    settings: &PrelimSettings,
    spec: &NuisanceSpec,
    loadings: &[Vec<f64>],
    base: &[f64],
) -> Result<Vec<f64>> {
    let opts = NewtonOptions::default();
    let all: Vec<usize> = (0..design.n()).collect();
    let prelim = fit_preliminary(&design.src, &design.y, &design.tgt, settings, &opts)?;
    let sv = prelim.values(&design.src)?;
    let tv = prelim.values(&design.tgt)?;
    let beta = solve_preliminary_beta(
        &design.src.a,
        &design.y,
        &sv.omega,
        &sv.m,
        &design.tgt.a,
        &tv.m,
        settings.link,
        None,
        &opts,
    )?
    .x;
    let jhat = compute_jhat(&beta, &design.tgt.a, settings.link);
    let dim = design.z_dim();
    let mut scores = vec![0.0f64; BANDWIDTH_GRID.len()];
    for c in loadings {
        let kw = KappaWeights::new(c, jhat.clone())?;
        let kappa_src: Vec<f64> = all.iter().map(|&i| kw.kappa(design.src.a.row(i))).collect();
        let pooled: Vec<f64> = kappa_src.iter().copied().chain(kw.values(&design.tgt.a)).collect();
        let (partition, _) = sign_partition(&pooled, spec.median_split_intercept, spec.min_group_fraction);
        for fold in folds {
            let train = complement(design.n(), fold);
            let mut groups = [GroupData::new(dim, train.len(), 1), GroupData::new(dim, train.len(), 1)];
            for &i in &train {
                let k = kappa_src[i];
                if !partition.calibrates(k) {
                    continue;
                }
                groups[partition.group(k)].push_source(design.src.z.row(i), design.y[i], sv.lin_m[i], k * sv.omega[i], 0.0);
            }
            groups.iter_mut().for_each(GroupData::prepare);
            for (s, &mult) in scores.iter_mut().zip(&BANDWIDTH_GRID) {
                if !s.is_finite() {
                    continue;
                }
                let kernel = KernelSpec::gaussian(base.iter().map(|b| b * mult).collect())?;
                for &i in fold {
                    let k = kappa_src[i];
                    let mut g = partition.group(k);
                    let small = (groups[g].n_source() as f64) < spec.min_group_fraction * train.len() as f64;
                    if small || !groups[g].supports_r(settings.link) {
                        g = 1 - g;
                    }
                    match calibrate_r_saturating(&groups[g], design.src.z.row(i), &kernel, settings.link, sv.r[i]) {
                        Ok(sol) => {
                            let m = settings.link.eval(sv.lin_m[i] + sol.value);
                            *s += (k * sv.omega[i] * (design.y[i] - m)).powi(2);
                        }
                        Err(e) if e.is_convergence() => *s = f64::INFINITY,
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    Ok(scores)
}

/// Resolves every tuning parameter not fixed in `spec`.
pub fn select_tunings(design: &Design, spec: &NuisanceSpec, loadings: &[Vec<f64>], seed: u64) -> Result<Tunings> {
    let n = design.n();
    let big_n = design.big_n();
    if n < CV_FOLDS || big_n < CV_FOLDS {
        return Err(AtrelError::Data(format!(
            "cross-validation needs at least {CV_FOLDS} rows per population"
        )));
    }
    let (wdf, mdf) = default_dfs(n, big_n);
    let mut t = Tunings {
        basis_family: spec.basis_family,
        weight_df: spec.weight_df.unwrap_or(wdf),
        imputation_df: spec.imputation_df.unwrap_or(mdf),
        ridge_weight: 0.0,
        ridge_imputation: 0.0,
        bandwidth: vec![],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src_folds = random_folds(n, CV_FOLDS, &mut rng);
    let tgt_folds = random_folds(big_n, CV_FOLDS, &mut rng);
    let rate = (n as f64).powf(-2.0 / 3.0);
    let probe = t.prelim_settings(spec.link);

    t.ridge_imputation = match spec.ridge_imputation_model {
        Some(l) => l,
        None => {
            let scores: Vec<f64> = RIDGE_GRID
                .iter()
                .map(|c| imputation_cv(design, &src_folds, spec.link, probe.basis_m, c * rate))
                .collect();
            let best = argmin(&scores).ok_or_else(|| AtrelError::Data("every ridge candidate failed for the imputation model".into()))?;
            RIDGE_GRID[best] * rate
        }
    };
    t.ridge_weight = match spec.ridge_weight_model {
        Some(l) => l,
        None => {
            let scores: Vec<f64> = RIDGE_GRID
                .iter()
                .map(|c| weight_cv(design, &src_folds, &tgt_folds, probe.basis_w, c * rate))
                .collect();
            let best =
                argmin(&scores).ok_or_else(|| AtrelError::Data("every ridge candidate failed for the density-ratio model".into()))?;
            RIDGE_GRID[best] * rate
        }
    };

    t.bandwidth = match &spec.bandwidth {
        Some(h) => h.clone(),
        None => {
            let shrink = (n as f64).powf(-0.2);
            let mut base = Vec::with_capacity(design.z_dim());
            for j in 0..design.z_dim() {
                let s = sd((0..n).map(|i| design.src.z.row(i)[j]));
                if !(s > 0.0 && s.is_finite()) {
                    return Err(AtrelError::Data(format!("Z column {j} is constant on the source sample")));
                }
                base.push(s * shrink);
            }
            if spec.calibration_backend == CalibrationBackend::Kernel {
                let scores = bandwidth_cv(design, &src_folds, &t.prelim_settings(spec.link), spec, loadings, &base)?;
                let best = argmin(&scores).ok_or_else(|| AtrelError::Calibration {
                    point: vec![],
                    reason: "every bandwidth candidate failed in cross-validation".into(),
                })?;
                base.iter().map(|b| b * BANDWIDTH_GRID[best]).collect()
            } else {
                base
            }
        }
    };
    Ok(t)
}
