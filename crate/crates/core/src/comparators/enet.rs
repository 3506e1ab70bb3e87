//! Elastic-net penalized GLMs by cyclic coordinate descent.
//!
//! The objective is the glmnet one on internally standardized columns:
//! `-(1/Σw) Σ wᵢ ℓᵢ(b₀, b) + λ{(1-α)/2 ‖b‖² + α‖b‖₁}` with the intercept
//! unpenalized. The logistic link uses a proximal-Newton outer loop
//! (quadratic approximation, coordinate descent inside, step halving on the
//! penalized objective).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{AtrelError, Result};
use crate::numerics::link::logistic;
use crate::numerics::{Link, Rows};
use crate::rng::{unit_rng, DOMAIN_COMPARATOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetOptions {
    /// Coordinate descent stops when no coordinate moves the fit by more than this.
    pub tol: f64,
    pub max_sweeps: usize,
    pub max_outer: usize,
    /// Required bound on the KKT residual at the returned coefficients.
    pub kkt_tol: f64,
}

impl ElasticNetOptions {
    /// Looser settings for fits that only feed cross-validated deviances.
    pub fn screening() -> Self {
        Self {
            tol: 1e-8,
            kkt_tol: 1e-3,
            ..Self::default()
        }
    }
}

impl Default for ElasticNetOptions {
    fn default() -> Self {
        Self {
            tol: 1e-20,
            max_sweeps: 100_000,
            max_outer: 200,
            kkt_tol: 1e-7,
        }
    }
}

/// Coefficients on the original column scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    /// Largest KKT violation on the standardized scale.
    pub kkt_residual: f64,
    pub sweeps: usize,
}

impl ElasticNetFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum::<f64>()
    }

    pub fn predict(&self, x: &Rows, link: Link) -> Vec<f64> {
        x.iter_rows().map(|r| link.eval(self.linear_predictor(r))).collect()
    }
}

/// Standardized problem with a warm-startable state.
struct Problem<'a> {
    n: usize,
    p: usize,
    /// Column-major standardized columns; constant columns are left at zero.
    z: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    y: &'a [f64],
    /// Observation weights summing to one.
    w: Vec<f64>,
    link: Link,
    mix: f64,
    b0: f64,
    b: Vec<f64>,
    sweeps: usize,
}

impl<'a> Problem<'a> {
    fn new(x: &Rows, y: &'a [f64], weights: Option<&[f64]>, link: Link, mix: f64) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        if n == 0 {
            return Err(AtrelError::Data("elastic net on an empty sample".into()));
        }
        if y.len() != n || weights.is_some_and(|w| w.len() != n) {
            return Err(AtrelError::Config(
                "elastic net: response or weights do not match the design".into(),
            ));
        }
        if !(0.0..=1.0).contains(&mix) {
            return Err(AtrelError::Config(format!("penalty mix {mix} outside [0, 1]")));
        }
        if link == Link::Logit && y.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(AtrelError::Data("logistic elastic net needs responses in [0, 1]".into()));
        }
        let w: Vec<f64> = match weights {
            Some(w) => {
                let total: f64 = w.iter().sum();
                if !(total > 0.0) || w.iter().any(|v| *v < 0.0) {
                    return Err(AtrelError::Data("elastic net weights must be nonnegative with positive sum".into()));
                }
                w.iter().map(|v| v / total).collect()
            }
            None => vec![1.0 / n as f64; n],
        };
        let mut z = vec![0.0; n * p];
        let mut mean = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for j in 0..p {
            let m: f64 = (0..n).map(|i| w[i] * x.row(i)[j]).sum();
            let var: f64 = (0..n).map(|i| w[i] * (x.row(i)[j] - m).powi(2)).sum();
            mean[j] = m;
            if var > 1e-12 * (1.0 + m * m) {
                let s = var.sqrt();
                scale[j] = s;
                for i in 0..n {
                    z[j * n + i] = (x.row(i)[j] - m) / s;
                }
            }
        }
        let ybar: f64 = w.iter().zip(y).map(|(a, b)| a * b).sum();
        let b0 = match link {
            Link::Identity => ybar,
            Link::Logit => {
                let q = ybar.clamp(1e-6, 1.0 - 1e-6);
                (q / (1.0 - q)).ln()
            }
        };
        Ok(Self {
            n,
            p,
            z,
            mean,
            scale,
            y,
            w,
            link,
            mix,
            b0,
            b: vec![0.0; p],
            sweeps: 0,
        })
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.z[j * self.n..(j + 1) * self.n]
    }

    fn eta(&self, b0: f64, b: &[f64]) -> Vec<f64> {
        let mut eta = vec![b0; self.n];
        for (j, &bj) in b.iter().enumerate() {
            if bj != 0.0 {
                for (e, zij) in eta.iter_mut().zip(self.col(j)) {
                    *e += bj * zij;
                }
            }
        }
        eta
    }

    /// `Σ wᵢ zᵢⱼ (yᵢ - μᵢ)` for every column, and the intercept component.
    fn gradient(&self, eta: &[f64]) -> (f64, Vec<f64>) {
        let resid: Vec<f64> = (0..self.n).map(|i| self.w[i] * (self.y[i] - self.link.eval(eta[i]))).collect();
        let g0 = resid.iter().sum();
        let g = (0..self.p)
            .map(|j| self.col(j).iter().zip(&resid).map(|(a, b)| a * b).sum())
            .collect();
        (g0, g)
    }

    fn lambda_max(&self) -> f64 {
        let eta = vec![self.null_intercept(); self.n];
        let (_, g) = self.gradient(&eta);
        g.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / self.mix.max(1e-3)
    }

    fn null_intercept(&self) -> f64 {
        let ybar: f64 = self.w.iter().zip(self.y).map(|(a, b)| a * b).sum();
        match self.link {
            Link::Identity => ybar,
            Link::Logit => {
                let q = ybar.clamp(1e-12, 1.0 - 1e-12);
                (q / (1.0 - q)).ln()
            }
        }
    }

    fn penalty(&self, lambda: f64, b: &[f64]) -> f64 {
        let l1: f64 = b.iter().map(|v| v.abs()).sum();
        let l2: f64 = b.iter().map(|v| v * v).sum();
        lambda * (0.5 * (1.0 - self.mix) * l2 + self.mix * l1)
    }

    fn objective(&self, lambda: f64, b0: f64, b: &[f64]) -> f64 {
        let eta = self.eta(b0, b);
        let loss: f64 = match self.link {
            Link::Identity => (0..self.n).map(|i| 0.5 * self.w[i] * (self.y[i] - eta[i]).powi(2)).sum(),
            Link::Logit => (0..self.n)
                .map(|i| {
                    // log(1 + e^η) - yη, computed stably
                    let e = eta[i];
                    self.w[i] * (e.max(0.0) + (-e.abs()).exp().ln_1p() - self.y[i] * e)
                })
                .sum(),
        };
        loss + self.penalty(lambda, b)
    }

    /// Coordinate descent on `½ Σ vᵢ (tᵢ - b₀ - zᵢᵀb)²` plus the penalty,
    /// starting from `(b0, b)`; `resid` holds `t - η` and is kept current.
    fn weighted_cd(
        &mut self,
        lambda: f64,
        v: &[f64],
        resid: &mut [f64],
        b0: &mut f64,
        b: &mut [f64],
        opts: &ElasticNetOptions,
    ) -> Result<()> {
        let l1 = lambda * self.mix;
        let l2 = lambda * (1.0 - self.mix);
        let vsum: f64 = v.iter().sum();
        let xv: Vec<f64> = (0..self.p)
            .map(|j| self.col(j).iter().zip(v).map(|(z, vi)| vi * z * z).sum())
            .collect();
        let mut active_only = false;
        loop {
            if self.sweeps >= opts.max_sweeps {
                return Err(AtrelError::Convergence {
                    context: "elastic net: coordinate descent sweep limit".into(),
                    iterations: self.sweeps,
                    residual_norm: f64::NAN,
                    last_iterate: b.to_vec(),
                });
            }
            self.sweeps += 1;
            let mut max_change = 0.0_f64;
            let d0 = v.iter().zip(resid.iter()).map(|(a, r)| a * r).sum::<f64>() / vsum;
            if d0 != 0.0 {
                *b0 += d0;
                resid.iter_mut().for_each(|r| *r -= d0);
                max_change = max_change.max(vsum * d0 * d0);
            }
            let mut entered = false;
            for j in 0..self.p {
                if xv[j] == 0.0 || (active_only && b[j] == 0.0) {
                    continue;
                }
                let zj = &self.z[j * self.n..(j + 1) * self.n];
                let g: f64 = zj.iter().zip(v).zip(resid.iter()).map(|((z, vi), r)| z * vi * r).sum::<f64>() + xv[j] * b[j];
                let new = soft_threshold(g, l1) / (xv[j] + l2);
                let delta = new - b[j];
                if delta != 0.0 {
                    if b[j] == 0.0 {
                        entered = true;
                    }
                    b[j] = new;
                    for (r, z) in resid.iter_mut().zip(zj) {
                        *r -= delta * z;
                    }
                    max_change = max_change.max(xv[j] * delta * delta);
                }
            }
            if max_change <= opts.tol {
                if active_only {
                    // confirm with a full sweep
                    active_only = false;
                    continue;
                }
                return Ok(());
            }
            if !active_only && !entered {
                active_only = true;
            }
        }
    }

    fn solve(&mut self, lambda: f64, opts: &ElasticNetOptions) -> Result<()> {
        match self.link {
            Link::Identity => {
                let eta = self.eta(self.b0, &self.b);
                let mut resid: Vec<f64> = self.y.iter().zip(&eta).map(|(y, e)| y - e).collect();
                let v = self.w.clone();
                let (mut b0, mut b) = (self.b0, self.b.clone());
                self.weighted_cd(lambda, &v, &mut resid, &mut b0, &mut b, opts)?;
                self.b0 = b0;
                self.b = b;
            }
            Link::Logit => {
                let mut obj = self.objective(lambda, self.b0, &self.b);
                for _ in 0..opts.max_outer {
                    if self.kkt(lambda) <= opts.kkt_tol {
                        return Ok(());
                    }
                    let eta = self.eta(self.b0, &self.b);
                    let mut v = Vec::with_capacity(self.n);
                    let mut resid = Vec::with_capacity(self.n);
                    for i in 0..self.n {
                        let mu = logistic(eta[i]);
                        let var = (mu * (1.0 - mu)).max(1e-10);
                        v.push(self.w[i] * var);
                        resid.push((self.y[i] - mu) / var);
                    }
                    let (mut b0, mut b) = (self.b0, self.b.clone());
                    self.weighted_cd(lambda, &v, &mut resid, &mut b0, &mut b, opts)?;
                    let (old0, old) = (self.b0, self.b.clone());
                    let mut step = 1.0;
                    let mut accepted = false;
                    for _ in 0..40 {
                        let t0 = old0 + step * (b0 - old0);
                        let t: Vec<f64> = old.iter().zip(&b).map(|(o, n)| o + step * (n - o)).collect();
                        let o = self.objective(lambda, t0, &t);
                        if o <= obj {
                            self.b0 = t0;
                            self.b = t;
                            obj = o;
                            accepted = true;
                            break;
                        }
                        step *= 0.5;
                    }
                    if !accepted {
                        break;
                    }
                }
            }
        }
        let kkt = self.kkt(lambda);
        if kkt > opts.kkt_tol {
            return Err(AtrelError::Convergence {
                context: format!("elastic net at lambda {lambda:e}: KKT residual {kkt:e} above {:e}", opts.kkt_tol),
                iterations: self.sweeps,
                residual_norm: kkt,
                last_iterate: self.b.clone(),
            });
        }
        Ok(())
    }

    /// Largest violation of the stationarity conditions on the standardized scale.
    fn kkt(&self, lambda: f64) -> f64 {
        let eta = self.eta(self.b0, &self.b);
        let (g0, g) = self.gradient(&eta);
        let l1 = lambda * self.mix;
        let l2 = lambda * (1.0 - self.mix);
        let mut worst = g0.abs();
        for j in 0..self.p {
            if self.scale[j] == 0.0 {
                continue;
            }
            let bj = self.b[j];
            let v = if bj != 0.0 {
                (g[j] - l2 * bj - l1 * bj.signum()).abs()
            } else {
                (g[j].abs() - l1).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    fn fit(&self, lambda: f64, kkt: f64) -> ElasticNetFit {
        let mut coefficients = vec![0.0; self.p];
        let mut intercept = self.b0;
        for j in 0..self.p {
            if self.scale[j] > 0.0 {
                coefficients[j] = self.b[j] / self.scale[j];
                intercept -= coefficients[j] * self.mean[j];
            }
        }
        ElasticNetFit {
            intercept,
            coefficients,
            lambda,
            kkt_residual: kkt,
            sweeps: self.sweeps,
        }
    }
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Elastic-net GLM at one penalty. `x` excludes the intercept column.
/// An infinite penalty returns the intercept-only fit.
pub fn elastic_net_glm(
    x: &Rows,
    y: &[f64],
    link: Link,
    mix: f64,
    penalty: f64,
    weights: Option<&[f64]>,
    opts: &ElasticNetOptions,
) -> Result<ElasticNetFit> {
    if !(penalty >= 0.0) {
        return Err(AtrelError::Config(format!("penalty {penalty} must be nonnegative")));
    }
    let mut prob = Problem::new(x, y, weights, link, mix)?;
    if penalty.is_infinite() {
        prob.b0 = prob.null_intercept();
        return Ok(prob.fit(penalty, 0.0));
    }
    prob.solve(penalty, opts)?;
    let kkt = prob.kkt(penalty);
    Ok(prob.fit(penalty, kkt))
}

/// Fits along a decreasing penalty path with warm starts.
pub fn elastic_net_path(
    x: &Rows,
    y: &[f64],
    link: Link,
    mix: f64,
    path: &[f64],
    weights: Option<&[f64]>,
    opts: &ElasticNetOptions,
) -> Result<Vec<ElasticNetFit>> {
    let mut prob = Problem::new(x, y, weights, link, mix)?;
    let mut fits = Vec::with_capacity(path.len());
    for &lambda in path {
        prob.solve(lambda, opts)?;
        let kkt = prob.kkt(lambda);
        fits.push(prob.fit(lambda, kkt));
    }
    Ok(fits)
}

/// `count` log-spaced penalties from the smallest one that zeroes every
/// coefficient down to `min_ratio` times it.
pub fn lambda_path(x: &Rows, y: &[f64], link: Link, mix: f64, weights: Option<&[f64]>, count: usize, min_ratio: f64) -> Result<Vec<f64>> {
    let prob = Problem::new(x, y, weights, link, mix)?;
    let top = prob.lambda_max();
    if !(top > 0.0) || count == 0 {
        return Ok(vec![0.0]);
    }
    if count == 1 {
        return Ok(vec![top]);
    }
    let step = min_ratio.ln() / (count - 1) as f64;
    Ok((0..count).map(|k| top * (step * k as f64).exp()).collect())
}

/// Mean deviance contribution of one observation.
pub fn deviance(y: f64, mu: f64, link: Link) -> f64 {
    match link {
        Link::Identity => (y - mu).powi(2),
        Link::Logit => {
            let m = mu.clamp(1e-12, 1.0 - 1e-12);
            -2.0 * (y * m.ln() + (1.0 - y) * (1.0 - m).ln())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub path: Vec<f64>,
    /// Mean held-out deviance per penalty; infinite where a fold failed.
    pub deviance: Vec<f64>,
    pub lambda: f64,
}

/// `folds`-fold cross-validated deviance over `path`; the penalty with the
/// smallest mean deviance is selected.
pub fn cv_elastic_net(
    x: &Rows,
    y: &[f64],
    link: Link,
    mix: f64,
    path: &[f64],
    folds: usize,
    seed: u64,
    opts: &ElasticNetOptions,
) -> Result<CvResult> {
    let n = x.nrows();
    if folds < 2 || folds > n {
        return Err(AtrelError::Config(format!("cannot cross-validate {n} rows over {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut unit_rng(seed, DOMAIN_COMPARATOR, 0));
    let mut total = vec![0.0_f64; path.len()];
    for k in 0..folds {
        let held: Vec<usize> = order.iter().copied().skip(k).step_by(folds).collect();
        let mut is_held = vec![false; n];
        held.iter().for_each(|&i| is_held[i] = true);
        let train: Vec<usize> = (0..n).filter(|&i| !is_held[i]).collect();
        let xt = x.select(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let mut prob = Problem::new(&xt, &yt, None, link, mix)?;
        for (l, &lambda) in path.iter().enumerate() {
            if !total[l].is_finite() {
                continue;
            }
            if prob.solve(lambda, opts).is_err() {
                // later penalties are weaker still
                total[l..].iter_mut().for_each(|t| *t = f64::INFINITY);
                break;
            }
            let fit = prob.fit(lambda, 0.0);
            total[l] += held
                .iter()
                .map(|&i| deviance(y[i], link.eval(fit.linear_predictor(x.row(i))), link))
                .sum::<f64>();
        }
    }
    let deviance: Vec<f64> = total.iter().map(|t| t / n as f64).collect();
    let best = deviance
        .iter()
        .enumerate()
        .filter(|(_, d)| d.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(l, _)| l)
        .ok_or_else(|| AtrelError::Convergence {
            context: "elastic net cross-validation: every penalty failed".into(),
            iterations: 0,
            residual_norm: f64::NAN,
            last_iterate: Vec::new(),
        })?;
    Ok(CvResult {
        path: path.to_vec(),
        lambda: path[best],
        deviance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn sample(n: usize, p: usize, seed: u64, link: Link) -> (Rows, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * p);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..p)
                .map(|j| rng.sample::<f64, _>(StandardNormal) * (1.0 + j as f64) + j as f64)
                .collect();
            let lin = 0.3
                + row
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (j as f64 - 1.0) * 0.2 * (v - j as f64) / (1.0 + j as f64))
                    .sum::<f64>();
            y.push(match link {
                Link::Identity => lin + rng.sample::<f64, _>(StandardNormal),
                Link::Logit => f64::from(rng.gen::<f64>() < logistic(lin)),
            });
            data.extend(row);
        }
        (Rows::new(p, data).unwrap(), y)
    }

    /// Textbook IRLS on `[1, x]`.
    fn irls(x: &Rows, y: &[f64], link: Link) -> Vec<f64> {
        let (n, p) = (x.nrows(), x.ncols() + 1);
        let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x.row(i)[j - 1] });
        let mut beta = DVector::zeros(p);
        for _ in 0..100 {
            let eta = &design * &beta;
            let (mut w, mut z) = (DVector::zeros(n), DVector::zeros(n));
            for i in 0..n {
                let (mu, d) = match link {
                    Link::Identity => (eta[i], 1.0),
                    Link::Logit => {
                        let m = 1.0 / (1.0 + (-eta[i]).exp());
                        (m, m * (1.0 - m))
                    }
                };
                w[i] = d;
                z[i] = eta[i] + (y[i] - mu) / d;
            }
            let xtw = design.transpose() * DMatrix::from_diagonal(&w);
            let next = (&xtw * &design).lu().solve(&(&xtw * z)).unwrap();
            let done = (&next - &beta).amax() < 1e-14;
            beta = next;
            if done {
                break;
            }
        }
        beta.iter().copied().collect()
    }

    #[test]
    fn zero_penalty_matches_irls() {
        for link in [Link::Identity, Link::Logit] {
            let (x, y) = sample(300, 4, 2, link);
            let fit = elastic_net_glm(&x, &y, link, 0.5, 0.0, None, &ElasticNetOptions::default()).unwrap();
            let oracle = irls(&x, &y, link);
            assert!((fit.intercept - oracle[0]).abs() < 1e-6, "{link:?}");
            for (a, b) in fit.coefficients.iter().zip(&oracle[1..]) {
                assert!((a - b).abs() < 1e-6, "{link:?}: {a} vs {b}");
            }
            assert!(fit.kkt_residual <= 1e-7);
        }
    }

    #[test]
    fn infinite_penalty_zeroes_coefficients() {
        let (x, y) = sample(100, 3, 1, Link::Logit);
        let fit = elastic_net_glm(&x, &y, Link::Logit, 0.5, f64::INFINITY, None, &ElasticNetOptions::default()).unwrap();
        assert!(fit.coefficients.iter().all(|&b| b == 0.0));
        let ybar = y.iter().sum::<f64>() / 100.0;
        assert!((logistic(fit.intercept) - ybar).abs() < 1e-12);
        let top = lambda_path(&x, &y, Link::Logit, 0.5, None, 1, 1.0).unwrap()[0];
        let at_max = elastic_net_glm(&x, &y, Link::Logit, 0.5, top * 1.0001, None, &ElasticNetOptions::default()).unwrap();
        assert!(at_max.coefficients.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn lasso_on_orthonormal_design_soft_thresholds() {
        // columns are ±1 patterns: mean zero, unit variance and mutually orthogonal
        let patterns = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
        let rows: Vec<[f64; 3]> = patterns.iter().cycle().take(8).copied().collect();
        let x = Rows::from_rows(&rows).unwrap();
        let y = [2.0, 0.5, -1.0, 0.3, 1.8, 0.7, -0.6, 0.1];
        let n = 8.0;
        let ybar = y.iter().sum::<f64>() / n;
        let lambda = 0.2;
        let fit = elastic_net_glm(&x, &y, Link::Identity, 1.0, lambda, None, &ElasticNetOptions::default()).unwrap();
        for j in 0..3 {
            let ols: f64 = (0..8).map(|i| rows[i][j] * y[i]).sum::<f64>() / n;
            assert!((fit.coefficients[j] - soft_threshold(ols, lambda)).abs() < 1e-12);
        }
        assert!((fit.intercept - ybar).abs() < 1e-12);
    }

    #[test]
    fn kkt_holds_along_path() {
        for link in [Link::Identity, Link::Logit] {
            let (x, y) = sample(200, 6, 5, link);
            let path = lambda_path(&x, &y, link, 0.5, None, 20, 1e-3).unwrap();
            for fit in elastic_net_path(&x, &y, link, 0.5, &path, None, &ElasticNetOptions::default()).unwrap() {
                assert!(fit.kkt_residual <= 1e-7, "{link:?} {}", fit.kkt_residual);
            }
        }
    }

    #[test]
    fn weights_act_as_replication() {
        let (x, y) = sample(60, 3, 7, Link::Logit);
        let w: Vec<f64> = (0..60).map(|i| (i % 3 + 1) as f64).collect();
        let idx: Vec<usize> = (0..60).flat_map(|i| std::iter::repeat(i).take(i % 3 + 1)).collect();
        let xr = x.select(&idx);
        let yr: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let opts = ElasticNetOptions::default();
        let a = elastic_net_glm(&x, &y, Link::Logit, 0.3, 0.01, Some(&w), &opts).unwrap();
        let b = elastic_net_glm(&xr, &yr, Link::Logit, 0.3, 0.01, None, &opts).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn cv_selects_from_path() {
        let (x, y) = sample(150, 5, 3, Link::Logit);
        let path = lambda_path(&x, &y, Link::Logit, 0.5, None, 10, 1e-2).unwrap();
        let cv = cv_elastic_net(&x, &y, Link::Logit, 0.5, &path, 5, 1, &ElasticNetOptions::default()).unwrap();
        assert!(path.contains(&cv.lambda));
        let best = cv.deviance.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(cv.deviance[path.iter().position(|&l| l == cv.lambda).unwrap()], best);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn negating_response_negates_identity_fit(seed in 0u64..1000, lambda in 0.0f64..0.5, mix in 0.0f64..=1.0) {
            let (x, y) = sample(40, 3, seed, Link::Identity);
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            let opts = ElasticNetOptions::default();
            let a = elastic_net_glm(&x, &y, Link::Identity, mix, lambda, None, &opts).unwrap();
            let b = elastic_net_glm(&x, &neg, Link::Identity, mix, lambda, None, &opts).unwrap();
            prop_assert!((a.intercept + b.intercept).abs() < 1e-9);
            for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
                prop_assert!((u + v).abs() < 1e-9);
            }
        }
    }
}
