use serde::{Deserialize, Serialize};

use super::spec::PopulationDesign;
use crate::error::{AtrelError, Result, ResultExt};
use crate::numerics::design::{dot, rank_one_upper, symmetric_from_upper};
use crate::numerics::glm::solve_mean_equation;
use crate::numerics::{newton_solve, Basis, BasisSpec, Link, NewtonOptions, NewtonSolution, Rows};

/// Solves the penalized exponential-tilt equation
/// `(1/n) Σ Ψᵢ exp(θᵀΨᵢ) + λ (0, θ₋₁) = target_mean` (intercept unpenalized).
pub fn solve_exponential_tilt(psi: &Rows, target_mean: &[f64], ridge: f64, opts: &NewtonOptions) -> Result<NewtonSolution> {
    let n = psi.nrows();
    let p = psi.ncols();
    if n == 0 {
        return Err(AtrelError::Data("density-ratio fit on an empty source fold".into()));
    }
    if target_mean.len() != p {
        return Err(AtrelError::Config("target moment has the wrong length".into()));
    }
    let inv_n = 1.0 / n as f64;
    let residual = |theta: &[f64]| {
        let mut out = vec![0.0; p];
        for row in psi.iter_rows() {
            let e = dot(row, theta).exp() * inv_n;
            for (o, v) in out.iter_mut().zip(row) {
                *o += e * v;
            }
        }
        for j in 0..p {
            out[j] -= target_mean[j];
            if j > 0 {
                out[j] += ridge * theta[j];
            }
        }
        out
    };
    let jacobian = |theta: &[f64]| {
        let mut acc = vec![0.0; p * p];
        for row in psi.iter_rows() {
            rank_one_upper(&mut acc, p, row, dot(row, theta).exp());
        }
        let mut m = symmetric_from_upper(&acc, p, inv_n);
        for j in 1..p {
            m[(j, j)] += ridge;
        }
        m
    };
    newton_solve(residual, jacobian, &vec![0.0; p], opts)
}

/// Solves the ridge-penalized GLM score `(1/n) Σ Φᵢ (Yᵢ - g(θᵀΦᵢ)) - λ (0, θ₋₁) = 0`.
pub fn solve_ridge_glm(phi: &Rows, y: &[f64], link: Link, ridge: f64, opts: &NewtonOptions) -> Result<NewtonSolution> {
    let n = phi.nrows();
    let p = phi.ncols();
    if n == 0 {
        return Err(AtrelError::Data("imputation fit on an empty source fold".into()));
    }
    let inv_n = 1.0 / n as f64;
    let weights = vec![inv_n; n];
    let mut rhs = vec![0.0; p];
    for (row, &yi) in phi.iter_rows().zip(y) {
        for (r, v) in rhs.iter_mut().zip(row) {
            *r += inv_n * yi * v;
        }
    }
    let mut x0 = vec![0.0; p];
    let ybar = y.iter().sum::<f64>() * inv_n;
    let ybar = match link {
        Link::Logit => ybar.clamp(1e-6, 1.0 - 1e-6),
        Link::Identity => ybar,
    };
    x0[0] = link.inverse(ybar)?;
    if ridge == 0.0 {
        return solve_mean_equation(phi, &weights, link, &rhs, &x0, opts);
    }
    let residual = |theta: &[f64]| {
        let mut out = crate::numerics::glm::mean_residual(phi, &weights, link, &rhs, theta);
        for j in 1..p {
            out[j] -= ridge * theta[j];
        }
        out
    };
    let jacobian = |theta: &[f64]| {
        let mut m = crate::numerics::glm::mean_jacobian(phi, &weights, link, theta);
        for j in 1..p {
            m[(j, j)] -= ridge;
        }
        m
    };
    newton_solve(residual, jacobian, &x0, opts)
}

/// Preliminary sieve fits of both nuisance models on one training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreliminaryFit {
    /// `(α, η)` over `(ψ, b_w(Z))`.
    pub theta_w: Vec<f64>,
    /// `(γ, ξ)` over `(φ, b_m(Z))`.
    pub theta_m: Vec<f64>,
    pub basis_w: Basis,
    pub basis_m: Basis,
    pub p_psi: usize,
    pub p_phi: usize,
    pub link: Link,
    pub weight_residual: f64,
    pub imputation_residual: f64,
}

/// Preliminary nuisance values on the rows of one population.
#[derive(Debug, Clone, PartialEq)]
pub struct PrelimValues {
    /// `ψᵀα̃`.
    pub lin_w: Vec<f64>,
    /// `h̃(Z)`.
    pub h: Vec<f64>,
    /// `φᵀγ̃`.
    pub lin_m: Vec<f64>,
    /// `r̃(Z)`.
    pub r: Vec<f64>,
    /// `ω̃ = exp(ψᵀα̃ + h̃)`.
    pub omega: Vec<f64>,
    /// `m̃ = g(φᵀγ̃ + r̃)`.
    pub m: Vec<f64>,
    /// `ğ(m̃) = ġ(φᵀγ̃ + r̃)`.
    pub breve_m: Vec<f64>,
}

impl PreliminaryFit {
    pub fn alpha(&self) -> &[f64] {
        &self.theta_w[..self.p_psi]
    }

    pub fn eta(&self) -> &[f64] {
        &self.theta_w[self.p_psi..]
    }

    pub fn gamma(&self) -> &[f64] {
        &self.theta_m[..self.p_phi]
    }

    pub fn xi(&self) -> &[f64] {
        &self.theta_m[self.p_phi..]
    }

    pub fn h_tilde(&self, z: &[f64]) -> Result<f64> {
        Ok(dot(&self.basis_w.eval(z)?, self.eta()))
    }

    pub fn r_tilde(&self, z: &[f64]) -> Result<f64> {
        Ok(dot(&self.basis_m.eval(z)?, self.xi()))
    }

    pub fn values(&self, pop: &PopulationDesign) -> Result<PrelimValues> {
        let n = pop.len();
        let mut out = PrelimValues {
            lin_w: Vec::with_capacity(n),
            h: Vec::with_capacity(n),
            lin_m: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            omega: Vec::with_capacity(n),
            m: Vec::with_capacity(n),
            breve_m: Vec::with_capacity(n),
        };
        let mut bw = vec![0.0; self.eta().len()];
        let mut bm = vec![0.0; self.xi().len()];
        for i in 0..n {
            let z = pop.z.row(i);
            self.basis_w.eval_into(z, &mut bw)?;
            self.basis_m.eval_into(z, &mut bm)?;
            let lin_w = dot(pop.psi.row(i), self.alpha());
            let h = dot(&bw, self.eta());
            let lin_m = dot(pop.phi.row(i), self.gamma());
            let r = dot(&bm, self.xi());
            out.omega.push((lin_w + h).exp());
            out.m.push(self.link.eval(lin_m + r));
            out.breve_m.push(self.link.deriv(lin_m + r));
            out.lin_w.push(lin_w);
            out.h.push(h);
            out.lin_m.push(lin_m);
            out.r.push(r);
        }
        Ok(out)
    }
}

fn augment(base: &Rows, z: &Rows, basis: &Basis) -> Result<Rows> {
    let b = basis.eval_rows(z.as_slice(), z.ncols())?;
    base.hcat(&Rows::new(basis.n_columns()?, b)?)
}

/// `θ_w` on a training fold: exponential tilt of `(ψ, b_w(Z))` matching the
/// target mean. Knots are placed on the pooled training and target `Z`.
pub fn fit_density_ratio_prelim(
    train: &PopulationDesign,
    target: &PopulationDesign,
    basis: BasisSpec,
    ridge: f64,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, Basis, f64)> {
    if train.is_empty() || target.is_empty() {
        return Err(AtrelError::Data("density-ratio fit needs source and target rows".into()));
    }
    let pooled = train.z.stack(&target.z)?;
    let basis = Basis::fitted(basis, pooled.as_slice(), pooled.ncols())?;
    let psi_src = augment(&train.psi, &train.z, &basis)?;
    let psi_tgt = augment(&target.psi, &target.z, &basis)?;
    let inv_big_n = 1.0 / psi_tgt.nrows() as f64;
    let mut target_mean = vec![0.0; psi_tgt.ncols()];
    for row in psi_tgt.iter_rows() {
        for (m, v) in target_mean.iter_mut().zip(row) {
            *m += v * inv_big_n;
        }
    }
    let sol = solve_exponential_tilt(&psi_src, &target_mean, ridge, opts).context("density-ratio preliminary fit")?;
    Ok((sol.x, basis, sol.residual_norm))
}

/// `θ_m` on a training fold: ridge GLM of `Y` on `(φ, b_m(Z))`.
pub fn fit_imputation_prelim(
    train: &PopulationDesign,
    y: &[f64],
    link: Link,
    basis: BasisSpec,
    ridge: f64,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, Basis, f64)> {
    if train.is_empty() {
        return Err(AtrelError::Data("imputation fit on an empty source fold".into()));
    }
    let basis = Basis::fitted(basis, train.z.as_slice(), train.z.ncols())?;
    let phi = augment(&train.phi, &train.z, &basis)?;
    let sol = solve_ridge_glm(&phi, y, link, ridge, opts).context("imputation preliminary fit")?;
    Ok((sol.x, basis, sol.residual_norm))
}

/// Settings needed for the preliminary fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrelimSettings {
    pub link: Link,
    pub basis_w: BasisSpec,
    pub basis_m: BasisSpec,
    pub ridge_w: f64,
    pub ridge_m: f64,
}

pub fn fit_preliminary(
    train: &PopulationDesign,
    y: &[f64],
    target: &PopulationDesign,
    settings: &PrelimSettings,
    opts: &NewtonOptions,
) -> Result<PreliminaryFit> {
    let (theta_w, basis_w, weight_residual) = fit_density_ratio_prelim(train, target, settings.basis_w, settings.ridge_w, opts)?;
    let (theta_m, basis_m, imputation_residual) = fit_imputation_prelim(train, y, settings.link, settings.basis_m, settings.ridge_m, opts)?;
    Ok(PreliminaryFit {
        theta_w,
        theta_m,
        basis_w,
        basis_m,
        p_psi: train.psi.ncols(),
        p_phi: train.phi.ncols(),
        link: settings.link,
        weight_residual,
        imputation_residual,
    })
}

/// Solves `(1/n) Σ_src ω̃ A (Y - m̃) + (1/N) Σ_tgt A (m̃ - g(Aᵀβ)) = 0`.
///
/// `src_a`, `y`, `omega`, `m_src` describe the source rows entering the
/// augmentation term (normalized by their count); `tgt_a`, `m_tgt` the target.
#[allow(clippy::too_many_arguments)]
pub fn solve_preliminary_beta(
    src_a: &Rows,
    y: &[f64],
    omega: &[f64],
    m_src: &[f64],
    tgt_a: &Rows,
    m_tgt: &[f64],
    link: Link,
    x0: Option<&[f64]>,
    opts: &NewtonOptions,
) -> Result<NewtonSolution> {
    let rhs = dr_rhs(src_a, y, omega, m_src, 1.0 / src_a.nrows() as f64, tgt_a, m_tgt)?;
    let weights = vec![1.0 / tgt_a.nrows() as f64; tgt_a.nrows()];
    let start = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; tgt_a.ncols()]);
    solve_mean_equation(tgt_a, &weights, link, &rhs, &start, opts)
}

/// `src_scale Σ_src ω A (Y - m) + (1/N) Σ_tgt A m`: the β-free part of the
/// doubly robust equation.
pub fn dr_rhs(src_a: &Rows, y: &[f64], omega: &[f64], m_src: &[f64], src_scale: f64, tgt_a: &Rows, m_tgt: &[f64]) -> Result<Vec<f64>> {
    if src_a.nrows() == 0 || tgt_a.nrows() == 0 {
        return Err(AtrelError::Data("doubly robust equation needs source and target rows".into()));
    }
    let d = tgt_a.ncols();
    let mut rhs = vec![0.0; d];
    for i in 0..src_a.nrows() {
        let s = src_scale * omega[i] * (y[i] - m_src[i]);
        for (r, a) in rhs.iter_mut().zip(src_a.row(i)) {
            *r += s * a;
        }
    }
    let inv_big_n = 1.0 / tgt_a.nrows() as f64;
    for i in 0..tgt_a.nrows() {
        let s = inv_big_n * m_tgt[i];
        for (r, a) in rhs.iter_mut().zip(tgt_a.row(i)) {
            *r += s * a;
        }
    }
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_rows(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Rows {
        let mut r = Rows::zeros(0, 2);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(rng);
            r.push_row(&[1.0, x + shift]).unwrap();
        }
        r
    }

    fn column_mean(r: &Rows) -> Vec<f64> {
        let n = r.nrows() as f64;
        (0..r.ncols()).map(|j| r.column(j).iter().sum::<f64>() / n).collect()
    }

    #[test]
    fn identical_populations_give_unit_ratio() {
        let psi = Rows::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        let sol = solve_exponential_tilt(&psi, &[1.0], 0.0, &NewtonOptions::default()).unwrap();
        assert_relative_eq!(sol.x[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_tilt_recovers_mean_shift() {
        // target N(mu, 1) over source N(0, 1): ratio exp(mu x - mu^2 / 2)
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mu = 0.5;
        let src = normal_rows(&mut rng, 50_000, 0.0);
        let tgt = normal_rows(&mut rng, 50_000, mu);
        let sol = solve_exponential_tilt(&src, &column_mean(&tgt), 0.0, &NewtonOptions::default()).unwrap();
        assert!((sol.x[1] - mu).abs() < 0.03, "{:?}", sol.x);
        assert!((sol.x[0] + mu * mu / 2.0).abs() < 0.03, "{:?}", sol.x);
        assert!(sol.residual_norm <= 1e-10);
    }

    #[test]
    fn heavy_ridge_shrinks_slopes_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = normal_rows(&mut rng, 500, 0.0);
        let tgt = normal_rows(&mut rng, 500, 1.0);
        let sol = solve_exponential_tilt(&src, &column_mean(&tgt), 1e8, &NewtonOptions::default()).unwrap();
        assert!(sol.x[1].abs() < 1e-7);
        assert!(sol.residual_norm <= 1e-10);
        // intercept equation alone: mean of exp(θ₀) = 1
        assert_relative_eq!(sol.x[0], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn constant_response_identity() {
        let phi = Rows::from_rows(&[[1.0], [1.0], [1.0], [1.0]]).unwrap();
        let y = [Link::Logit.eval(0.7); 4];
        let sol = solve_ridge_glm(&phi, &y, Link::Identity, 0.0, &NewtonOptions::default()).unwrap();
        assert_eq!(sol.x[0], Link::Logit.eval(0.7));
    }

    /// Plain iteratively reweighted least squares for logistic regression.
    fn irls(x: &Rows, y: &[f64]) -> Vec<f64> {
        use nalgebra::{DMatrix, DVector};
        let p = x.ncols();
        let xm = x.to_matrix();
        let yv = DVector::from_column_slice(y);
        let mut beta = DVector::zeros(p);
        for _ in 0..100 {
            let eta = &xm * &beta;
            let mu = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
            let w = mu.map(|m| m * (1.0 - m));
            let z = &eta + (&yv - &mu).component_div(&w);
            let wx = DMatrix::from_fn(xm.nrows(), p, |i, j| xm[(i, j)] * w[i]);
            let lhs = xm.transpose() * &wx;
            let rhs = wx.transpose() * z;
            let next = lhs.lu().solve(&rhs).unwrap();
            if (&next - &beta).amax() < 1e-14 {
                beta = next;
                break;
            }
            beta = next;
        }
        beta.iter().copied().collect()
    }

    #[test]
    fn ridge_free_logistic_matches_irls() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = normal_rows(&mut rng, 300, 0.0);
        let y: Vec<f64> = x
            .iter_rows()
            .map(|r| {
                let p = Link::Logit.eval(0.3 + 0.8 * r[1]);
                if rand::Rng::gen::<f64>(&mut rng) < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let ours = solve_ridge_glm(&x, &y, Link::Logit, 0.0, &NewtonOptions::with_tol(1e-13)).unwrap();
        let oracle = irls(&x, &y);
        for (a, b) in ours.x.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{:?} vs {:?}", ours.x, oracle);
        }
    }

    #[test]
    fn infinite_ridge_leaves_intercept_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = normal_rows(&mut rng, 200, 0.0);
        let y: Vec<f64> = x.iter_rows().map(|r| if r[1] > 0.3 { 1.0 } else { 0.0 }).collect();
        let sol = solve_ridge_glm(&x, &y, Link::Logit, 1e9, &NewtonOptions::default()).unwrap();
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        assert!(sol.x[1].abs() < 1e-8);
        assert_relative_eq!(Link::Logit.eval(sol.x[0]), ybar, epsilon = 1e-8);
    }

    #[test]
    fn perfect_imputation_reduces_to_target_glm() {
        let src_a = Rows::from_rows(&[[1.0, 0.1], [1.0, -0.4], [1.0, 0.8]]).unwrap();
        let y = [0.2, 0.6, 0.9];
        let omega = [1.3, 0.7, 2.0];
        let tgt_a = Rows::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, -1.0]]).unwrap();
        let m_tgt = [0.3, 0.5, 0.8, 0.1];
        let opts = NewtonOptions::with_tol(1e-13);
        let b = solve_preliminary_beta(&src_a, &y, &omega, &y, &tgt_a, &m_tgt, Link::Logit, None, &opts).unwrap();
        let glm = crate::numerics::glm::fit_glm(&tgt_a, &m_tgt, None, Link::Logit, &opts).unwrap();
        for (a, c) in b.x.iter().zip(&glm) {
            assert_relative_eq!(a, c, epsilon = 1e-10);
        }
    }

    #[test]
    fn scalar_identity_closed_form() {
        let src_a = Rows::from_rows(&[[1.0], [1.0]]).unwrap();
        let y = [1.0, 3.0];
        let omega = [0.5, 1.5];
        let m_src = [2.0, 2.0];
        let tgt_a = Rows::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        let m_tgt = [1.0, 2.0, 6.0];
        let b = solve_preliminary_beta(
            &src_a,
            &y,
            &omega,
            &m_src,
            &tgt_a,
            &m_tgt,
            Link::Identity,
            None,
            &NewtonOptions::default(),
        )
        .unwrap();
        let expected = 3.0 + (0.5 * -1.0 + 1.5 * 1.0) / 2.0;
        assert_relative_eq!(b.x[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn preliminary_beta_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let src_a = normal_rows(&mut rng, 20, 0.0);
        let tgt_a = normal_rows(&mut rng, 20, 0.3);
        let y: Vec<f64> = src_a.iter_rows().map(|r| Link::Logit.eval(1.2 * r[1] + 0.3)).collect();
        let omega: Vec<f64> = src_a.iter_rows().map(|r| (0.3 * r[1]).exp()).collect();
        let m_src: Vec<f64> = src_a.iter_rows().map(|r| Link::Logit.eval(1.5 * r[1])).collect();
        let m_tgt: Vec<f64> = tgt_a.iter_rows().map(|r| Link::Logit.eval(1.5 * r[1])).collect();
        let sol = solve_preliminary_beta(
            &src_a,
            &y,
            &omega,
            &m_src,
            &tgt_a,
            &m_tgt,
            Link::Logit,
            None,
            &NewtonOptions::default(),
        )
        .unwrap();
        let rhs = dr_rhs(&src_a, &y, &omega, &m_src, 1.0 / 20.0, &tgt_a, &m_tgt).unwrap();
        let w = vec![1.0 / 20.0; 20];
        let norm = |b: &[f64]| {
            crate::numerics::glm::mean_residual(&tgt_a, &w, Link::Logit, &rhs, b)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
        };
        // nested grid refinement over a coefficient box
        let (mut c, mut half) = ([0.0, 0.0], 4.0);
        for _ in 0..40 {
            let mut best = (f64::INFINITY, c);
            for i in -10..=10 {
                for j in -10..=10 {
                    let b = [c[0] + half * i as f64 / 10.0, c[1] + half * j as f64 / 10.0];
                    let v = norm(&b);
                    if v < best.0 {
                        best = (v, b);
                    }
                }
            }
            c = best.1;
            half *= 0.3;
        }
        assert!(
            (sol.x[0] - c[0]).abs() < 1e-3 && (sol.x[1] - c[1]).abs() < 1e-3,
            "{:?} vs {c:?}",
            sol.x
        );
    }
}
