//! Sieve calibration: the localized moments are replaced by moments against
//! every basis function, giving one coefficient vector per κ group.

use crate::error::{AtrelError, Result, ResultExt};
use crate::numerics::design::{dot, rank_one_upper, symmetric_from_upper};
use crate::numerics::{newton_solve, Link, NewtonOptions, Rows};

/// Rows of one κ group with their basis expansions.
#[derive(Debug, Clone, PartialEq)]
pub struct SieveGroup {
    pub n_train: usize,
    pub n_target: usize,
    /// Basis rows `b(Zᵢ)` of the source rows for the imputation component.
    pub src_basis_r: Rows,
    /// Basis rows of the source rows for the density-ratio component.
    pub src_basis_h: Rows,
    pub src_y: Vec<f64>,
    /// `φᵀγ̂`.
    pub src_offset: Vec<f64>,
    /// `κ ω̃`.
    pub src_r_weight: Vec<f64>,
    /// `κ ğ(m̃) exp(ψᵀα̂)`.
    pub src_h_weight: Vec<f64>,
    pub tgt_basis_h: Rows,
    /// `κ ğ(m̃)`.
    pub tgt_h_weight: Vec<f64>,
}

/// Jacobian jitter relative to its largest diagonal entry; it only changes
/// the Newton direction, never the root.
const JITTER: f64 = 1e-10;

fn jitter(m: &mut nalgebra::DMatrix<f64>) {
    let p = m.nrows();
    let scale = (0..p).map(|j| m[(j, j)].abs()).fold(0.0, f64::max);
    let sign = if (0..p).map(|j| m[(j, j)]).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let eps = JITTER * scale.max(1e-300);
    for j in 0..p {
        m[(j, j)] += sign * eps;
    }
}

/// `ξ` solving `(1/n) Σ κω̃ b(Z) [Y - g(φᵀγ̂ + bᵀξ)] = 0`.
pub fn solve_sieve_r(group: &SieveGroup, link: Link, opts: &NewtonOptions) -> Result<Vec<f64>> {
    let b = &group.src_basis_r;
    let p = b.ncols();
    let inv_n = 1.0 / group.n_train as f64;
    let residual = |xi: &[f64]| {
        let mut out = vec![0.0; p];
        for i in 0..b.nrows() {
            let row = b.row(i);
            let s = inv_n * group.src_r_weight[i] * (group.src_y[i] - link.eval(group.src_offset[i] + dot(row, xi)));
            for (o, v) in out.iter_mut().zip(row) {
                *o += s * v;
            }
        }
        out
    };
    let jacobian = |xi: &[f64]| {
        let mut acc = vec![0.0; p * p];
        for i in 0..b.nrows() {
            let row = b.row(i);
            let d = link.deriv(group.src_offset[i] + dot(row, xi));
            rank_one_upper(&mut acc, p, row, group.src_r_weight[i] * d);
        }
        let mut m = symmetric_from_upper(&acc, p, -inv_n);
        jitter(&mut m);
        m
    };
    Ok(newton_solve(residual, jacobian, &vec![0.0; p], opts)
        .context("sieve imputation calibration")?
        .x)
}

/// `η` solving `(1/n) Σ κğ(m̃)e^{ψᵀα̂} e^{bᵀη} b = (1/N) Σ_tgt κğ(m̃) b`.
pub fn solve_sieve_h(group: &SieveGroup, opts: &NewtonOptions) -> Result<Vec<f64>> {
    let b = &group.src_basis_h;
    let p = b.ncols();
    if group.tgt_basis_h.ncols() != p {
        return Err(AtrelError::Config("source and target sieve bases differ in width".into()));
    }
    let inv_n = 1.0 / group.n_train as f64;
    let inv_big_n = 1.0 / group.n_target as f64;
    let mut target = vec![0.0; p];
    for j in 0..group.tgt_basis_h.nrows() {
        let s = inv_big_n * group.tgt_h_weight[j];
        for (t, v) in target.iter_mut().zip(group.tgt_basis_h.row(j)) {
            *t += s * v;
        }
    }
    let residual = |eta: &[f64]| {
        let mut out: Vec<f64> = target.iter().map(|t| -t).collect();
        for i in 0..b.nrows() {
            let row = b.row(i);
            let s = inv_n * group.src_h_weight[i] * dot(row, eta).exp();
            for (o, v) in out.iter_mut().zip(row) {
                *o += s * v;
            }
        }
        out
    };
    let jacobian = |eta: &[f64]| {
        let mut acc = vec![0.0; p * p];
        for i in 0..b.nrows() {
            let row = b.row(i);
            rank_one_upper(&mut acc, p, row, group.src_h_weight[i] * dot(row, eta).exp());
        }
        let mut m = symmetric_from_upper(&acc, p, inv_n);
        jitter(&mut m);
        m
    };
    Ok(newton_solve(residual, jacobian, &vec![0.0; p], opts)
        .context("sieve density-ratio calibration")?
        .x)
}

/// `(ξ̂, η̂)` for one group.
pub fn calibrate_sieve(group: &SieveGroup, link: Link, opts: &NewtonOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((solve_sieve_r(group, link, opts)?, solve_sieve_h(group, opts)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn group(rng: &mut ChaCha8Rng, basis: impl Fn(f64) -> Vec<f64>, link: Link) -> SieveGroup {
        let n = 60;
        let mut rows_r = Rows::default();
        let mut tgt = Rows::default();
        let (mut y, mut off, mut rw, mut hw, mut tw) = (vec![], vec![], vec![], vec![], vec![]);
        for _ in 0..n {
            let z: f64 = rng.gen_range(-2.0..2.0);
            rows_r.push_row(&basis(z)).unwrap();
            y.push(match link {
                Link::Logit => f64::from(u8::from(rng.gen::<f64>() < 0.4)),
                Link::Identity => z.sin() + rng.gen_range(-0.5..0.5),
            });
            off.push(rng.gen_range(-0.5..0.5));
            rw.push(rng.gen_range(0.2..2.0));
            hw.push(rng.gen_range(0.05..0.25));
            let zt: f64 = rng.gen_range(-2.0..2.0);
            tgt.push_row(&basis(zt)).unwrap();
            tw.push(rng.gen_range(0.05..0.25));
        }
        SieveGroup {
            n_train: n,
            n_target: n,
            src_basis_h: rows_r.clone(),
            src_basis_r: rows_r,
            src_y: y,
            src_offset: off,
            src_r_weight: rw,
            src_h_weight: hw,
            tgt_basis_h: tgt,
            tgt_h_weight: tw,
        }
    }

    #[test]
    fn zero_basis_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = group(&mut rng, |_| vec![0.0], Link::Logit);
        let (xi, eta) = calibrate_sieve(&g, Link::Logit, &NewtonOptions::default()).unwrap();
        assert_eq!(xi, vec![0.0]);
        assert_eq!(eta, vec![0.0]);
    }

    #[test]
    fn identity_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = group(&mut rng, |z| vec![1.0, z, z * z], Link::Identity);
        let xi = solve_sieve_r(&g, Link::Identity, &NewtonOptions::with_tol(1e-13)).unwrap();
        let b = g.src_basis_r.to_matrix();
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(&g.src_r_weight));
        let resp = DVector::from_iterator(g.src_y.len(), g.src_y.iter().zip(&g.src_offset).map(|(y, o)| y - o));
        let lhs = b.transpose() * &w * &b;
        let rhs = b.transpose() * &w * resp;
        let oracle = lhs.lu().solve(&rhs).unwrap();
        for (a, o) in xi.iter().zip(oracle.iter()) {
            assert!((a - o).abs() < 1e-8);
        }
    }

    #[test]
    fn logit_and_tilt_residuals_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = group(&mut rng, |z| vec![1.0, z], Link::Logit);
        let opts = NewtonOptions::default();
        let (xi, eta) = calibrate_sieve(&g, Link::Logit, &opts).unwrap();
        let mut m = [0.0; 2];
        for i in 0..60 {
            let row = g.src_basis_r.row(i);
            let s = g.src_r_weight[i] * (g.src_y[i] - Link::Logit.eval(g.src_offset[i] + dot(row, &xi))) / 60.0;
            m[0] += s * row[0];
            m[1] += s * row[1];
        }
        assert!(m.iter().all(|v| v.abs() < 1e-8));
        assert!(eta.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn negative_weights_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = group(&mut rng, |z| vec![1.0, z], Link::Logit);
        g.src_r_weight.iter_mut().for_each(|w| *w = -*w);
        g.src_h_weight.iter_mut().for_each(|w| *w = -*w);
        g.tgt_h_weight.iter_mut().for_each(|w| *w = -*w);
        assert!(calibrate_sieve(&g, Link::Logit, &NewtonOptions::default()).is_ok());
    }
}
