use nalgebra::DMatrix;

use super::design::{rank_one_upper, symmetric_from_upper, Rows};
use super::link::Link;
use super::solve::{newton_solve, NewtonOptions, NewtonSolution};
use crate::error::{AtrelError, Result};

/// Solves `Σᵢ wᵢ aᵢ g(aᵢᵀβ) = rhs` for β.
///
/// Every estimating equation with a `g(Aᵀβ)` term that is linear in the
/// remaining quantities reduces to this form: plain and weighted GLM scores,
/// the augmented doubly robust equation and its cross-fitted variant. The
/// residual is `rhs - Σ wᵢ aᵢ g(aᵢᵀβ)`, so its Jacobian is
/// `-Σ wᵢ ġ(aᵢᵀβ) aᵢaᵢᵀ`.
pub fn solve_mean_equation(
    rows: &Rows,
    weights: &[f64],
    link: Link,
    rhs: &[f64],
    x0: &[f64],
    opts: &NewtonOptions,
) -> Result<NewtonSolution> {
    let p = rows.ncols();
    if weights.len() != rows.nrows() {
        return Err(AtrelError::Config(format!("{} weights for {} rows", weights.len(), rows.nrows())));
    }
    if rhs.len() != p || x0.len() != p {
        return Err(AtrelError::Config("mean equation dimension mismatch".into()));
    }
    newton_solve(
        |beta| mean_residual(rows, weights, link, rhs, beta),
        |beta| mean_jacobian(rows, weights, link, beta),
        x0,
        opts,
    )
}

pub fn mean_residual(rows: &Rows, weights: &[f64], link: Link, rhs: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut out = rhs.to_vec();
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let a = rows.row(i);
        let mu = link.eval(rows.dot_row(i, beta));
        for (o, aj) in out.iter_mut().zip(a) {
            *o -= w * aj * mu;
        }
    }
    out
}

pub fn mean_jacobian(rows: &Rows, weights: &[f64], link: Link, beta: &[f64]) -> DMatrix<f64> {
    let p = rows.ncols();
    let mut acc = vec![0.0; p * p];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let d = link.deriv(rows.dot_row(i, beta));
        rank_one_upper(&mut acc, p, rows.row(i), w * d);
    }
    symmetric_from_upper(&acc, p, -1.0)
}

/// `Σᵢ wᵢ aᵢ vᵢ`.
pub fn weighted_moment(rows: &Rows, weights: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows.ncols()];
    for i in 0..rows.nrows() {
        let s = weights[i] * values[i];
        for (o, a) in out.iter_mut().zip(rows.row(i)) {
            *o += s * a;
        }
    }
    out
}

/// Weighted GLM: solves `Σ wᵢ aᵢ (yᵢ - g(aᵢᵀβ)) = 0`. Weights are normalized
/// to mean one internally so the tolerance is on the averaged score.
pub fn fit_glm(rows: &Rows, y: &[f64], weights: Option<&[f64]>, link: Link, opts: &NewtonOptions) -> Result<Vec<f64>> {
    let n = rows.nrows();
    if n == 0 {
        return Err(AtrelError::Data("GLM fit on an empty sample".into()));
    }
    if y.len() != n {
        return Err(AtrelError::Config("response length does not match design".into()));
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(AtrelError::Data("GLM weights sum to a nonpositive value".into()));
            }
            w.iter().map(|v| v / total).collect()
        }
        None => vec![1.0 / n as f64; n],
    };
    let rhs = weighted_moment(rows, &w, y);
    let x0 = glm_start(rows, &w, y, link);
    Ok(solve_mean_equation(rows, &w, link, &rhs, &x0, opts)?.x)
}

/// Intercept-only start at `g⁻¹(ȳ)` when the first column is constant.
fn glm_start(rows: &Rows, w: &[f64], y: &[f64], link: Link) -> Vec<f64> {
    let mut x0 = vec![0.0; rows.ncols()];
    let has_intercept = rows.nrows() > 0 && rows.iter_rows().all(|r| r[0] == 1.0);
    if has_intercept {
        let ybar: f64 = w.iter().zip(y).map(|(a, b)| a * b).sum();
        let clipped = match link {
            Link::Logit => ybar.clamp(1e-6, 1.0 - 1e-6),
            Link::Identity => ybar,
        };
        if let Ok(v) = link.inverse(clipped) {
            x0[0] = v;
        }
    }
    x0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_glm_is_least_squares() {
        let rows = Rows::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]]).unwrap();
        let y = [1.0, 3.0, 2.0, 5.0];
        let b = fit_glm(&rows, &y, None, Link::Identity, &NewtonOptions::default()).unwrap();
        // closed form: slope = cov/var = 1.1, intercept = 2.75 - 1.1*1.5
        assert_relative_eq!(b[1], 1.1, epsilon = 1e-10);
        assert_relative_eq!(b[0], 2.75 - 1.65, epsilon = 1e-10);
    }

    #[test]
    fn constant_fractional_response() {
        let rows = Rows::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        let y = [Link::Logit.eval(0.3); 3];
        let b = fit_glm(&rows, &y, None, Link::Logit, &NewtonOptions::with_tol(1e-14)).unwrap();
        assert_relative_eq!(b[0], 0.3, epsilon = 1e-10);
    }

    #[test]
    fn separated_data_diverges_or_fails() {
        // the score vanishes only as the slope runs off to infinity
        let rows = Rows::from_rows(&[[1.0, -1.0], [1.0, -0.5], [1.0, 0.5], [1.0, 1.0]]).unwrap();
        let y = [0.0, 0.0, 1.0, 1.0];
        match fit_glm(&rows, &y, None, Link::Logit, &NewtonOptions::default()) {
            Ok(b) => assert!(b[1] > 10.0, "{b:?}"),
            Err(e) => assert!(e.is_convergence()),
        }
    }
}
