//! Root finders for the estimating equations.
//!
//! `newton_solve` handles vector systems with caller-supplied Jacobians and a
//! step-halving line search on the Euclidean residual norm. `scalar_root` is a
//! bracketing Brent solver and `safeguarded_newton` the derivative-aware
//! variant used for the per-point calibration equations.

use nalgebra::{DMatrix, DVector};

use crate::error::{AtrelError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Convergence threshold on the sup-norm of the residual.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            max_halvings: 30,
        }
    }
}

impl NewtonOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm of the residual at `x`.
    pub residual_norm: f64,
    /// Euclidean residual norm of every accepted iterate, starting at `x0`.
    pub accepted_norms: Vec<f64>,
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `J d = rhs`, trying Cholesky first and falling back to LU.
pub fn solve_linear(jacobian: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = jacobian.clone().cholesky() {
        let d = chol.solve(rhs);
        if d.iter().all(|v| v.is_finite()) {
            return Some(d);
        }
    }
    let lu = jacobian.clone().lu();
    let d = lu.solve(rhs)?;
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Newton's method with step halving: a step is accepted only if it strictly
/// decreases `‖residual‖₂`; at most `max_halvings` halvings are tried.
pub fn newton_solve<R, J>(mut residual: R, mut jacobian: J, x0: &[f64], opts: &NewtonOptions) -> Result<NewtonSolution>
where
    R: FnMut(&[f64]) -> Vec<f64>,
    J: FnMut(&[f64]) -> DMatrix<f64>,
{
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(AtrelError::Config("newton_solve: non-finite starting point".into()));
    }
    let mut x = x0.to_vec();
    let mut f = residual(&x);
    if f.len() != x.len() {
        return Err(AtrelError::Config(format!(
            "newton_solve: residual has length {} for {} unknowns",
            f.len(),
            x.len()
        )));
    }
    let mut norm = l2_norm(&f);
    let mut accepted = vec![norm];
    if !norm.is_finite() {
        return Err(convergence("newton_solve: non-finite residual at start", 0, norm, x));
    }
    for iter in 1..=opts.max_iter {
        if sup_norm(&f) <= opts.tol {
            return Ok(NewtonSolution {
                residual_norm: sup_norm(&f),
                x,
                iterations: iter - 1,
                accepted_norms: accepted,
            });
        }
        let jac = jacobian(&x);
        let rhs = -DVector::from_column_slice(&f);
        let Some(step) = solve_linear(&jac, &rhs) else {
            return Err(convergence("newton_solve: singular Jacobian", iter, sup_norm(&f), x));
        };
        let mut scale = 1.0;
        let mut next = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, di)| xi + scale * di).collect();
            let f_trial = residual(&trial);
            let n_trial = l2_norm(&f_trial);
            if n_trial.is_finite() && n_trial < norm {
                next = Some((trial, f_trial, n_trial));
                break;
            }
            scale *= 0.5;
        }
        match next {
            Some((xn, fn_, nn)) => {
                x = xn;
                f = fn_;
                norm = nn;
                accepted.push(nn);
            }
            None => {
                return Err(convergence("newton_solve: line search failed", iter, sup_norm(&f), x));
            }
        }
    }
    if sup_norm(&f) <= opts.tol {
        return Ok(NewtonSolution {
            residual_norm: sup_norm(&f),
            x,
            iterations: opts.max_iter,
            accepted_norms: accepted,
        });
    }
    Err(convergence("newton_solve: iteration limit reached", opts.max_iter, sup_norm(&f), x))
}

fn convergence(context: &str, iterations: usize, residual_norm: f64, x: Vec<f64>) -> AtrelError {
    AtrelError::Convergence {
        context: context.to_string(),
        iterations,
        residual_norm,
        last_iterate: x,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarRootOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// The bracket is expanded (by doubling its width) until both ends would
    /// leave `[-expansion_limit, expansion_limit]`.
    pub expansion_limit: f64,
}

impl Default for ScalarRootOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200,
            expansion_limit: 1e6,
        }
    }
}

/// Brent root of `f` on `[lo, hi]` with bracket expansion when `f(lo)` and
/// `f(hi)` share a sign.
pub fn scalar_root<F: FnMut(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    scalar_root_with(f, lo, hi, &ScalarRootOptions { tol, ..Default::default() })
}

pub fn scalar_root_with<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, opts: &ScalarRootOptions) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(AtrelError::Config(format!("scalar_root: invalid bracket [{lo}, {hi}]")));
    }
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa.abs() <= opts.tol {
        return Ok(a);
    }
    if fb.abs() <= opts.tol {
        return Ok(b);
    }
    while fa * fb > 0.0 || fa.is_nan() || fb.is_nan() {
        let width = b - a;
        let (na, nb) = (a - width, b + width);
        if na < -opts.expansion_limit && nb > opts.expansion_limit {
            return Err(AtrelError::NoRoot { lo: a, hi: b });
        }
        if na >= -opts.expansion_limit {
            a = na;
            fa = f(a);
        }
        if nb <= opts.expansion_limit {
            b = nb;
            fb = f(b);
        }
    }
    brent(&mut f, a, b, fa, fb, opts)
}

fn brent<F: FnMut(f64) -> f64>(f: &mut F, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64, opts: &ScalarRootOptions) -> Result<f64> {
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..opts.max_iter {
        if fb.abs() <= opts.tol {
            return Ok(b);
        }
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5e-300;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 {
            // bracket collapsed onto adjacent doubles
            if fb.abs() <= opts.tol {
                return Ok(b);
            }
            return Err(AtrelError::Convergence {
                context: "scalar_root: bracket collapsed above tolerance".into(),
                iterations: opts.max_iter,
                residual_norm: fb.abs(),
                last_iterate: vec![b],
            });
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Err(AtrelError::Convergence {
        context: "scalar_root: iteration limit reached".into(),
        iterations: opts.max_iter,
        residual_norm: fb.abs(),
        last_iterate: vec![b],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotoneRoot {
    pub root: f64,
    pub value: f64,
    pub iterations: usize,
}

/// Root of a strictly monotone scalar function given value and derivative.
/// Newton steps are taken from `x0`; once a sign change is located the search
/// is confined to the bracket and falls back to bisection whenever a Newton
/// step leaves it. Stops when `|f| <= tol` or the step falls below `xtol`.
pub fn safeguarded_newton<F: FnMut(f64) -> (f64, f64)>(
    mut f: F,
    x0: f64,
    tol: f64,
    xtol: f64,
    expansion_limit: f64,
) -> Result<MonotoneRoot> {
    let (mut x, (mut fx, mut dfx)) = (x0, f(x0));
    if !fx.is_finite() {
        return Err(AtrelError::Config(format!("safeguarded_newton: f({x0}) is not finite")));
    }
    let mut iterations = 0;
    if fx.abs() <= tol {
        return Ok(MonotoneRoot {
            root: x,
            value: fx,
            iterations,
        });
    }
    // low/high ends where f < 0 and f > 0 respectively
    let mut neg: Option<f64> = None;
    let mut pos: Option<f64> = None;
    let record = |x: f64, fx: f64, neg: &mut Option<f64>, pos: &mut Option<f64>| {
        if fx < 0.0 {
            *neg = Some(x);
        } else if fx > 0.0 {
            *pos = Some(x);
        }
    };
    record(x, fx, &mut neg, &mut pos);
    let mut step_size = 1.0f64;
    for _ in 0..400 {
        iterations += 1;
        let newton = if dfx != 0.0 && dfx.is_finite() { Some(x - fx / dfx) } else { None };
        let next = match (neg, pos) {
            (Some(a), Some(b)) => {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                match newton {
                    Some(xn) if xn > lo && xn < hi => xn,
                    _ => 0.5 * (lo + hi),
                }
            }
            _ => {
                // no bracket yet: Newton, capped by a doubling trust step
                let dir = match newton {
                    Some(xn) => (xn - x).signum(),
                    None => {
                        if fx > 0.0 {
                            -1.0
                        } else {
                            1.0
                        }
                    }
                };
                let proposed = newton.map(|xn| (xn - x).abs()).unwrap_or(step_size);
                let len = proposed.min(step_size.max(1.0));
                step_size *= 2.0;
                let xn = x + dir * len;
                if xn.abs() > expansion_limit {
                    return Err(AtrelError::NoRoot {
                        lo: x.min(xn),
                        hi: x.max(xn),
                    });
                }
                xn
            }
        };
        let (fn_, dfn) = f(next);
        if !fn_.is_finite() {
            return Err(AtrelError::Convergence {
                context: "safeguarded_newton: non-finite function value".into(),
                iterations,
                residual_norm: f64::INFINITY,
                last_iterate: vec![next],
            });
        }
        let moved = (next - x).abs();
        x = next;
        fx = fn_;
        dfx = dfn;
        record(x, fx, &mut neg, &mut pos);
        if fx.abs() <= tol || moved <= xtol * (1.0 + x.abs()) {
            return Ok(MonotoneRoot {
                root: x,
                value: fx,
                iterations,
            });
        }
        if let (Some(a), Some(b)) = (neg, pos) {
            if (a - b).abs() <= xtol * (1.0 + x.abs()) {
                return Ok(MonotoneRoot {
                    root: x,
                    value: fx,
                    iterations,
                });
            }
        }
    }
    Err(AtrelError::Convergence {
        context: "safeguarded_newton: iteration limit reached".into(),
        iterations,
        residual_norm: fx.abs(),
        last_iterate: vec![x],
    })
}
