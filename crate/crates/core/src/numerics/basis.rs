//! Constant-free basis expansions `b(z)` for the nonparametric components.
//!
//! Two families are provided: additive natural cubic splines with quantile
//! knots (one block of `df` columns per coordinate of `z`) and a tensor
//! product of probabilists' Hermite polynomials. Neither ever emits a constant
//! column; the intercept belongs to the parametric part of each model.

use serde::{Deserialize, Serialize};

use crate::error::{AtrelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    NaturalCubicSpline,
    HermiteTensor,
}

/// Family plus size. For natural splines `degrees_of_freedom` counts columns
/// per coordinate; for Hermite it is the maximal per-coordinate order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub degrees_of_freedom: usize,
}

impl BasisSpec {
    pub fn natural_spline(df: usize) -> Self {
        Self {
            family: BasisFamily::NaturalCubicSpline,
            degrees_of_freedom: df,
        }
    }

    pub fn hermite(order: usize) -> Self {
        Self {
            family: BasisFamily::HermiteTensor,
            degrees_of_freedom: order,
        }
    }

    /// Number of emitted columns for a `dim`-dimensional `z`.
    pub fn n_columns(&self, dim: usize) -> usize {
        match self.family {
            BasisFamily::NaturalCubicSpline => self.degrees_of_freedom * dim,
            BasisFamily::HermiteTensor => (self.degrees_of_freedom + 1).pow(dim as u32) - 1,
        }
    }
}

/// Knot sequence of a one-dimensional natural cubic spline: two boundary
/// knots and `df - 1` interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalSplineKnots {
    knots: Vec<f64>,
}

impl NaturalSplineKnots {
    /// Boundary knots at the sample extremes, interior knots at the
    /// `i/df` sample quantiles.
    pub fn from_quantiles(values: &[f64], df: usize) -> Result<Self> {
        if df == 0 {
            return Err(AtrelError::Config("spline degrees of freedom must be positive".into()));
        }
        if values.is_empty() {
            return Err(AtrelError::Config("cannot place knots on an empty sample".into()));
        }
        let mut sorted: Vec<f64> = values.to_vec();
        if sorted.iter().any(|v| !v.is_finite()) {
            return Err(AtrelError::Data("non-finite value in spline training data".into()));
        }
        sorted.sort_by(f64::total_cmp);
        let mut knots = Vec::with_capacity(df + 1);
        knots.push(sorted[0]);
        for i in 1..df {
            knots.push(quantile_sorted(&sorted, i as f64 / df as f64));
        }
        knots.push(sorted[sorted.len() - 1]);
        Self::new(knots)
    }

    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(AtrelError::Config("natural spline needs at least two knots".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(AtrelError::Config(format!(
                "natural spline knots must be strictly increasing, got {knots:?}"
            )));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn df(&self) -> usize {
        self.knots.len() - 1
    }

    /// Truncated-power natural spline basis without the constant:
    /// `x`, then `d_k(x) - d_{K-1}(x)` for `k = 1..K-2` where
    /// `d_k(x) = ((x-ξ_k)₊³ - (x-ξ_K)₊³) / (ξ_K - ξ_k)`.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let k = &self.knots;
        let nk = k.len();
        let last = k[nk - 1];
        let d = |j: usize| -> f64 {
            let a = (x - k[j]).max(0.0);
            let b = (x - last).max(0.0);
            (a * a * a - b * b * b) / (last - k[j])
        };
        out[0] = x;
        if nk > 2 {
            let d_last = d(nk - 2);
            for j in 0..nk - 2 {
                out[j + 1] = d(j) - d_last;
            }
        }
    }
}

/// Linear-interpolation sample quantile (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Probabilists' Hermite polynomials `He_0..=He_order` at `x`.
pub fn hermite_values(x: f64, order: usize, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if order >= 1 {
        out.push(x);
    }
    for k in 1..order {
        let next = x * out[k] - k as f64 * out[k - 1];
        out.push(next);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Fitted {
    Spline(Vec<NaturalSplineKnots>),
    Hermite { dim: usize },
}

/// A basis expansion whose knots are placed on training data by [`Basis::fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    spec: BasisSpec,
    fitted: Option<Fitted>,
}

impl Basis {
    pub fn new(spec: BasisSpec) -> Self {
        Self { spec, fitted: None }
    }

    /// Fits knots on training points (`rows` of dimension `dim`, row-major).
    pub fn fitted(spec: BasisSpec, rows: &[f64], dim: usize) -> Result<Self> {
        let mut basis = Self::new(spec);
        basis.fit(rows, dim)?;
        Ok(basis)
    }

    pub fn fit(&mut self, rows: &[f64], dim: usize) -> Result<()> {
        if dim == 0 || rows.len() % dim != 0 {
            return Err(AtrelError::Config(format!(
                "basis training data of length {} is not a multiple of dimension {dim}",
                rows.len()
            )));
        }
        if self.spec.degrees_of_freedom == 0 {
            return Err(AtrelError::Config("basis degrees of freedom must be positive".into()));
        }
        let fitted = match self.spec.family {
            BasisFamily::NaturalCubicSpline => {
                let mut per_coord = Vec::with_capacity(dim);
                for j in 0..dim {
                    let column: Vec<f64> = rows.iter().skip(j).step_by(dim).copied().collect();
                    per_coord.push(NaturalSplineKnots::from_quantiles(&column, self.spec.degrees_of_freedom)?);
                }
                Fitted::Spline(per_coord)
            }
            BasisFamily::HermiteTensor => Fitted::Hermite { dim },
        };
        self.fitted = Some(fitted);
        Ok(())
    }

    pub fn spec(&self) -> BasisSpec {
        self.spec
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    pub fn dim(&self) -> Option<usize> {
        match &self.fitted {
            Some(Fitted::Spline(k)) => Some(k.len()),
            Some(Fitted::Hermite { dim }) => Some(*dim),
            None => None,
        }
    }

    pub fn n_columns(&self) -> Result<usize> {
        Ok(self.spec.n_columns(self.dim().ok_or(AtrelError::NotFitted)?))
    }

    /// Knots of each coordinate (natural splines only).
    pub fn knots(&self) -> Option<Vec<Vec<f64>>> {
        match &self.fitted {
            Some(Fitted::Spline(k)) => Some(k.iter().map(|s| s.knots().to_vec()).collect()),
            _ => None,
        }
    }

    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_columns()?];
        self.eval_into(z, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let fitted = self.fitted.as_ref().ok_or(AtrelError::NotFitted)?;
        let dim = self.dim().unwrap_or(0);
        if z.len() != dim {
            return Err(AtrelError::Config(format!(
                "basis fitted on {dim}-dimensional z, evaluated at length {}",
                z.len()
            )));
        }
        let ncol = self.spec.n_columns(dim);
        if out.len() != ncol {
            return Err(AtrelError::Config(format!(
                "basis output buffer has length {}, expected {ncol}",
                out.len()
            )));
        }
        match fitted {
            Fitted::Spline(per_coord) => {
                let df = self.spec.degrees_of_freedom;
                for (j, knots) in per_coord.iter().enumerate() {
                    knots.eval_into(z[j], &mut out[j * df..(j + 1) * df]);
                }
            }
            Fitted::Hermite { dim } => {
                let order = self.spec.degrees_of_freedom;
                let mut tables = Vec::with_capacity(*dim);
                let mut buf = Vec::new();
                for &zj in z {
                    hermite_values(zj, order, &mut buf);
                    tables.push(buf.clone());
                }
                // multi-index in base (order + 1), skipping the all-zero index
                let base = order + 1;
                for (col, slot) in out.iter_mut().enumerate() {
                    let mut idx = col + 1;
                    let mut v = 1.0;
                    for table in &tables {
                        v *= table[idx % base];
                        idx /= base;
                    }
                    *slot = v;
                }
            }
        }
        Ok(())
    }

    /// Evaluates all rows (row-major, dimension `dim`) into a row-major matrix.
    pub fn eval_rows(&self, rows: &[f64], dim: usize) -> Result<Vec<f64>> {
        let ncol = self.n_columns()?;
        let n = if dim == 0 { 0 } else { rows.len() / dim };
        let mut out = vec![0.0; n * ncol];
        for i in 0..n {
            self.eval_into(&rows[i * dim..(i + 1) * dim], &mut out[i * ncol..(i + 1) * ncol])?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn hermite_order_two() {
        let b = Basis::fitted(BasisSpec::hermite(2), &[0.0, 1.0], 1).unwrap();
        assert_eq!(b.eval(&[0.0]).unwrap(), vec![0.0, -1.0]);
        assert_eq!(b.eval(&[2.0]).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn hermite_tensor_two_dims() {
        let b = Basis::fitted(BasisSpec::hermite(1), &[0.0, 0.0], 2).unwrap();
        // columns: He1(z1), He1(z2), He1(z1)He1(z2)
        assert_eq!(b.eval(&[2.0, 3.0]).unwrap(), vec![2.0, 3.0, 6.0]);
    }

    #[test]
    fn unfitted_basis_errors() {
        let b = Basis::new(BasisSpec::natural_spline(4));
        assert!(matches!(b.eval(&[0.0]), Err(AtrelError::NotFitted)));
    }

    #[test]
    fn spline_has_df_columns_and_no_constant() {
        let z: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        for df in 1..8 {
            let b = Basis::fitted(BasisSpec::natural_spline(df), &z, 1).unwrap();
            let rows = b.eval_rows(&z, 1).unwrap();
            assert_eq!(rows.len(), z.len() * df);
            for col in 0..df {
                let column: Vec<f64> = rows.iter().skip(col).step_by(df).copied().collect();
                let spread =
                    column.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - column.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(spread > 1e-6, "column {col} of df={df} is constant");
            }
        }
    }

    #[test]
    fn evaluation_is_bit_reproducible() {
        let z: Vec<f64> = (0..50).map(|i| i as f64 / 7.0).collect();
        let a = Basis::fitted(BasisSpec::natural_spline(5), &z, 1).unwrap();
        let b = Basis::fitted(BasisSpec::natural_spline(5), &z, 1).unwrap();
        for x in [-1.0, 0.3, 3.3, 9.0] {
            let va = a.eval(&[x]).unwrap();
            let vb = b.eval(&[x]).unwrap();
            assert!(va.iter().zip(&vb).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    /// Generic cubic truncated-power space {1, x, x², x³, (x-ξ_k)₊³} with the
    /// natural constraints (zero second and third derivative left of ξ_1 and
    /// right of ξ_K) imposed explicitly through a null-space computation.
    fn constrained_truncated_power_space(knots: &[f64]) -> impl Fn(f64) -> Vec<f64> {
        let nk = knots.len();
        let p = 4 + nk;
        // coefficient vector c over [1, x, x², x³, (x-ξ_1)₊³ ... (x-ξ_K)₊³]
        // left of ξ_1: f'' = 2c2 + 6c3 x = 0 → c2 = c3 = 0
        // right of ξ_K: c3 + Σ c_{4+k} = 0 (cubic) and Σ c_{4+k} ξ_k = 0 (quadratic)
        let mut cons = DMatrix::<f64>::zeros(4, p);
        cons[(0, 2)] = 1.0;
        cons[(1, 3)] = 1.0;
        cons[(2, 3)] = 1.0;
        for k in 0..nk {
            cons[(2, 4 + k)] = 1.0;
            cons[(3, 4 + k)] = knots[k];
        }
        let full = (cons.transpose() * cons.clone()).symmetric_eigen();
        let mut null_vecs = Vec::new();
        for (i, ev) in full.eigenvalues.iter().enumerate() {
            if ev.abs() < 1e-9 {
                null_vecs.push(full.eigenvectors.column(i).into_owned());
            }
        }
        let knots = knots.to_vec();
        move |x: f64| {
            let mut raw = vec![1.0, x, x * x, x * x * x];
            for k in &knots {
                raw.push((x - k).max(0.0).powi(3));
            }
            let raw = DVector::from_vec(raw);
            null_vecs.iter().map(|v| v.dot(&raw)).collect()
        }
    }

    #[test]
    fn natural_spline_matches_constrained_truncated_power_oracle() {
        let z: Vec<f64> = (0..400).map(|i| ((i as f64) * 0.618).fract() * 3.0 - 1.5).collect();
        let df = 4;
        let basis = Basis::fitted(BasisSpec::natural_spline(df), &z, 1).unwrap();
        let knots = basis.knots().unwrap().remove(0);
        let oracle = constrained_truncated_power_space(&knots);
        // oracle space includes the constant: dimension = df + 1
        assert_eq!(oracle(0.0).len(), df + 1);
        // regress every basis column on the oracle space over a dense grid,
        // then compare at the knots (and beyond the boundary)
        let grid: Vec<f64> = (0..=300).map(|i| -2.5 + 5.0 * i as f64 / 300.0).collect();
        let o = DMatrix::from_fn(grid.len(), df + 1, |r, c| oracle(grid[r])[c]);
        let b = DMatrix::from_fn(grid.len(), df, |r, c| basis.eval(&[grid[r]]).unwrap()[c]);
        let coef = o.clone().svd(true, true).solve(&b, 1e-12).unwrap();
        let mut checks = knots.clone();
        checks.extend([knots[0] - 0.7, knots[df] + 0.9]);
        for x in checks {
            let ov = DVector::from_vec(oracle(x));
            let predicted = coef.transpose() * ov;
            let actual = basis.eval(&[x]).unwrap();
            for j in 0..df {
                assert!(
                    (predicted[j] - actual[j]).abs() < 1e-8,
                    "x={x} column {j}: oracle {} vs basis {}",
                    predicted[j],
                    actual[j]
                );
            }
        }
    }

    #[test]
    fn linear_beyond_boundary() {
        let z: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let b = Basis::fitted(BasisSpec::natural_spline(5), &z, 1).unwrap();
        let f = |x: f64| b.eval(&[x]).unwrap();
        for x0 in [11.0, -3.0] {
            let (a, m, c) = (f(x0), f(x0 + 1.0), f(x0 + 2.0));
            for j in 0..5 {
                assert!((a[j] - 2.0 * m[j] + c[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_tied_knots() {
        let z = vec![1.0; 20];
        assert!(Basis::fitted(BasisSpec::natural_spline(3), &z, 1).is_err());
    }
}
