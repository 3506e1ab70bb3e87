use serde::{Deserialize, Serialize};

use super::{cross_fitted_residual, FoldPrelim};
use crate::error::Result;
use crate::nuisance::{Design, FoldValues};
use crate::numerics::Link;

/// Residual of the cross-fitted equation and empirical versions of the two
/// bias terms, using `ĥ - h̃` and `r̂ - r̃` as the model-error increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrDiagnostic {
    pub residual: Vec<f64>,
    /// Density-ratio term with calibrated weights and imputations.
    pub delta1: f64,
    /// Imputation term with calibrated weights and imputations.
    pub delta2: f64,
    /// The same sums with the preliminary weights and imputations.
    pub delta1_prelim: f64,
    pub delta2_prelim: f64,
}

pub fn dr_residual_diagnostic(
    design: &Design,
    link: Link,
    beta: &[f64],
    folds: &[FoldPrelim],
    values: &[FoldValues],
) -> Result<DrDiagnostic> {
    let residual = cross_fitted_residual(design, link, folds, values, beta)?;
    let n = design.n() as f64;
    let big_n = design.big_n() as f64;
    let root_n = n.sqrt();
    let inv_k = 1.0 / folds.len() as f64;
    let (mut d1, mut d2, mut d1p, mut d2p) = (0.0, 0.0, 0.0, 0.0);
    for (f, v) in folds.iter().zip(values) {
        let ev = &f.eval_values;
        for (t, &i) in f.eval.iter().enumerate() {
            let y = design.y[i];
            let k = v.kappa_eval[t];
            let dh = v.h_eval[t] - ev.h[t];
            let dr = v.r_eval[t] - ev.r[t];
            let gdot_cal = link.deriv(ev.lin_m[t] + v.r_eval[t]);
            d1 += v.omega_eval[t] * k * (y - v.m_eval[t]) * dh;
            d2 += v.omega_eval[t] * k * gdot_cal * dr;
            d1p += ev.omega[t] * k * (y - ev.m[t]) * dh;
            d2p += ev.omega[t] * k * ev.breve_m[t] * dr;
        }
        let tv = &f.target_values;
        for j in 0..v.kappa_target.len() {
            let k = v.kappa_target[j];
            let dr = v.r_target[j] - tv.r[j];
            let gdot_cal = link.deriv(tv.lin_m[j] + v.r_target[j]);
            d2 -= inv_k * n / big_n * k * gdot_cal * dr;
            d2p -= inv_k * n / big_n * k * tv.breve_m[j] * dr;
        }
    }
    Ok(DrDiagnostic {
        residual,
        delta1: d1 / root_n,
        delta2: d2 / root_n,
        delta1_prelim: d1p / root_n,
        delta2_prelim: d2p / root_n,
    })
}
