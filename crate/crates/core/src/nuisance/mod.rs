//! Semi-non-parametric nuisance models: the density ratio
//! `ω(x) = exp(ψᵀα + h(Z))` and the imputation `m(x) = g(φᵀγ + r(Z))`.
//!
//! Preliminary sieve fits give `α̃, γ̃, h̃, r̃`; the nonparametric parts are
//! then re-solved per κ group under localized (kernel) or projected (sieve)
//! moment conditions.

pub mod calibrate;
pub mod fit;
pub mod kappa;
pub mod prelim;
pub mod sieve;
pub mod spec;
pub mod tuning;

pub use calibrate::{calibrate_h_at, calibrate_r_at, GroupData};
pub use fit::{calibrate_fold, evaluate_nuisance, CalibratedNuisance, CalibrationDiagnostics, CalibrationSettings, FoldInput, FoldValues};
pub use kappa::{compute_jhat, sign_partition, KappaWeights, SignPartition, SplitRule};
pub use prelim::{
    fit_density_ratio_prelim, fit_imputation_prelim, fit_preliminary, solve_preliminary_beta, PrelimSettings, PrelimValues, PreliminaryFit,
};
pub use sieve::{calibrate_sieve, SieveGroup};
pub use spec::{expand_terms, CalibrationBackend, Design, NuisanceSpec, PopulationDesign, Term};
pub use tuning::{select_tunings, Tunings};
