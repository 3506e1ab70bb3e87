//! Link functions, kernels, basis expansions and solvers shared by every
//! estimator in the crate.

pub mod basis;
pub mod design;
pub mod glm;
pub mod kernel;
pub mod link;
pub mod solve;

pub use basis::{Basis, BasisFamily, BasisSpec};
pub use design::Rows;
pub use kernel::KernelSpec;
pub use link::{Link, LOGIT_CLAMP};
pub use solve::{newton_solve, safeguarded_newton, scalar_root, NewtonOptions, NewtonSolution};
