use serde::{Deserialize, Serialize};

use crate::data::TransferDataset;
use crate::error::{AtrelError, Result};
use crate::numerics::{BasisFamily, Link, Rows};

/// One derived covariate: a raw column or the product of two columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Column(usize),
    Product(usize, usize),
}

impl Term {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Term::Column(j) => x[j],
            Term::Product(a, b) => x[a] * x[b],
        }
    }

    fn max_index(&self) -> usize {
        match *self {
            Term::Column(j) => j,
            Term::Product(a, b) => a.max(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationBackend {
    Kernel,
    Sieve,
}

impl std::str::FromStr for CalibrationBackend {
    type Err = AtrelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernel" => Ok(Self::Kernel),
            "sieve" => Ok(Self::Sieve),
            other => Err(AtrelError::Config(format!("unknown calibration backend '{other}'"))),
        }
    }
}

/// Model specification for the working regression and both nuisance models.
///
/// `A`, `ψ` and `φ` each get a leading constant column that is not listed in
/// the selectors. Tuning fields left as `None` are chosen by cross-validation
/// (see [`crate::nuisance::tuning`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    pub a_columns: Vec<Term>,
    pub psi_columns: Vec<Term>,
    pub phi_columns: Vec<Term>,
    pub z_columns: Vec<usize>,
    pub link: Link,
    pub basis_family: BasisFamily,
    /// Basis size for the density-ratio model; default `⌈(N+n)^{1/4}⌉`.
    pub weight_df: Option<usize>,
    /// Basis size for the imputation model; default `⌈n^{1/4}⌉`.
    pub imputation_df: Option<usize>,
    pub ridge_weight_model: Option<f64>,
    pub ridge_imputation_model: Option<f64>,
    pub calibration_backend: CalibrationBackend,
    /// Kernel bandwidth per `Z` coordinate.
    pub bandwidth: Option<Vec<f64>>,
    /// Split a single-signed κ group at its median.
    pub median_split_intercept: bool,
    /// Above this many evaluation points the kernel backend solves on a
    /// quantile grid (one-dimensional `Z` only) and interpolates.
    pub exact_point_limit: usize,
    pub grid_points: usize,
    /// Minimum share of rows a κ group needs to be calibrated on its own.
    #[serde(default = "default_min_group_fraction")]
    pub min_group_fraction: f64,
}

fn default_min_group_fraction() -> f64 {
    0.05
}

impl NuisanceSpec {
    /// Every column enters `A`, `ψ` and `φ` linearly; `Z` is the given columns.
    pub fn linear(p: usize, z_columns: Vec<usize>, link: Link) -> Self {
        let all: Vec<Term> = (0..p).map(Term::Column).collect();
        Self {
            a_columns: all.clone(),
            psi_columns: all.clone(),
            phi_columns: all,
            z_columns,
            link,
            basis_family: BasisFamily::NaturalCubicSpline,
            weight_df: None,
            imputation_df: None,
            ridge_weight_model: None,
            ridge_imputation_model: None,
            calibration_backend: CalibrationBackend::Kernel,
            bandwidth: None,
            median_split_intercept: true,
            exact_point_limit: 4000,
            grid_points: 200,
            min_group_fraction: default_min_group_fraction(),
        }
    }

    pub fn d(&self) -> usize {
        self.a_columns.len() + 1
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let check = |terms: &[Term], what: &str| -> Result<()> {
            if let Some(t) = terms.iter().find(|t| t.max_index() >= p) {
                return Err(AtrelError::Config(format!("{what} selector {t:?} exceeds {p} covariates")));
            }
            Ok(())
        };
        check(&self.a_columns, "A")?;
        check(&self.psi_columns, "psi")?;
        check(&self.phi_columns, "phi")?;
        if self.z_columns.is_empty() {
            return Err(AtrelError::Config("Z must have at least one column".into()));
        }
        if let Some(&j) = self.z_columns.iter().find(|&&j| j >= p) {
            return Err(AtrelError::Config(format!("Z column {j} exceeds {p} covariates")));
        }
        for (name, v) in [("weight", self.ridge_weight_model), ("imputation", self.ridge_imputation_model)] {
            if let Some(l) = v {
                if !(l >= 0.0 && l.is_finite()) {
                    return Err(AtrelError::Config(format!("{name} ridge must be a nonnegative number")));
                }
            }
        }
        for df in [self.weight_df, self.imputation_df].into_iter().flatten() {
            if df == 0 {
                return Err(AtrelError::Config("basis degrees of freedom must be positive".into()));
            }
        }
        if let Some(bw) = &self.bandwidth {
            if bw.len() != self.z_columns.len() || bw.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                return Err(AtrelError::Config("bandwidth needs one positive value per Z column".into()));
            }
        }
        if !(0.0..0.5).contains(&self.min_group_fraction) {
            return Err(AtrelError::Config("min_group_fraction must lie in [0, 0.5)".into()));
        }
        if self.grid_points < 2 {
            return Err(AtrelError::Config("grid_points must be at least 2".into()));
        }
        Ok(())
    }

    pub fn design(&self, data: &TransferDataset) -> Result<Design> {
        let p = data.covariate_names.len();
        self.validate(p)?;
        Ok(Design {
            src: self.population(&data.source_x),
            tgt: self.population(&data.target_x),
            y: data.source_y.clone(),
        })
    }

    fn population(&self, x: &Rows) -> PopulationDesign {
        let mut z = Vec::with_capacity(x.nrows() * self.z_columns.len());
        for row in x.iter_rows() {
            z.extend(self.z_columns.iter().map(|&j| row[j]));
        }
        PopulationDesign {
            a: expand_terms(&self.a_columns, x),
            psi: expand_terms(&self.psi_columns, x),
            phi: expand_terms(&self.phi_columns, x),
            z: Rows::new(self.z_columns.len(), z).expect("consistent width"),
        }
    }
}

/// Rows of `(1, t₁(x), …, t_k(x))`.
pub fn expand_terms(terms: &[Term], x: &Rows) -> Rows {
    let mut data = Vec::with_capacity(x.nrows() * (terms.len() + 1));
    for row in x.iter_rows() {
        data.push(1.0);
        data.extend(terms.iter().map(|t| t.eval(row)));
    }
    Rows::new(terms.len() + 1, data).expect("consistent width")
}

/// Model matrices of one population.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationDesign {
    pub a: Rows,
    pub psi: Rows,
    pub phi: Rows,
    pub z: Rows,
}

impl PopulationDesign {
    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            a: self.a.select(idx),
            psi: self.psi.select(idx),
            phi: self.phi.select(idx),
            z: self.z.select(idx),
        }
    }
}

/// Model matrices of both populations plus the source response.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub src: PopulationDesign,
    pub tgt: PopulationDesign,
    pub y: Vec<f64>,
}

impl Design {
    pub fn n(&self) -> usize {
        self.src.len()
    }

    pub fn big_n(&self) -> usize {
        self.tgt.len()
    }

    pub fn z_dim(&self) -> usize {
        self.src.z.ncols()
    }

    pub fn resample(&self, src: &[usize], tgt: &[usize]) -> Self {
        Self {
            src: self.src.select(src),
            tgt: self.tgt.select(tgt),
            y: src.iter().map(|&i| self.y[i]).collect(),
        }
    }
}
