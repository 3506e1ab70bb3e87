use serde::{Deserialize, Serialize};

use crate::error::{AtrelError, Result};
use crate::numerics::Rows;

/// Labeled source sample (covariates and response) and unlabeled target
/// sample (covariates only) sharing one covariate schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferDataset {
    pub covariate_names: Vec<String>,
    pub source_x: Rows,
    pub source_y: Vec<f64>,
    pub target_x: Rows,
}

impl TransferDataset {
    pub fn new(covariate_names: Vec<String>, source_x: Rows, source_y: Vec<f64>, target_x: Rows) -> Result<Self> {
        let data = Self {
            covariate_names,
            source_x,
            source_y,
            target_x,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.covariate_names.len();
        if self.source_x.ncols() != p || self.target_x.ncols() != p {
            return Err(AtrelError::Data(format!(
                "covariate width mismatch: {} names, source {} columns, target {} columns",
                p,
                self.source_x.ncols(),
                self.target_x.ncols()
            )));
        }
        if self.source_y.len() != self.source_x.nrows() {
            return Err(AtrelError::Data(format!(
                "{} source responses for {} source rows",
                self.source_y.len(),
                self.source_x.nrows()
            )));
        }
        if self.n() == 0 {
            return Err(AtrelError::Data("source population is empty".into()));
        }
        if self.big_n() == 0 {
            return Err(AtrelError::Data("target population is empty".into()));
        }
        let finite = |r: &Rows| r.as_slice().iter().all(|v| v.is_finite());
        if !finite(&self.source_x) || !finite(&self.target_x) || self.source_y.iter().any(|v| !v.is_finite()) {
            return Err(AtrelError::Data("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    /// Source sample size `n`.
    pub fn n(&self) -> usize {
        self.source_x.nrows()
    }

    /// Target sample size `N`.
    pub fn big_n(&self) -> usize {
        self.target_x.nrows()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| AtrelError::Data(format!("unknown covariate column '{name}'")))
    }

    /// Dataset made of the given source and target row indices (repeats allowed).
    pub fn resample(&self, source: &[usize], target: &[usize]) -> Self {
        Self {
            covariate_names: self.covariate_names.clone(),
            source_x: self.source_x.select(source),
            source_y: source.iter().map(|&i| self.source_y[i]).collect(),
            target_x: self.target_x.select(target),
        }
    }
}
