use std::fmt::Display;

use thiserror::Error;

pub type Result<T, E = AtrelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AtrelError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("basis evaluated before its knots were fitted")]
    NotFitted,

    #[error("{context}: no convergence after {iterations} iterations (residual norm {residual_norm:e})")]
    Convergence {
        context: String,
        iterations: usize,
        residual_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("no sign change found on [{lo}, {hi}] after bracket expansion")]
    NoRoot { lo: f64, hi: f64 },

    #[error("calibration failed at z = {point:?}: {reason}")]
    Calibration { point: Vec<f64>, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("generator error: {0}")]
    Generator(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<AtrelError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AtrelError {
    pub fn context(self, context: impl Display) -> Self {
        AtrelError::Context {
            context: context.to_string(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with every context layer stripped.
    pub fn root(&self) -> &AtrelError {
        match self {
            AtrelError::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for solver failures (Newton, root finding, calibration).
    pub fn is_convergence(&self) -> bool {
        matches!(
            self.root(),
            AtrelError::Convergence { .. } | AtrelError::NoRoot { .. } | AtrelError::Calibration { .. }
        )
    }

    /// True for problems with the input data or its schema.
    pub fn is_data(&self) -> bool {
        matches!(
            self.root(),
            AtrelError::Data(_) | AtrelError::Csv(_) | AtrelError::Io(_) | AtrelError::Json(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self.root() {
            AtrelError::Config(_) => "config",
            AtrelError::Domain(_) => "domain",
            AtrelError::NotFitted => "not_fitted",
            AtrelError::Convergence { .. } => "convergence",
            AtrelError::NoRoot { .. } => "no_root",
            AtrelError::Calibration { .. } => "calibration",
            AtrelError::Data(_) => "data",
            AtrelError::Inference(_) => "inference",
            AtrelError::UndefinedMetric(_) => "undefined_metric",
            AtrelError::Generator(_) => "generator",
            AtrelError::Context { .. } => unreachable!(),
            AtrelError::Io(_) => "io",
            AtrelError::Csv(_) => "csv",
            AtrelError::Json(_) => "json",
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl Display) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl Display) -> Result<T> {
        self.map_err(|e| e.context(context))
    }
}
