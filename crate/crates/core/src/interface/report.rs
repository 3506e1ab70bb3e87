//! Simulation report output.

use crate::error::{AtrelError, Result};
use crate::simbench::SimStudyReport;

/// `estimator,parameter,metric,value` rows, per-parameter cells first, then
/// one `average` block per estimator.
pub fn report_csv(report: &SimStudyReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["estimator", "parameter", "metric", "value"])?;
    for (estimator, parameter, metric, value) in report.long_rows() {
        w.write_record([estimator, parameter, metric.to_string(), value.to_string()])?;
    }
    w.into_inner().map_err(|e| AtrelError::Io(e.into_error()))
}
