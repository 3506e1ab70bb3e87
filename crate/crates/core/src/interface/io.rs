//! CSV ingestion and output.
//!
//! Comma-separated, header row required, `.` as decimal separator. Two
//! layouts are accepted: a source file and a target file, or one file with a
//! population column holding `source` / `target`.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::TransferDataset;
use crate::error::{AtrelError, Result};
use crate::nuisance::{NuisanceSpec, Term};
use crate::numerics::{Link, Rows};

/// Column roles of an input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub response: String,
    /// Covariates in order; empty means every column except the response
    /// and population columns, in file order.
    pub covariates: Vec<String>,
    /// Population column for single-file input.
    pub population: Option<String>,
    /// `A` without its implicit constant; `None` means all covariates.
    pub a: Option<Vec<String>>,
    pub psi: Option<Vec<String>>,
    pub phi: Option<Vec<String>>,
    pub z: Vec<String>,
}

impl ColumnSchema {
    pub fn new(response: impl Into<String>, z: Vec<String>) -> Self {
        Self {
            response: response.into(),
            covariates: Vec::new(),
            population: None,
            a: None,
            psi: None,
            phi: None,
            z,
        }
    }

    /// Model specification for `data`, with selectors resolved by name.
    pub fn spec(&self, data: &TransferDataset, link: Link) -> Result<NuisanceSpec> {
        let p = data.covariate_names.len();
        let terms = |sel: &Option<Vec<String>>| -> Result<Vec<Term>> {
            match sel {
                None => Ok((0..p).map(Term::Column).collect()),
                Some(names) => names.iter().map(|c| Ok(Term::Column(data.column_index(c)?))).collect(),
            }
        };
        let z = self.z.iter().map(|c| data.column_index(c)).collect::<Result<Vec<_>>>()?;
        if z.is_empty() {
            return Err(AtrelError::Config("at least one Z column is required".into()));
        }
        let mut spec = NuisanceSpec::linear(p, z, link);
        spec.a_columns = terms(&self.a)?;
        spec.psi_columns = terms(&self.psi)?;
        spec.phi_columns = terms(&self.phi)?;
        spec.validate(p)?;
        Ok(spec)
    }

    /// Working-model parameter names: `intercept` followed by the `A` columns.
    pub fn parameter_names(&self, data: &TransferDataset) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        match &self.a {
            Some(a) => names.extend(a.iter().cloned()),
            None => names.extend(data.covariate_names.iter().cloned()),
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataPaths {
    Split { source: PathBuf, target: PathBuf },
    Single(PathBuf),
}

pub(crate) struct Table {
    file: String,
    header: Vec<String>,
    /// (line number, fields)
    records: Vec<(u64, Vec<String>)>,
}

impl Table {
    pub(crate) fn read(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(File::open(path).map_err(|e| AtrelError::Data(format!("{file}: {e}")))?);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| AtrelError::Data(format!("{file}: {e}")))?;
            let line = rec.position().map_or(0, |p| p.line());
            records.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self { file, header, records })
    }

    fn index(&self, column: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| AtrelError::Data(format!("{}: missing column '{column}'", self.file)))
    }

    fn number(&self, line: u64, fields: &[String], column: usize) -> Result<f64> {
        let raw = fields[column].as_str();
        let at = || format!("{}:{line}: column '{}'", self.file, self.header[column]);
        if raw.is_empty() {
            return Err(AtrelError::Data(format!("{}: missing value", at())));
        }
        let v: f64 = raw
            .parse()
            .map_err(|_| AtrelError::Data(format!("{}: cannot parse '{raw}' as a number", at())))?;
        if !v.is_finite() {
            return Err(AtrelError::Data(format!("{}: non-finite value '{raw}'", at())));
        }
        Ok(v)
    }

    fn covariate_names(&self, schema: &ColumnSchema) -> Vec<String> {
        if !schema.covariates.is_empty() {
            return schema.covariates.clone();
        }
        self.header
            .iter()
            .filter(|h| **h != schema.response && Some(h.as_str()) != schema.population.as_deref())
            .cloned()
            .collect()
    }

    /// Covariates (and the response, when named) of the kept records.
    pub(crate) fn extract(
        &self,
        names: &[String],
        response: Option<&str>,
        keep: impl Fn(&[String]) -> bool,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let cols = names.iter().map(|c| self.index(c)).collect::<Result<Vec<_>>>()?;
        let y_col = response.map(|r| self.index(r)).transpose()?;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (line, fields) in &self.records {
            if !keep(fields) {
                continue;
            }
            for &c in &cols {
                x.push(self.number(*line, fields, c)?);
            }
            if let Some(c) = y_col {
                y.push(self.number(*line, fields, c)?);
            }
        }
        Ok((x, y))
    }
}

/// Reads a dataset; target rows need no response value.
pub fn load_dataset(paths: &DataPaths, schema: &ColumnSchema) -> Result<TransferDataset> {
    let (names, sx, sy, tx) = match paths {
        DataPaths::Split { source, target } => {
            let src = Table::read(source)?;
            let tgt = Table::read(target)?;
            let names = src.covariate_names(schema);
            let (sx, sy) = src.extract(&names, Some(&schema.response), |_| true)?;
            let (tx, _) = tgt.extract(&names, None, |_| true)?;
            (names, sx, sy, tx)
        }
        DataPaths::Single(path) => {
            let table = Table::read(path)?;
            let pop = schema
                .population
                .as_deref()
                .ok_or_else(|| AtrelError::Config("single-file input needs a population column".into()))?;
            let pc = table.index(pop)?;
            for (line, fields) in &table.records {
                if fields[pc] != "source" && fields[pc] != "target" {
                    return Err(AtrelError::Data(format!(
                        "{}:{line}: column '{pop}': expected 'source' or 'target', found '{}'",
                        table.file, fields[pc]
                    )));
                }
            }
            let names = table.covariate_names(schema);
            let (sx, sy) = table.extract(&names, Some(&schema.response), |f| f[pc] == "source")?;
            let (tx, _) = table.extract(&names, None, |f| f[pc] == "target")?;
            (names, sx, sy, tx)
        }
    };
    let p = names.len();
    let data = TransferDataset::new(names, Rows::new(p, sx)?, sy, Rows::new(p, tx)?)?;
    log::info!("loaded n = {} source rows, N = {} target rows", data.n(), data.big_n());
    Ok(data)
}

/// Single-file CSV: `population`, `y`, covariates. Target responses are left
/// empty unless supplied.
pub fn dataset_csv(data: &TransferDataset, target_y: Option<&[f64]>) -> Result<Vec<u8>> {
    if target_y.is_some_and(|t| t.len() != data.big_n()) {
        return Err(AtrelError::Data("one target response per target row required".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["population".to_string(), "y".to_string()];
    header.extend(data.covariate_names.iter().cloned());
    w.write_record(&header)?;
    // `{}` on f64 prints the shortest text that parses back to the same value
    for (i, row) in data.source_x.iter_rows().enumerate() {
        let mut rec = vec!["source".to_string(), data.source_y[i].to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    for (j, row) in data.target_x.iter_rows().enumerate() {
        let mut rec = vec!["target".to_string(), target_y.map_or(String::new(), |t| t[j].to_string())];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| AtrelError::Io(e.into_error()))
}

/// Writes to a temporary file in the destination directory, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| AtrelError::Io(e.error))?;
    Ok(())
}

/// Replaces column `a` by its residual from a least-squares fit on `(1, b)`
/// over the pooled source and target rows.
pub fn orthogonalize(data: &mut TransferDataset, a: &str, b: &str) -> Result<()> {
    let ia = data.column_index(a)?;
    let ib = data.column_index(b)?;
    if ia == ib {
        return Err(AtrelError::Config(format!("cannot orthogonalize '{a}' on itself")));
    }
    let pairs: Vec<(f64, f64)> = data
        .source_x
        .iter_rows()
        .chain(data.target_x.iter_rows())
        .map(|r| (r[ia], r[ib]))
        .collect();
    let m = pairs.len() as f64;
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(sa, sb), (x, y)| (sa + x / m, sb + y / m));
    let sbb: f64 = pairs.iter().map(|(_, y)| (y - mb).powi(2)).sum();
    if sbb <= 0.0 {
        return Err(AtrelError::Data(format!("column '{b}' is constant")));
    }
    let slope = pairs.iter().map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / sbb;
    for rows in [&mut data.source_x, &mut data.target_x] {
        for i in 0..rows.nrows() {
            let r = rows.row_mut(i);
            r[ia] -= ma + slope * (r[ib] - mb);
        }
    }
    Ok(())
}
