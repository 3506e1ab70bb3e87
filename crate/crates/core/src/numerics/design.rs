use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{AtrelError, Result};

/// Dense row-major matrix of observations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Rows {
    ncols: usize,
    data: Vec<f64>,
}

impl Rows {
    pub fn new(ncols: usize, data: Vec<f64>) -> Result<Self> {
        if ncols == 0 && !data.is_empty() {
            return Err(AtrelError::Config("zero-width rows with non-empty data".into()));
        }
        if ncols > 0 && data.len() % ncols != 0 {
            return Err(AtrelError::Config(format!(
                "row data of length {} is not a multiple of {ncols} columns",
                data.len()
            )));
        }
        Ok(Self { ncols, data })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let ncols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            if r.as_ref().len() != ncols {
                return Err(AtrelError::Config("ragged rows".into()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self { ncols, data })
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        if self.ncols == 0 {
            0
        } else {
            self.data.len() / self.ncols
        }
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.ncols.max(1)).take(self.nrows())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.iter_rows().map(|r| r[j]).collect()
    }

    /// Rows at `indices`, in order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.ncols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { ncols: self.ncols, data }
    }

    /// Vertical concatenation.
    pub fn stack(&self, other: &Rows) -> Result<Self> {
        if self.ncols != other.ncols {
            return Err(AtrelError::Config("cannot stack rows of different widths".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self { ncols: self.ncols, data })
    }

    /// Horizontal concatenation.
    pub fn hcat(&self, other: &Rows) -> Result<Self> {
        if self.nrows() != other.nrows() {
            return Err(AtrelError::Config("cannot concatenate rows of different heights".into()));
        }
        let ncols = self.ncols + other.ncols;
        let mut data = Vec::with_capacity(self.nrows() * ncols);
        for i in 0..self.nrows() {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Self { ncols, data })
    }

    #[inline]
    pub fn dot_row(&self, i: usize, beta: &[f64]) -> f64 {
        dot(self.row(i), beta)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.nrows(), self.ncols, &self.data)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if self.data.is_empty() && self.ncols == 0 {
            self.ncols = row.len();
        }
        if row.len() != self.ncols {
            return Err(AtrelError::Config("row width mismatch".into()));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds `w · x xᵀ` into the upper triangle of the column-major `p × p` buffer.
#[inline]
pub(crate) fn rank_one_upper(acc: &mut [f64], p: usize, x: &[f64], w: f64) {
    for j in 0..p {
        let wx = w * x[j];
        if wx == 0.0 {
            continue;
        }
        let col = &mut acc[j * p..j * p + j + 1];
        for (i, c) in col.iter_mut().enumerate() {
            *c += wx * x[i];
        }
    }
}

/// Symmetric matrix from an upper-triangle accumulator.
pub(crate) fn symmetric_from_upper(acc: &[f64], p: usize, scale: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    for j in 0..p {
        for i in 0..=j {
            let v = acc[j * p + i] * scale;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_and_stack() {
        let r = Rows::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let s = r.select(&[2, 0, 2]);
        assert_eq!(s.as_slice(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let t = r.stack(&s).unwrap();
        assert_eq!(t.nrows(), 6);
        let h = r.hcat(&Rows::from_rows(&[vec![9.0], vec![8.0], vec![7.0]]).unwrap()).unwrap();
        assert_eq!(h.row(1), &[3.0, 4.0, 8.0]);
        assert_eq!(r.column(1), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn rank_one_accumulation() {
        let mut acc = vec![0.0; 4];
        rank_one_upper(&mut acc, 2, &[1.0, 2.0], 3.0);
        let m = symmetric_from_upper(&acc, 2, 0.5);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.5, 3.0, 3.0, 6.0]));
    }
}
