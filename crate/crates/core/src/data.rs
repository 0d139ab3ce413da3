//! One-dimensional samples and named multivariate datasets.
//!
//! Datasets are stored column-major because every consumer (per-feature KS,
//! pairwise projection, perturbation) walks whole columns.
//!
//! CSV dialect: comma separated, `.` decimal point, mandatory header row of
//! feature names, one sample per row. Values are written with Rust's shortest
//! round-trip formatting, so a write/read cycle reproduces every bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A nonempty sample of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample1D {
    values: Vec<f64>,
    sorted: bool,
}

impl Sample1D {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some((row, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, col: 0, value });
        }
        Ok(Self { values, sorted: false })
    }

    /// Builds a sample and sorts it ascending.
    pub fn new_sorted(values: Vec<f64>) -> Result<Self> {
        Ok(Self::new(values)?.into_sorted())
    }

    pub fn into_sorted(mut self) -> Self {
        if !self.sorted {
            self.values.sort_unstable_by(f64::total_cmp);
            self.sorted = true;
        }
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.sorted
    }
}

/// An N x D matrix of finite reals with one name per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    rows: usize,
}

impl Dataset {
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("dataset needs at least one column"));
        }
        if names.len() != columns.len() {
            return Err(Error::ColumnMismatch(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let rows = columns[0].len();
        if rows == 0 {
            return Err(Error::invalid("dataset needs at least one row"));
        }
        for (col, values) in columns.iter().enumerate() {
            if values.len() != rows {
                return Err(Error::ColumnMismatch(format!(
                    "column {col} has {} rows, expected {rows}",
                    values.len()
                )));
            }
            if let Some((row, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite { row, col, value });
            }
        }
        Ok(Self { names, columns, rows })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); dim];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::ColumnMismatch(format!(
                    "row {r} has {} values, expected {dim}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                columns[c].push(v);
            }
        }
        Self::from_columns(names, columns)
    }

    /// Default feature names `x1, x2, ...`.
    pub fn default_names(dim: usize) -> Vec<String> {
        (1..=dim).map(|d| format!("x{d}")).collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> Result<&[f64]> {
        self.columns.get(j).map(Vec::as_slice).ok_or(Error::IndexOutOfRange {
            index: j,
            dim: self.cols(),
        })
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn sample(&self, j: usize) -> Result<Sample1D> {
        Sample1D::new(self.column(j)?.to_vec())
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[r]).collect()
    }

    /// Replaces one column, re-validating finiteness.
    pub fn with_column(&self, j: usize, values: Vec<f64>) -> Result<Self> {
        self.column(j)?;
        let mut columns = self.columns.clone();
        columns[j] = values;
        Self::from_columns(self.names.clone(), columns)
    }

    /// Keeps the listed rows, in the listed order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.rows) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                dim: self.rows,
            });
        }
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&r| c[r]).collect())
            .collect();
        Self::from_columns(self.names.clone(), columns)
    }

    /// Zero-mean, unit-variance columns (population variance). Constant
    /// columns are centred and left unscaled.
    pub fn standardized(&self) -> Self {
        let n = self.rows as f64;
        let columns = self
            .columns
            .iter()
            .map(|c| {
                let mean = c.iter().sum::<f64>() / n;
                let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                let scale = if sd > 0.0 { sd } else { 1.0 };
                c.iter().map(|v| (v - mean) / scale).collect()
            })
            .collect();
        Self {
            names: self.names.clone(),
            columns,
            rows: self.rows,
        }
    }

    /// Checks that two datasets describe the same features.
    pub fn check_compatible(&self, other: &Dataset) -> Result<()> {
        if self.cols() != other.cols() {
            return Err(Error::ColumnMismatch(format!(
                "{} features vs {} features",
                self.cols(),
                other.cols()
            )));
        }
        if let Some(j) = (0..self.cols()).find(|&j| self.names[j] != other.names[j]) {
            return Err(Error::ColumnMismatch(format!(
                "feature {j} is named {:?} in one dataset and {:?} in the other",
                self.names[j], other.names[j]
            )));
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(File::open(path)?)
    }

    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let names: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(e, 1))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if names.is_empty() || names.iter().all(String::is_empty) {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header row".into(),
            });
        }
        let dim = names.len();
        let mut columns = vec![Vec::new(); dim];
        for (r, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| csv_error(e, r as u64 + 2))?;
            let line = record.position().map_or(r as u64 + 2, |p| p.line());
            if record.len() != dim {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {dim} fields, found {}", record.len()),
                });
            }
            for (c, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("column {} ({}): cannot parse {field:?} as a number", c + 1, names[c]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        msg: format!("column {} ({}): non-finite value {field:?}", c + 1, names[c]),
                    });
                }
                columns[c].push(v);
            }
        }
        if columns[0].is_empty() {
            return Err(Error::Parse {
                line: 2,
                msg: "no data rows".into(),
            });
        }
        Self::from_columns(names, columns)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = File::create(path)?;
        self.write_csv_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.names).map_err(csv_write_error)?;
        let mut buf = Vec::with_capacity(self.cols());
        for r in 0..self.rows {
            buf.clear();
            buf.extend(self.columns.iter().map(|c| c[r].to_string()));
            wtr.write_record(&buf).map_err(csv_write_error)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

fn csv_write_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("csv write failed: {other:?}")),
    }
}
