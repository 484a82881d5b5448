//! Column tables of reals with a strict CSV dialect.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("row {row}, column {column:?}: missing value")]
    Missing { row: usize, column: String },
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("column lengths differ")]
    Ragged,
    #[error("table has no rows")]
    Empty,
}

/// Column-major table of reals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    names: Vec<String>,
    cols: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(names: Vec<String>, cols: Vec<Vec<f64>>) -> Result<Self, DataError> {
        if names.len() != cols.len() {
            return Err(DataError::Ragged);
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(DataError::DuplicateColumn(n.clone()));
            }
        }
        if cols.windows(2).any(|w| w[0].len() != w[1].len()) {
            return Err(DataError::Ragged);
        }
        Ok(Self { names, cols })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.cols.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64], DataError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.cols[i].as_slice())
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    /// Rows restricted to `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Table {
        Table {
            names: self.names.clone(),
            cols: self.cols.iter().map(|c| idx.iter().map(|&i| c[i]).collect()).collect(),
        }
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, DataError> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let names: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut cols = vec![Vec::new(); names.len()];
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            for (j, field) in rec.iter().enumerate() {
                let f = field.trim();
                if f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan") {
                    return Err(DataError::Missing {
                        row: row + 1,
                        column: names[j].clone(),
                    });
                }
                let v: f64 = f.parse().map_err(|_| DataError::Parse {
                    row: row + 1,
                    column: names[j].clone(),
                    value: f.to_string(),
                })?;
                cols[j].push(v);
            }
        }
        let t = Self::new(names, cols)?;
        if t.n_rows() == 0 {
            return Err(DataError::Empty);
        }
        Ok(t)
    }

    pub fn read_path(path: &std::path::Path) -> Result<Self, DataError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.names)?;
        for i in 0..self.n_rows() {
            wr.write_record(self.cols.iter().map(|c| format_real(c[i])))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Shortest round-trip representation.
pub fn format_real(v: f64) -> String {
    format!("{v}")
}
