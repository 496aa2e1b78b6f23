//! CSV matrices and phenotype preprocessing.
//!
//! Files are plain comma-separated numbers with an optional single header row.
//! Rows are subjects for phenotype and genotype files and ROI pairs for the
//! neighborhood file.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Optional constraints on the number of rows and columns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExpectedShape {
    pub rows: Option<usize>,
    pub cols: Option<usize>,
}

impl ExpectedShape {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn exact(rows: usize, cols: usize) -> Self {
        Self {
            rows: Some(rows),
            cols: Some(cols),
        }
    }

    pub fn rows(rows: usize) -> Self {
        Self {
            rows: Some(rows),
            cols: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedMatrix {
    pub data: DMatrix<f64>,
    /// Column names when the file was read with a header.
    pub names: Option<Vec<String>>,
}

/// Reads a numeric CSV. Row and column numbers in errors are 1-based and count
/// data rows only.
pub fn load_matrix(path: &Path, expected: ExpectedShape, header: bool) -> Result<LoadedMatrix> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let names = if header {
        let h = reader.headers().map_err(|e| csv_error(path, e))?;
        Some(h.iter().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };
    let mut values = Vec::new();
    let mut cols: Option<usize> = names.as_ref().map(Vec::len);
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        rows += 1;
        let width = *cols.get_or_insert(record.len());
        if record.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: rows,
                col: record.len().min(width) + 1,
                msg: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: rows,
                col: j + 1,
                msg: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    path: path.to_path_buf(),
                    row: rows,
                    col: j + 1,
                });
            }
            values.push(v);
        }
    }
    let cols = cols.unwrap_or(0);
    let rows_ok = expected.rows.is_none_or(|r| r == rows);
    let cols_ok = expected.cols.is_none_or(|c| c == cols);
    if !rows_ok || !cols_ok || rows == 0 || cols == 0 {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            rows,
            cols,
            expected_rows: expected.rows.unwrap_or(rows.max(1)),
            expected_cols: expected.cols.unwrap_or(cols.max(1)),
        });
    }
    Ok(LoadedMatrix {
        data: DMatrix::from_row_slice(rows, cols, &values),
        names,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let (row, msg) = match e.position() {
        Some(p) => (p.line() as usize, e.to_string()),
        None => (0, e.to_string()),
    };
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        _ => Error::Parse {
            path: path.to_path_buf(),
            row,
            col: 0,
            msg,
        },
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        writeln!(out, "{}", h.join(","))?;
    }
    let mut line = String::new();
    for i in 0..m.nrows() {
        line.clear();
        for j in 0..m.ncols() {
            if j > 0 {
                line.push(',');
            }
            let _ = write!(line, "{}", fmt_f64(m[(i, j)]));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Column means and unbiased (`n − 1`) standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: DVector<f64>,
    pub sds: DVector<f64>,
}

pub fn standardize_phenotypes(y: &DMatrix<f64>) -> Result<(DMatrix<f64>, Standardization)> {
    let (n, c) = y.shape();
    if n < 2 {
        return Err(Error::invalid(
            "subject count",
            format!("need n >= 2 to standardize, got {n}"),
        ));
    }
    let mut means = DVector::zeros(c);
    let mut sds = DVector::zeros(c);
    let mut out = y.clone();
    for j in 0..c {
        let col = y.column(j);
        let mean = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::ConstantColumn(j));
        }
        means[j] = mean;
        sds[j] = sd;
        for i in 0..n {
            out[(i, j)] = (y[(i, j)] - mean) / sd;
        }
    }
    Ok((out, Standardization { means, sds }))
}

pub fn unstandardize(y_std: &DMatrix<f64>, t: &Standardization) -> DMatrix<f64> {
    DMatrix::from_fn(y_std.nrows(), y_std.ncols(), |i, j| {
        y_std[(i, j)] * t.sds[j] + t.means[j]
    })
}

/// Centers every column; used for genotype designs in simulations that
/// standardize phenotypes.
pub fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for j in 0..x.ncols() {
        let mean = x.column(j).sum() / n;
        for i in 0..x.nrows() {
            out[(i, j)] -= mean;
        }
    }
    out
}

/// Per-column OLS residuals of `y` on `[1, confounders]`.
pub fn residualize(y: &DMatrix<f64>, confounders: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = y.nrows();
    if confounders.nrows() != n {
        return Err(Error::SubjectCountMismatch {
            y: n,
            x: confounders.nrows(),
        });
    }
    let k = confounders.ncols() + 1;
    if k >= n {
        return Err(Error::RankDeficientConfounders);
    }
    let z = DMatrix::from_fn(
        n,
        k,
        |i, j| if j == 0 { 1.0 } else { confounders[(i, j - 1)] },
    );
    let qr = z.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| !(r[(i, i)].abs() > 1e-10 * scale)) {
        return Err(Error::RankDeficientConfounders);
    }
    let q = qr.q();
    let fitted = &q * (q.transpose() * y);
    Ok(y - fitted)
}
