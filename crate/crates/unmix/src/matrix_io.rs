//! Plain-text matrix files.
//!
//! ```text
//! UNMIX-MATRIX v1 <rows> <cols>
//! <row 0: cols values separated by single spaces>
//! ...
//! ```
//!
//! Lines starting with `#` are ignored anywhere after the header. Values are
//! written with 17 significant digits, enough to round-trip every `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use unmix_core::Matrix;

pub const MAGIC: &str = "UNMIX-MATRIX";
pub const VERSION: &str = "v1";

#[derive(Debug, thiserror::Error)]
pub enum MatrixFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line 1: expected `{MAGIC} {VERSION} <rows> <cols>`, found {found:?}")]
    BadMagic { found: String },
    #[error("header declares {rows}x{cols} = {expected} values, body has {found}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Parses the text of a matrix file.
pub fn parse_matrix(text: &str) -> Result<Matrix, MatrixFileError> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    let (rows, cols) = parse_header(header)?;
    let mut values = Vec::with_capacity(rows * cols);
    let mut body_rows = 0;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let before = values.len();
        for token in trimmed.split_whitespace() {
            let v: f64 = token.parse().map_err(|_| MatrixFileError::Parse {
                line: line_no,
                message: format!("not a number: {token:?}"),
            })?;
            if !v.is_finite() {
                return Err(MatrixFileError::Parse {
                    line: line_no,
                    message: format!("non-finite value {token:?}"),
                });
            }
            values.push(v);
        }
        if body_rows < rows && values.len() - before != cols {
            return Err(MatrixFileError::ShapeMismatch {
                rows,
                cols,
                expected: rows * cols,
                found: values.len(),
            });
        }
        body_rows += 1;
    }
    if values.len() != rows * cols {
        return Err(MatrixFileError::ShapeMismatch {
            rows,
            cols,
            expected: rows * cols,
            found: values.len(),
        });
    }
    Matrix::from_row_major(rows, cols, &values).map_err(|e| MatrixFileError::Parse {
        line: 1,
        message: e.to_string(),
    })
}

fn parse_header(header: &str) -> Result<(usize, usize), MatrixFileError> {
    let bad = || MatrixFileError::BadMagic {
        found: header.to_owned(),
    };
    let parts: Vec<&str> = header.split_whitespace().collect();
    match parts.as_slice() {
        [magic, version, rows, cols] if *magic == MAGIC && *version == VERSION => {
            let rows = rows.parse().map_err(|_| bad())?;
            let cols = cols.parse().map_err(|_| bad())?;
            Ok((rows, cols))
        }
        _ => Err(bad()),
    }
}

/// Renders `m` in the file format.
pub fn format_matrix(m: &Matrix) -> String {
    let (rows, cols) = m.shape();
    let mut out = format!("{MAGIC} {VERSION} {rows} {cols}\n");
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                out.push(' ');
            }
            write!(out, "{}", format_value(m[(r, c)])).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// 17 significant digits in scientific notation; negative zero is written as
/// `0`.
pub fn format_value(v: f64) -> String {
    format!("{:.16e}", v + 0.0)
}

pub fn read_matrix(path: &Path) -> Result<Matrix, MatrixFileError> {
    let text = fs::read_to_string(path).map_err(|source| MatrixFileError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_matrix(&text)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<(), MatrixFileError> {
    fs::write(path, format_matrix(m)).map_err(|source| MatrixFileError::Io {
        path: path.to_owned(),
        source,
    })
}
