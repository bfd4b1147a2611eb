//! Plain-text matrix format shared by the CLI commands that emit codes and
//! scores: a `MAT v1 R=<rows> C=<cols>` header followed by one row per line.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = format!("MAT v1 R={} C={}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_matrix(m: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_matrix(m))?;
    Ok(())
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty file".to_string()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "MAT" || toks[1] != "v1" {
        return Err(Error::parse(1, "expected header 'MAT v1 R=.. C=..'".to_string()));
    }
    let rows: usize = toks[2]
        .strip_prefix("R=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(1, "bad row count".to_string()))?;
    let cols: usize = toks[3]
        .strip_prefix("C=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(1, "bad column count".to_string()))?;
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(i + 2, "unexpected end of file".to_string()))?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != cols {
            return Err(Error::parse(
                i + 2,
                format!("expected {cols} values, found {}", vals.len()),
            ));
        }
        for (j, s) in vals.iter().enumerate() {
            m[(i, j)] = s
                .parse()
                .map_err(|_| Error::parse(i + 2, format!("bad number '{s}' in column {}", j + 1)))?;
        }
    }
    Ok(m)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    parse_matrix(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_roundtrip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.5, -2.0, 0.0, 1e-9, 3.25, -7.125]);
        let m2 = parse_matrix(&format_matrix(&m)).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn bad_header_rejected() {
        assert!(parse_matrix("MTX v1 R=1 C=1\n0\n").is_err());
    }
}
