//! Embedding file ingestion and persistence.
//!
//! Binary layout: magic bytes `EMB1`, `u32` little-endian row count, `u32`
//! little-endian column count, then `rows * dim` IEEE-754 32-bit
//! little-endian values in row-major order. The CSV fallback is one row per
//! line with comma-separated decimals. The binary file is the source of
//! truth; loading sniffs the magic bytes, so extensions do not matter.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::matrix::{Matrix, MatrixError};
use crate::scalar::Real;

pub const EMB_MAGIC: [u8; 4] = *b"EMB1";
const HEADER_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum EmbeddingIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad header: rows={rows}, dim={dim} (both must be nonzero)")]
    HeaderInvalid { rows: u32, dim: u32 },
    #[error("file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing bytes after the {expected} bytes declared by the header")]
    TrailingBytes { expected: usize },
    #[error("non-finite value at row {row}, column {col} (byte offset {offset})")]
    NonFinite { row: usize, col: usize, offset: usize },
    #[error("matrix has {rows} rows which exceeds the u32 header limit")]
    TooLarge { rows: usize },
    #[error("value at row {row}, column {col} does not fit in f32")]
    OutOfRange { row: usize, col: usize },
    #[error("csv: line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("csv: line {line} has {found} columns, expected {expected}")]
    CsvWidth { line: usize, expected: usize, found: usize },
    #[error("csv: non-finite value at line {line}, column {col}")]
    CsvNonFinite { line: usize, col: usize },
    #[error("file contains no rows")]
    Empty,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Loads an embedding matrix, sniffing for the binary magic and falling back
/// to CSV. Rejects NaN/Inf payloads naming the offending cell.
pub fn load_embeddings<T: Real>(path: &Path) -> Result<Matrix<T>, EmbeddingIoError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() >= 4 && bytes[..4] == EMB_MAGIC {
        parse_binary(&bytes)
    } else {
        parse_csv(&bytes)
    }
}

fn parse_binary<T: Real>(bytes: &[u8]) -> Result<Matrix<T>, EmbeddingIoError> {
    if bytes.len() < HEADER_LEN {
        return Err(EmbeddingIoError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if rows == 0 || dim == 0 {
        return Err(EmbeddingIoError::HeaderInvalid { rows, dim });
    }
    let (rows, dim) = (rows as usize, dim as usize);
    let expected = HEADER_LEN + 4 * rows * dim;
    if bytes.len() < expected {
        return Err(EmbeddingIoError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(EmbeddingIoError::TrailingBytes { expected });
    }
    let mut data = Vec::with_capacity(rows * dim);
    for idx in 0..rows * dim {
        let offset = HEADER_LEN + 4 * idx;
        let value = f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
        if !value.is_finite() {
            return Err(EmbeddingIoError::NonFinite {
                row: idx / dim,
                col: idx % dim,
                offset,
            });
        }
        data.push(T::from_f(value as f64));
    }
    Ok(Matrix::from_vec(rows, dim, data)?)
}

fn parse_csv<T: Real>(bytes: &[u8]) -> Result<Matrix<T>, EmbeddingIoError> {
    let text = std::str::from_utf8(bytes).map_err(|e| EmbeddingIoError::Csv {
        line: 1,
        message: format!("not valid utf-8: {e}"),
    })?;
    let mut data: Vec<T> = Vec::new();
    let mut dim = 0usize;
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut width = 0usize;
        for (col, token) in line.split(',').enumerate() {
            let value: f64 = token.trim().parse().map_err(|_| EmbeddingIoError::Csv {
                line: lineno + 1,
                message: format!("cannot parse value '{}'", token.trim()),
            })?;
            if !value.is_finite() {
                return Err(EmbeddingIoError::CsvNonFinite {
                    line: lineno + 1,
                    col,
                });
            }
            data.push(T::from_f(value));
            width += 1;
        }
        if rows == 0 {
            dim = width;
        } else if width != dim {
            return Err(EmbeddingIoError::CsvWidth {
                line: lineno + 1,
                expected: dim,
                found: width,
            });
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(EmbeddingIoError::Empty);
    }
    Ok(Matrix::from_vec(rows, dim, data)?)
}

/// Writes the binary format. Values are stored as f32; the caller owns the
/// precision contract.
pub fn save_embeddings<T: Real>(matrix: &Matrix<T>, path: &Path) -> Result<(), EmbeddingIoError> {
    if matrix.rows() > u32::MAX as usize || matrix.dim() > u32::MAX as usize {
        return Err(EmbeddingIoError::TooLarge {
            rows: matrix.rows(),
        });
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&EMB_MAGIC)?;
    out.write_all(&(matrix.rows() as u32).to_le_bytes())?;
    out.write_all(&(matrix.dim() as u32).to_le_bytes())?;
    for (i, row) in matrix.iter_rows().enumerate() {
        for (j, value) in row.iter().enumerate() {
            let v = value.to_f() as f32;
            if !v.is_finite() {
                return Err(EmbeddingIoError::OutOfRange { row: i, col: j });
            }
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes the CSV fallback format (f32 precision, shortest decimal form).
pub fn save_embeddings_csv<T: Real>(
    matrix: &Matrix<T>,
    path: &Path,
) -> Result<(), EmbeddingIoError> {
    let mut out = BufWriter::new(File::create(path)?);
    for (i, row) in matrix.iter_rows().enumerate() {
        let mut line = String::new();
        for (j, value) in row.iter().enumerate() {
            let v = value.to_f() as f32;
            if !v.is_finite() {
                return Err(EmbeddingIoError::OutOfRange { row: i, col: j });
            }
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v}"));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_binary(path: &Path, rows: u32, dim: u32, values: &[f32]) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&EMB_MAGIC);
        bytes.extend_from_slice(&rows.to_le_bytes());
        bytes.extend_from_slice(&dim.to_le_bytes());
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn loads_identity_like_binary_fixture() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("id.emb");
        write_binary(&path, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let m: Matrix<f64> = load_embeddings(&path).unwrap();
        assert_eq!(m.rows(), 2);
        assert_eq!(m.dim(), 2);
        assert_eq!(m.row(0), &[1.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn csv_and_binary_paths_agree() {
        let dir = tempdir().unwrap();
        let bin = dir.path().join("m.emb");
        let csv = dir.path().join("m.csv");
        write_binary(&bin, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        std::fs::write(&csv, "1.0,0.0\n0.0,1.0\n").unwrap();
        let a: Matrix<f64> = load_embeddings(&bin).unwrap();
        let b: Matrix<f64> = load_embeddings(&csv).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_nan_payload_naming_row_zero() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("nan.emb");
        write_binary(&path, 2, 2, &[f32::NAN, 0.0, 0.0, 1.0]);
        match load_embeddings::<f64>(&path) {
            Err(EmbeddingIoError::NonFinite { row, col, offset }) => {
                assert_eq!(row, 0);
                assert_eq!(col, 0);
                assert_eq!(offset, 12);
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rt.emb");
        let m = Matrix::from_rows(&[vec![0.1f64, -2.5], vec![3.75, 1e-3]]).unwrap();
        save_embeddings(&m, &path).unwrap();
        let loaded: Matrix<f64> = load_embeddings(&path).unwrap();
        save_embeddings(&loaded, dir.path().join("rt2.emb").as_path()).unwrap();
        let first = std::fs::read(&path).unwrap();
        let second = std::fs::read(dir.path().join("rt2.emb")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn reports_truncation_and_trailing_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.emb");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&EMB_MAGIC);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_embeddings::<f64>(&path) {
            Err(EmbeddingIoError::Truncated { expected, found }) => {
                assert_eq!(expected, 12 + 16);
                assert_eq!(found, 16);
            }
            other => panic!("expected Truncated, got {other:?}"),
        }
        bytes.extend_from_slice(&[0u8; 20]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_embeddings::<f64>(&path),
            Err(EmbeddingIoError::TrailingBytes { .. })
        ));
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1.0,2.0\n3.0\n").unwrap();
        match load_embeddings::<f64>(&path) {
            Err(EmbeddingIoError::CsvWidth {
                line,
                expected,
                found,
            }) => {
                assert_eq!((line, expected, found), (2, 2, 1));
            }
            other => panic!("expected CsvWidth, got {other:?}"),
        }
        std::fs::write(&path, "1.0,nan\n").unwrap();
        assert!(matches!(
            load_embeddings::<f64>(&path),
            Err(EmbeddingIoError::CsvNonFinite { line: 1, col: 1 })
        ));
    }
}
