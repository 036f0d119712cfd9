//! On-disk formats for matrices and vectors.
//!
//! Binary matrix layout (all little endian):
//!
//! ```text
//! offset  size   field
//! 0       8      magic b"SSALMAT1"
//! 8       8      rows (u64)
//! 16      8      cols (u64)
//! 24      8·r·c  entries, row-major f64
//! ```
//!
//! Binary vectors use magic `b"SSALVEC1"`, one u64 length, then the f64
//! entries. The CSV form is one matrix row per line, comma separated, with
//! no header; values print in Rust's shortest round-trip representation.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// First 16 hex digits of the SHA-256 of a value's JSON encoding.
pub fn fingerprint<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("value serializes to JSON");
    hex::encode(&Sha256::digest(&json)[..8])
}

pub const MATRIX_MAGIC: &[u8; 8] = b"SSALMAT1";
pub const VECTOR_MAGIC: &[u8; 8] = b"SSALVEC1";

pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for row in m.row_iter() {
        for v in row.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![
        0u8;
        n.checked_mul(8)
            .ok_or_else(|| Error::Format("size overflow".into()))?
    ];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    expect_magic(&mut r, MATRIX_MAGIC)?;
    let rows = read_u64(&mut r)? as usize;
    let cols = read_u64(&mut r)? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix size overflow".into()))?;
    let data = read_f64s(&mut r, n)?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn write_vector<W: Write>(mut w: W, v: &[f64]) -> Result<()> {
    w.write_all(VECTOR_MAGIC)?;
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_vector<R: Read>(mut r: R) -> Result<DVector<f64>> {
    expect_magic(&mut r, VECTOR_MAGIC)?;
    let n = read_u64(&mut r)? as usize;
    Ok(DVector::from_vec(read_f64s(&mut r, n)?))
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix(file, m)
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn save_vector(path: &Path, v: &[f64]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_vector(file, v)
}

pub fn load_vector(path: &Path) -> Result<DVector<f64>> {
    read_vector(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(Error::Format(format!(
                    "line {}: expected {c} columns, got {}",
                    lineno + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        data.extend(values);
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &data))
}

/// Serde adapter storing a matrix as `{ rows, cols, data }` with row-major data.
pub mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = Repr::deserialize(d)?;
        if r.rows * r.cols != r.data.len() {
            return Err(serde::de::Error::custom("matrix data length mismatch"));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matrix_layout_is_little_endian_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(&buf[..8], b"SSALMAT1");
        assert_eq!(&buf[8..16], &2u64.to_le_bytes());
        assert_eq!(&buf[16..24], &3u64.to_le_bytes());
        assert_eq!(&buf[24..32], &1.0f64.to_le_bytes());
        assert_eq!(&buf[32..40], &2.0f64.to_le_bytes());
        assert_eq!(buf.len(), 24 + 6 * 8);
    }

    #[test]
    fn bad_magic_and_truncation_are_format_or_io_errors() {
        let err = read_matrix(&b"NOTMAGIC\0\0\0\0\0\0\0\0"[..]).unwrap_err();
        assert!(err.is_io());
        let mut buf = Vec::new();
        write_vector(&mut buf, &[1.0, 2.0]).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_vector(&buf[..]).unwrap_err().is_io());
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        assert!(matrix_from_csv("1,2\n3\n").is_err());
        assert!(matrix_from_csv("1,x\n").is_err());
    }

    proptest! {
        #[test]
        fn binary_and_csv_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let m = DMatrix::from_fn(rows, cols, |r, c| {
                let x = seed.wrapping_mul(6364136223846793005).wrapping_add((r * 31 + c) as u64);
                (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            });
            let mut buf = Vec::new();
            write_matrix(&mut buf, &m).unwrap();
            prop_assert_eq!(read_matrix(&buf[..]).unwrap(), m.clone());
            prop_assert_eq!(matrix_from_csv(&matrix_to_csv(&m)).unwrap(), m.clone());
            let v: Vec<f64> = m.iter().cloned().collect();
            let mut vb = Vec::new();
            write_vector(&mut vb, &v).unwrap();
            let back = read_vector(&vb[..]).unwrap();
            prop_assert_eq!(back.as_slice(), &v[..]);
        }
    }
}
