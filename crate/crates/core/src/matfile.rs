//! Minimal binary container for dense matrices with a shape header and
//! optional row/column labels. Little-endian f64 payload; reload is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LRMX";
const VERSION: u16 = 1;

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_matrix<W: Write>(w: &mut W, labels: &[String], m: &DMatrix<f64>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let has_labels = u16::from(!labels.is_empty());
    w.write_all(&has_labels.to_le_bytes())?;
    write_u64(w, m.nrows() as u64)?;
    write_u64(w, m.ncols() as u64)?;
    if !labels.is_empty() {
        if labels.len() != m.nrows() {
            return Err(Error::Invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                m.nrows()
            )));
        }
        for l in labels {
            let bytes = l.as_bytes();
            write_u64(w, bytes.len() as u64)?;
            w.write_all(bytes)?;
        }
    }
    // Row-major payload.
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Schema("not a matrix container file".into()));
    }
    let mut h = [0u8; 2];
    r.read_exact(&mut h)?;
    let version = u16::from_le_bytes(h);
    if version != VERSION {
        return Err(Error::Schema(format!("unsupported container version {version}")));
    }
    r.read_exact(&mut h)?;
    let has_labels = u16::from_le_bytes(h) != 0;
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let mut labels = Vec::new();
    if has_labels {
        for _ in 0..rows {
            let len = read_u64(r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            labels.push(
                String::from_utf8(buf).map_err(|_| Error::Schema("bad label encoding".into()))?,
            );
        }
    }
    let mut data = vec![0.0f64; rows * cols];
    let mut b = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut b)?;
        *v = f64::from_le_bytes(b);
    }
    Ok((labels, DMatrix::from_row_slice(rows, cols, &data)))
}

pub fn save_labeled_matrix(path: &Path, labels: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix(&mut f, labels, m)
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    save_labeled_matrix(path, &[], m)
}

pub fn load_labeled_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_matrix(&mut f)
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    Ok(load_labeled_matrix(path)?.1)
}

pub fn write_matrix_csv<W: Write>(w: W, labels: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string()];
    if labels.is_empty() {
        header.extend((0..m.ncols()).map(|j| format!("c{j}")));
    } else {
        header.extend(labels.iter().cloned());
    }
    wtr.write_record(&header)?;
    for i in 0..m.nrows() {
        let mut rec = vec![if labels.is_empty() {
            format!("r{i}")
        } else {
            labels[i].clone()
        }];
        rec.extend((0..m.ncols()).map(|j| m[(i, j)].to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = DMatrix::from_fn(7, 5, |i, j| {
            (i as f64 * 1.7 - j as f64 * 0.3).sin() * 1e-13 + i as f64
        });
        let labels: Vec<String> = (0..7).map(|i| format!("L{i}")).collect();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &labels, &m).unwrap();
        let (labels2, m2) = read_matrix(&mut &buf[..]).unwrap();
        assert_eq!(labels, labels2);
        assert_eq!(m.nrows(), m2.nrows());
        for i in 0..7 {
            for j in 0..5 {
                assert_eq!(m[(i, j)].to_bits(), m2[(i, j)].to_bits());
            }
        }
    }

    #[test]
    fn special_values_survive() {
        let m = DMatrix::from_row_slice(1, 3, &[f64::INFINITY, -0.0, 1.0 + f64::EPSILON]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &[], &m).unwrap();
        let (_, m2) = read_matrix(&mut &buf[..]).unwrap();
        for j in 0..3 {
            assert_eq!(m[(0, j)].to_bits(), m2[(0, j)].to_bits());
        }
    }

    #[test]
    fn rejects_garbage() {
        let buf = b"NOPEnope";
        assert!(read_matrix(&mut &buf[..]).is_err());
    }
}
