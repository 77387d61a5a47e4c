//! The `ONZ1` embedding container.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "ONZ1"
//! 4       4         n, u32 little-endian (rows)
//! 8       4         d, u32 little-endian (columns)
//! 12      4*n*d     row-major f32 little-endian payload
//! ```
//!
//! Rows need not be unit-norm on disk. [`read_embeddings`] rescales any row
//! whose L2 norm is off by more than [`NORM_TOLERANCE`] and reports how many.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::onproxy::ProxyMatrix;

pub const MAGIC: &[u8; 4] = b"ONZ1";
pub const HEADER_LEN: usize = 12;
pub const NORM_TOLERANCE: f64 = 1e-3;

/// Dense `n x d` matrix of 32-bit floats, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        let expected = rows
            .checked_mul(dim)
            .ok_or_else(|| Error::Format(format!("{rows} x {dim} overflows")))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{} values for a {rows} x {dim} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::Shape(format!("row {i} has {} columns, expected {dim}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Row `i` widened to f64.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.rows);
        Self {
            rows: n,
            dim: self.dim,
            data: self.data[..n * self.dim].to_vec(),
        }
    }

    /// Rescales rows whose norm deviates from one by more than `NORM_TOLERANCE`.
    /// Returns the number of rows touched.
    pub fn normalize_drifted_rows(&mut self) -> usize {
        let dim = self.dim;
        let mut touched = 0;
        for row in self.data.chunks_exact_mut(dim.max(1)) {
            let n = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > NORM_TOLERANCE && n > 0.0 {
                for v in row.iter_mut() {
                    *v = (f64::from(*v) / n) as f32;
                }
                touched += 1;
            }
        }
        touched
    }

    /// Interprets the rows as class proxies (normalized in f64).
    pub fn to_proxies(&self) -> Result<ProxyMatrix> {
        ProxyMatrix::from_rows((0..self.rows).map(|i| self.row_f64(i)).collect())
    }

    /// Narrows a proxy matrix to f32 rows for storage.
    pub fn from_proxies(proxies: &ProxyMatrix) -> Self {
        let data = proxies.rows().flatten().map(|&v| v as f32).collect();
        Self {
            rows: proxies.classes(),
            dim: proxies.dim(),
            data,
        }
    }
}

/// Result of a normalizing load.
#[derive(Clone, Debug)]
pub struct LoadedEmbeddings {
    pub matrix: EmbeddingMatrix,
    /// Rows that were rescaled to unit norm on load.
    pub renormalized: usize,
}

pub fn encode_header(rows: u32, dim: u32) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(MAGIC);
    h[4..8].copy_from_slice(&rows.to_le_bytes());
    h[8..12].copy_from_slice(&dim.to_le_bytes());
    h
}

/// Parses a header, returning `(n, d)`.
pub fn decode_header(bytes: &[u8]) -> Result<(usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"ONZ1\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if n == 0 {
        return Err(Error::Format("empty embedding file".into()));
    }
    if d == 0 {
        return Err(Error::Format("zero embedding dimension".into()));
    }
    n.checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("payload size {n} x {d} overflows")))?;
    Ok((n, d))
}

pub fn encode(matrix: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let n = u32::try_from(matrix.rows)
        .map_err(|_| Error::Format(format!("{} rows exceed the u32 header field", matrix.rows)))?;
    let d = u32::try_from(matrix.dim)
        .map_err(|_| Error::Format(format!("dimension {} exceeds the u32 header field", matrix.dim)))?;
    if let Some(pos) = matrix.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format(format!(
            "non-finite value at row {}, column {}",
            pos / matrix.dim,
            pos % matrix.dim
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.data.len() * 4);
    out.extend_from_slice(&encode_header(n, d));
    for v in &matrix.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a complete file image without touching row norms.
pub fn decode(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let (n, d) = decode_header(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    let expected = n * d * 4;
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "truncated payload: {} of {expected} bytes for {n} x {d}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after {n} x {d} payload",
            payload.len() - expected
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(n, d, data)
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(matrix)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Loads a file exactly as stored.
pub fn read_embeddings_raw(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Loads a file and rescales drifted rows to unit norm.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<LoadedEmbeddings> {
    let mut matrix = read_embeddings_raw(path)?;
    let renormalized = matrix.normalize_drifted_rows();
    Ok(LoadedEmbeddings { matrix, renormalized })
}

pub fn write_proxies(proxies: &ProxyMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_embeddings(&EmbeddingMatrix::from_proxies(proxies), path)
}

pub fn read_proxies(path: impl AsRef<Path>) -> Result<ProxyMatrix> {
    read_embeddings_raw(path)?.to_proxies()
}

/// Row-at-a-time reader over an `ONZ1` file; never holds more than one row.
pub struct EmbeddingStream<R> {
    reader: R,
    rows: usize,
    dim: usize,
    next: usize,
    renormalized: usize,
    buf: Vec<u8>,
}

impl EmbeddingStream<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> EmbeddingStream<R> {
    pub fn new(mut reader: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        reader.read_exact(&mut header).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated header".into()),
            _ => Error::Io(e),
        })?;
        let (rows, dim) = decode_header(&header)?;
        Ok(Self {
            reader,
            rows,
            dim,
            next: 0,
            renormalized: 0,
            buf: vec![0u8; dim * 4],
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn renormalized(&self) -> usize {
        self.renormalized
    }

    fn read_row(&mut self) -> Result<Vec<f64>> {
        self.reader.read_exact(&mut self.buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format(format!(
                "truncated payload at row {} of {}",
                self.next, self.rows
            )),
            _ => Error::Io(e),
        })?;
        let mut row: Vec<f64> = self
            .buf
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > NORM_TOLERANCE && n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
            self.renormalized += 1;
        }
        Ok(row)
    }
}

impl<R: Read> Iterator for EmbeddingStream<R> {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.rows {
            return None;
        }
        let row = self.read_row();
        self.next += 1;
        if row.is_err() {
            self.next = self.rows;
        }
        Some(row)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.rows - self.next;
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes() {
        let m = EmbeddingMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        let bytes = encode(&m).unwrap();
        assert_eq!(&bytes[..12], b"ONZ1\x02\x00\x00\x00\x03\x00\x00\x00");
        assert_eq!(bytes.len(), 12 + 24);
    }

    #[test]
    fn decode_errors() {
        let m = EmbeddingMatrix::new(2, 3, vec![1.0; 6]).unwrap();
        let bytes = encode(&m).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).unwrap_err().to_string().contains("bad magic"));

        let err = decode(&bytes[..20]).unwrap_err().to_string();
        assert!(err.contains("truncated payload"), "{err}");

        assert!(decode(&bytes[..7]).unwrap_err().to_string().contains("truncated header"));

        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).unwrap_err().to_string().contains("trailing"));

        let empty = encode_header(0, 3);
        assert!(decode(&empty).unwrap_err().to_string().contains("empty embedding file"));

        let huge = encode_header(u32::MAX, u32::MAX);
        let err = decode(&huge).unwrap_err().to_string();
        assert!(err.contains("overflow") || err.contains("truncated"), "{err}");
    }

    #[test]
    fn rejects_non_finite() {
        let m = EmbeddingMatrix::new(1, 2, vec![1.0, f32::NAN]).unwrap();
        assert!(encode(&m).is_err());
    }

    #[test]
    fn normalizes_drifted_rows_only() {
        let mut m = EmbeddingMatrix::new(3, 2, vec![3.0, 4.0, 0.6, 0.8, 1.0005, 0.0]).unwrap();
        assert_eq!(m.normalize_drifted_rows(), 1);
        assert_eq!(m.row(0), &[0.6, 0.8]);
        assert_eq!(m.row(1), &[0.6, 0.8]);
        assert_eq!(m.row(2), &[1.0005, 0.0]);
    }

    #[test]
    fn stream_matches_bulk_load() {
        let m = EmbeddingMatrix::new(3, 2, vec![3.0, 4.0, 0.6, 0.8, 0.0, -2.0]).unwrap();
        let bytes = encode(&m).unwrap();
        let mut stream = EmbeddingStream::new(&bytes[..]).unwrap();
        let rows: Vec<Vec<f64>> = stream.by_ref().collect::<Result<_>>().unwrap();
        assert_eq!(stream.renormalized(), 2);
        assert_eq!(rows[2], vec![0.0, -1.0]);
        assert!((rows[0][0] - 0.6).abs() < 1e-7);

        let mut truncated = EmbeddingStream::new(&bytes[..bytes.len() - 1]).unwrap();
        assert!(truncated.nth(2).unwrap().is_err());
    }
}
