//! Identity embeddings and the vector file formats used to ingest them.
//!
//! Two on-disk layouts are accepted for embedding and feature files:
//!
//! * binary: a little-endian `u32` header length, a UTF-8 JSON header
//!   `{"d": <dim>, "n": <rows>, "ids": [...]}`, then `n × d` little-endian `f32`;
//! * CSV: one row per vector, `id,v0,...,v{d-1}`, with an optional header row
//!   whose first cell is `id`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit-norm identity vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// L2-normalizes `values`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("embedding must be non-empty and finite".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= f64::MIN_POSITIVE {
            return Err(Error::Numerical("embedding has zero norm".into()));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; both sides are unit-norm so this is the dot product.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// Rows of equal-length vectors keyed by string ids, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    pub ids: Vec<String>,
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct BinaryHeader {
    d: usize,
    n: usize,
    ids: Vec<String>,
}

impl VectorTable {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let dim = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "row {bad} has {} components, expected {dim}",
                rows[bad].len()
            )));
        }
        Ok(Self { ids, dim, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|i| i == id).map(|p| self.rows[p].as_slice())
    }

    /// Normalizes every row into an [`Embedding`].
    pub fn embeddings(&self) -> Result<Vec<Embedding>> {
        self.rows.iter().map(|r| Embedding::new(r.clone())).collect()
    }

    /// Reads a CSV file when the extension is `.csv`, the binary layout otherwise.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().and_then(|e| e.to_str()) == Some("csv") {
            Self::read_csv(path)
        } else {
            Self::read_binary(path)
        }
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_binary(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn decode_binary(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Format("truncated vector file".into()));
        }
        let hlen = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let header_end = 4usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("header length exceeds file size".into()))?;
        let header: BinaryHeader = serde_json::from_slice(&bytes[4..header_end])
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.ids.len() != header.n {
            return Err(Error::Format(format!(
                "header lists {} ids for n = {}",
                header.ids.len(),
                header.n
            )));
        }
        let payload = &bytes[header_end..];
        if payload.len() != header.n * header.d * 4 {
            return Err(Error::Format(format!(
                "payload is {} bytes, expected {}",
                payload.len(),
                header.n * header.d * 4
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let rows = if header.d == 0 {
            vec![Vec::new(); header.n]
        } else {
            values.chunks_exact(header.d).map(|c| c.to_vec()).collect()
        };
        let mut t = Self::new(header.ids, rows)?;
        t.dim = header.d;
        Ok(t)
    }

    pub fn encode_binary(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&BinaryHeader {
            d: self.dim,
            n: self.rows.len(),
            ids: self.ids.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(4 + header.len() + self.rows.len() * self.dim * 4);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.rows.iter().flatten() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode_binary()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            let Some(id) = rec.get(0) else { continue };
            if line == 0 && id.trim() == "id" {
                continue;
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|e| {
                        Error::Format(format!("{} line {}: `{v}`: {e}", path.display(), line + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            ids.push(id.to_string());
            rows.push(row);
        }
        Self::new(ids, rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
