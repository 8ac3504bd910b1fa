//! Binary embedding store with a text manifest sidecar.
//!
//! Payload layout (little-endian):
//!
//! | field   | type      |
//! |---------|-----------|
//! | magic   | `b"SCDE"` |
//! | version | `u32`     |
//! | dim     | `u32`     |
//! | count   | `u64`     |
//! | width   | `u8` (4)  |
//! | values  | `count * dim` `f32`, row-major |
//!
//! The manifest lives next to the payload at `<path>.manifest`, one
//! `row_id<TAB>word<TAB>corpus_id<TAB>sentence_id` line per row.
//!
//! Values are kept as `f32` (bit-exact on round trip); every accessor hands
//! out `f64` for arithmetic.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{read_text, sidecar, write_atomic};
use crate::metric::Embedding;

pub const STORE_MAGIC: &[u8; 4] = b"SCDE";
pub const STORE_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 1;
const FLOAT_WIDTH: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub row_id: String,
    pub word: String,
    pub corpus_id: String,
    pub sentence_id: String,
}

impl ManifestRow {
    pub fn new(
        row_id: impl Into<String>,
        word: impl Into<String>,
        corpus_id: impl Into<String>,
        sentence_id: impl Into<String>,
    ) -> Self {
        Self {
            row_id: row_id.into(),
            word: word.into(),
            corpus_id: corpus_id.into(),
            sentence_id: sentence_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    values: Vec<f32>,
    manifest: Vec<ManifestRow>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            values: Vec::new(),
            manifest: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Validates and assembles a store from raw parts.
    pub fn from_parts(dim: usize, values: Vec<f32>, manifest: Vec<ManifestRow>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("store dimension must be positive".into()));
        }
        if values.len() != manifest.len() * dim {
            return Err(Error::Consistency(format!(
                "{} manifest rows but {} values for dim {dim}",
                manifest.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "row {} coordinate {} is {}",
                i / dim,
                i % dim,
                values[i]
            )));
        }
        let index = build_index(&manifest)?;
        Ok(Self {
            dim,
            values,
            manifest,
            index,
        })
    }

    /// Appends one occurrence. The values are rounded to `f32`.
    pub fn push(&mut self, row: ManifestRow, values: &[f64]) -> Result<usize> {
        if values.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: values.len(),
            });
        }
        if self.index.contains_key(&row.row_id) {
            return Err(Error::Consistency(format!("duplicate row id '{}'", row.row_id)));
        }
        let converted: Vec<f32> = values.iter().map(|&v| v as f32).collect();
        if let Some(i) = converted.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "row '{}' coordinate {i} is not representable",
                row.row_id
            )));
        }
        let idx = self.manifest.len();
        self.values.extend_from_slice(&converted);
        self.index.insert(row.row_id.clone(), idx);
        self.manifest.push(row);
        Ok(idx)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn manifest(&self) -> &[ManifestRow] {
        &self.manifest
    }

    pub fn raw_values(&self) -> &[f32] {
        &self.values
    }

    pub fn row_f32(&self, idx: usize) -> &[f32] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Row `idx` widened to `f64`, written into `out`.
    pub fn row_into(&self, idx: usize, out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(self.row_f32(idx)) {
            *o = v as f64;
        }
    }

    pub fn row(&self, idx: usize) -> Vec<f64> {
        self.row_f32(idx).iter().map(|&v| v as f64).collect()
    }

    pub fn embedding(&self, idx: usize) -> Embedding {
        Embedding::new(self.row(idx)).expect("store rows are finite and non-empty")
    }

    pub fn index_of(&self, row_id: &str) -> Option<usize> {
        self.index.get(row_id).copied()
    }

    pub fn resolve(&self, row_id: &str) -> Result<usize> {
        self.index_of(row_id)
            .ok_or_else(|| Error::Data(format!("unknown embedding id '{row_id}'")))
    }

    /// Row ids of `word` in `corpus_id`, in manifest order.
    pub fn occurrence_ids(&self, word: &str, corpus_id: &str) -> Vec<String> {
        self.manifest
            .iter()
            .filter(|r| r.word == word && r.corpus_id == corpus_id)
            .map(|r| r.row_id.clone())
            .collect()
    }

    /// Contiguous `f64` block holding the given rows, in order.
    pub fn gather(&self, ids: &[String]) -> Result<Vec<f64>> {
        let mut block = vec![0.0; ids.len() * self.dim];
        for (k, id) in ids.iter().enumerate() {
            let idx = self.resolve(id)?;
            self.row_into(idx, &mut block[k * self.dim..(k + 1) * self.dim]);
        }
        Ok(block)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.push(FLOAT_WIDTH);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn manifest_text(&self) -> String {
        let mut s = String::new();
        for r in &self.manifest {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.row_id, r.word, r.corpus_id, r.sentence_id
            ));
        }
        s
    }

    pub fn manifest_path(path: &Path) -> PathBuf {
        sidecar(path, ".manifest")
    }

    /// Writes payload then manifest, each via fsync + rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())?;
        write_atomic(&Self::manifest_path(path), self.manifest_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let manifest_path = Self::manifest_path(path);
        let manifest = parse_manifest(&read_text(&manifest_path)?, &manifest_path)?;
        Self::from_bytes(&bytes, manifest, path)
    }

    pub fn from_bytes(bytes: &[u8], manifest: Vec<ManifestRow>, origin: &Path) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != STORE_MAGIC {
            return Err(Error::format(origin, "bad magic, expected \"SCDE\""));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Corrupt {
                path: origin.into(),
                msg: "truncated header".into(),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != STORE_VERSION {
            return Err(Error::format(origin, format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let width = bytes[20];
        if width != FLOAT_WIDTH {
            return Err(Error::format(origin, format!("unsupported float width {width}")));
        }
        let expected = (count as u128) * (dim as u128) * 4;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u128 != expected {
            return Err(Error::Corrupt {
                path: origin.into(),
                msg: format!("payload holds {} bytes, header implies {expected}", payload.len()),
            });
        }
        if manifest.len() as u64 != count {
            return Err(Error::Consistency(format!(
                "manifest has {} rows, payload has {count}",
                manifest.len()
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_parts(dim, values, manifest)
    }
}

fn build_index(manifest: &[ManifestRow]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(manifest.len());
    for (i, r) in manifest.iter().enumerate() {
        if index.insert(r.row_id.clone(), i).is_some() {
            return Err(Error::Consistency(format!("duplicate row id '{}'", r.row_id)));
        }
    }
    Ok(index)
}

pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    for (line, l) in text.lines().enumerate() {
        if l.is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line + 1,
                msg: format!("{}: expected 4 tab-separated fields", origin.display()),
            });
        }
        rows.push(ManifestRow::new(fields[0], fields[1], fields[2], fields[3]));
    }
    Ok(rows)
}
