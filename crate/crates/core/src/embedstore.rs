//! Embedding ingestion, L2 normalization and the `.femb` datastore format.
//!
//! Two on-disk formats are supported:
//!
//! - TSV: a header line `#femb<TAB>n=<n><TAB>d=<D><TAB>c=<C>` followed by one
//!   `<label><TAB><f1>...<TAB><fD>` line per row.
//! - Binary `.femb`: magic `FEMB`, then `version=1, n, D, C` as little-endian
//!   `u32`, then `n` `u32` labels, then `n*D` little-endian `f32` values in
//!   row-major order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const STORE_MAGIC: [u8; 4] = *b"FEMB";
pub const STORE_VERSION: u32 = 1;
const HEADER_BYTES: usize = 20;
/// Allowed deviation of a stored row's L2 norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileFormat {
    Tsv,
    Binary,
}

impl FileFormat {
    /// Guess the format from the file extension: `.femb`/`.bin` are binary, everything else TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("femb") | Some("bin") => FileFormat::Binary,
            _ => FileFormat::Tsv,
        }
    }
}

impl std::str::FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(FileFormat::Tsv),
            "binary" | "femb" => Ok(FileFormat::Binary),
            other => Err(Error::InvalidParameter(format!("unknown format {other:?}"))),
        }
    }
}

/// Validated, not yet normalized embedding rows with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEmbeddings {
    dim: usize,
    class_count: usize,
    vectors: Vec<f32>,
    labels: Vec<u32>,
    ids: Option<Vec<String>>,
}

impl RawEmbeddings {
    /// Builds from a row-major `vectors` buffer of `labels.len() * dim` floats.
    pub fn new(vectors: Vec<f32>, dim: usize, labels: Vec<u32>, class_count: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::MalformedHeader("dimension must be at least 1".into()));
        }
        if labels.is_empty() {
            return Err(Error::MalformedHeader("at least one row is required".into()));
        }
        if class_count < 2 {
            return Err(Error::MalformedHeader(format!(
                "class count must be at least 2, got {class_count}"
            )));
        }
        if vectors.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch {
                expected: labels.len() * dim,
                found: vectors.len(),
            });
        }
        for (row, chunk) in vectors.chunks_exact(dim).enumerate() {
            if let Some(column) = chunk.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, column });
            }
        }
        for (row, &label) in labels.iter().enumerate() {
            if label as usize >= class_count {
                return Err(Error::LabelOutOfRange {
                    row,
                    label: label as u64,
                    class_count,
                });
            }
        }
        Ok(RawEmbeddings {
            dim,
            class_count,
            vectors,
            labels,
            ids: None,
        })
    }

    /// Attaches provenance ids, one per row.
    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                found: ids.len(),
            });
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Writes the TSV format. Floats use shortest round-trip formatting, so
    /// reloading yields bit-identical values.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "#femb\tn={}\td={}\tc={}", self.len(), self.dim, self.class_count).map_err(io)?;
        for i in 0..self.len() {
            write!(w, "{}", self.labels[i]).map_err(io)?;
            for v in self.row(i) {
                write!(w, "\t{v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Feature rows without labels, as fed to pseudo-labeling.
#[derive(Clone, Debug, PartialEq)]
pub struct Unlabeled {
    dim: usize,
    vectors: Vec<f32>,
}

impl Unlabeled {
    pub fn new(vectors: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 || vectors.is_empty() {
            return Err(Error::MalformedHeader("need at least one row of dimension >= 1".into()));
        }
        if !vectors.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch {
                expected: (vectors.len() / dim + 1) * dim,
                found: vectors.len(),
            });
        }
        for (row, chunk) in vectors.chunks_exact(dim).enumerate() {
            if let Some(column) = chunk.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, column });
            }
        }
        Ok(Unlabeled { dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

impl From<&RawEmbeddings> for Unlabeled {
    fn from(raw: &RawEmbeddings) -> Self {
        Unlabeled {
            dim: raw.dim,
            vectors: raw.vectors.clone(),
        }
    }
}

impl From<&EmbeddingStore> for Unlabeled {
    fn from(store: &EmbeddingStore) -> Self {
        Unlabeled {
            dim: store.dim,
            vectors: store.vectors.clone(),
        }
    }
}

/// The immutable kNN datastore: unit-norm rows with labels.
///
/// Row order is the canonical tie-break order for retrieval.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    class_count: usize,
    vectors: Vec<f32>,
    labels: Vec<u32>,
}

impl EmbeddingStore {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Always true: construction normalizes or verifies every row.
    pub fn normalized(&self) -> bool {
        true
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.vectors.chunks_exact(self.dim)
    }

    /// Row `i` widened to `f64`, the precision used by the classifier.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.class_count];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    /// A new store holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<EmbeddingStore> {
        if indices.is_empty() {
            return Err(Error::EmptyStore);
        }
        let mut vectors = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::ExcludeOutOfRange {
                    index: i,
                    len: self.len(),
                });
            }
            vectors.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Ok(EmbeddingStore {
            dim: self.dim,
            class_count: self.class_count,
            vectors,
            labels,
        })
    }

    /// Same vectors with replacement labels.
    pub fn relabel(&self, labels: Vec<u32>) -> Result<EmbeddingStore> {
        if labels.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                found: labels.len(),
            });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= self.class_count) {
            return Err(Error::LabelOutOfRange {
                row,
                label: label as u64,
                class_count: self.class_count,
            });
        }
        Ok(EmbeddingStore { labels, ..self.clone() })
    }

    pub fn to_raw(&self) -> RawEmbeddings {
        RawEmbeddings {
            dim: self.dim,
            class_count: self.class_count,
            vectors: self.vectors.clone(),
            labels: self.labels.clone(),
            ids: None,
        }
    }
}

/// Scales `v` to unit L2 norm, accumulating in `f64`.
pub fn normalize_vector(v: &[f32]) -> Option<Vec<f32>> {
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// L2-normalizes every row. Labels and row order are preserved.
pub fn build_store(raw: RawEmbeddings) -> Result<EmbeddingStore> {
    let dim = raw.dim;
    let mut vectors = Vec::with_capacity(raw.vectors.len());
    for (row, chunk) in raw.vectors.chunks_exact(dim).enumerate() {
        let unit = normalize_vector(chunk).ok_or(Error::ZeroNorm { row })?;
        vectors.extend_from_slice(&unit);
    }
    Ok(EmbeddingStore {
        dim,
        class_count: raw.class_count,
        vectors,
        labels: raw.labels,
    })
}

pub fn load_embeddings(path: &Path, format: FileFormat) -> Result<RawEmbeddings> {
    match format {
        FileFormat::Tsv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_tsv(&text)
        }
        FileFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_binary(&bytes)
        }
    }
}

fn parse_header_field(field: Option<&str>, key: &str) -> Result<usize> {
    let field = field.ok_or_else(|| Error::MalformedHeader(format!("missing {key}= field")))?;
    let value = field
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| Error::MalformedHeader(format!("expected {key}=<int>, found {field:?}")))?;
    value
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("{key} is not an integer: {value:?}")))
}

pub fn parse_tsv(text: &str) -> Result<RawEmbeddings> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("empty file".into()))?;
    let mut fields = header.trim_end_matches('\r').split('\t');
    if fields.next() != Some("#femb") {
        return Err(Error::MalformedHeader(format!(
            "first line must start with #femb, found {header:?}"
        )));
    }
    let n = parse_header_field(fields.next(), "n")?;
    let dim = parse_header_field(fields.next(), "d")?;
    let class_count = parse_header_field(fields.next(), "c")?;
    if let Some(extra) = fields.next() {
        return Err(Error::MalformedHeader(format!("unexpected header field {extra:?}")));
    }

    let mut vectors = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let rows = lines.map(|l| l.trim_end_matches('\r')).filter(|l| !l.is_empty());
    for (row, line) in rows.enumerate() {
        if row >= n {
            return Err(Error::MalformedRow {
                row,
                message: format!("header declares n={n} but more rows follow"),
            });
        }
        let mut cols = line.split('\t');
        let label_text = cols.next().unwrap_or_default();
        let label: u64 = label_text.parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("label is not a nonnegative integer: {label_text:?}"),
        })?;
        if label as usize >= class_count {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                class_count,
            });
        }
        let start = vectors.len();
        for (column, text) in cols.enumerate() {
            let v: f32 = text.parse().map_err(|_| Error::MalformedRow {
                row,
                message: format!("column {column} is not a float: {text:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, column });
            }
            vectors.push(v);
        }
        let found = vectors.len() - start;
        if found != dim {
            return Err(Error::DimensionMismatch {
                row,
                expected: dim,
                found,
            });
        }
        labels.push(label as u32);
    }
    if labels.len() != n {
        return Err(Error::MalformedHeader(format!(
            "header declares n={n} but file has {} rows",
            labels.len()
        )));
    }
    RawEmbeddings::new(vectors, dim, labels, class_count)
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4-byte slice"))
}

pub(crate) fn decode_binary(bytes: &[u8]) -> Result<RawEmbeddings> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Truncated {
            expected: HEADER_BYTES,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
    if magic != STORE_MAGIC {
        return Err(Error::BadMagic {
            expected: STORE_MAGIC,
            found: magic,
        });
    }
    let version = read_u32(bytes, 4);
    if version != STORE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = read_u32(bytes, 8) as usize;
    let dim = read_u32(bytes, 12) as usize;
    let class_count = read_u32(bytes, 16) as usize;
    let expected = n
        .checked_mul(dim)
        .and_then(|nd| nd.checked_add(n))
        .and_then(|words| words.checked_mul(4))
        .and_then(|b| b.checked_add(HEADER_BYTES))
        .ok_or_else(|| Error::MalformedHeader(format!("n={n}, d={dim} overflow")))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let labels_end = HEADER_BYTES + 4 * n;
    let labels = bytes[HEADER_BYTES..labels_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    let vectors = bytes[labels_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    RawEmbeddings::new(vectors, dim, labels, class_count)
}

pub(crate) fn encode_binary(dim: usize, class_count: usize, labels: &[u32], vectors: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * labels.len() + 4 * vectors.len());
    out.extend_from_slice(&STORE_MAGIC);
    for word in [STORE_VERSION, labels.len() as u32, dim as u32, class_count as u32] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for v in vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn save_store(store: &EmbeddingStore, path: &Path) -> Result<()> {
    let bytes = encode_binary(store.dim, store.class_count, &store.labels, &store.vectors);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes raw (unnormalized) embeddings in the binary layout.
pub fn save_raw_binary(raw: &RawEmbeddings, path: &Path) -> Result<()> {
    let bytes = encode_binary(raw.dim, raw.class_count, &raw.labels, &raw.vectors);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a binary store without renormalizing, so the vectors are bit-exact.
/// Rows that are not unit-norm within [`UNIT_NORM_TOLERANCE`] are rejected.
pub fn load_store(path: &Path) -> Result<EmbeddingStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    store_from_bytes(&bytes)
}

pub(crate) fn store_from_bytes(bytes: &[u8]) -> Result<EmbeddingStore> {
    let raw = decode_binary(bytes)?;
    for (row, chunk) in raw.vectors.chunks_exact(raw.dim).enumerate() {
        let norm = l2_norm(chunk);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::MalformedRow {
                row,
                message: format!("stored vector is not unit-norm (norm {norm})"),
            });
        }
    }
    Ok(EmbeddingStore {
        dim: raw.dim,
        class_count: raw.class_count,
        vectors: raw.vectors,
        labels: raw.labels,
    })
}
