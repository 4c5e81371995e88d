//! Embedding sets, the `EMB1` binary format, CSV interchange and
//! statistics artifacts.
//!
//! `EMB1` layout (all integers little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `EMB1`                  |
//! | 4      | 4    | u32 version (= 1)             |
//! | 8      | 4    | u32 dtype (0 = f32, 1 = f64)  |
//! | 12     | 8    | u64 rows                      |
//! | 20     | 4    | u32 dims (≥ 1)                |
//! | 24     | 4    | u32 reserved (= 0)            |
//! | 28     | ...  | row-major payload             |

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::ReferenceFrame;
use crate::moments::ModalityStats;
use crate::realign::{AlignmentStats, BlockwiseStats};
use crate::scalar::{Dtype, Real};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB1_VERSION: u32 = 1;
pub const EMB1_HEADER_LEN: usize = 28;

/// A matrix of `rows` embeddings in `dims` dimensions, tagged with the
/// modality it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    rows: usize,
    dims: usize,
    data: Vec<T>,
    modality: String,
}

impl<T: Real> EmbeddingSet<T> {
    /// Validates shape and finiteness.
    pub fn new(rows: usize, dims: usize, data: Vec<T>, modality: impl Into<String>) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidArgument("embedding dims must be >= 1".into()));
        }
        if data.len() != rows * dims {
            return Err(Error::dims("embedding data length", rows * dims, data.len()));
        }
        check_finite(&data, dims, 0)?;
        Ok(EmbeddingSet {
            rows,
            dims,
            data,
            modality: modality.into(),
        })
    }

    pub fn empty(dims: usize, modality: impl Into<String>) -> Result<Self> {
        Self::new(0, dims, Vec::new(), modality)
    }

    pub fn from_rows(rows: &[Vec<T>], modality: impl Into<String>) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dims);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dims {
                return Err(Error::Csv {
                    line: i + 1,
                    message: format!("row has {} values, expected {dims}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dims, data, modality)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn modality(&self) -> &str {
        &self.modality
    }

    pub fn set_modality(&mut self, tag: impl Into<String>) {
        self.modality = tag.into();
    }

    pub fn dtype(&self) -> Dtype {
        T::DTYPE
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn row_iter(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.dims)
    }

    /// Rows `start..end` as a new set.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        EmbeddingSet {
            rows: end - start,
            dims: self.dims,
            data: self.data[start * self.dims..end * self.dims].to_vec(),
            modality: self.modality.clone(),
        }
    }

    /// Rows at the given indices, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dims);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingSet {
            rows: idx.len(),
            dims: self.dims,
            data,
            modality: self.modality.clone(),
        }
    }

    pub fn to_matrix(&self) -> crate::linalg::Matrix<T> {
        crate::linalg::Matrix::from_vec(self.rows, self.dims, self.data.clone())
    }

    pub fn from_matrix(m: crate::linalg::Matrix<T>, modality: impl Into<String>) -> Result<Self> {
        let (r, c) = (m.nrows(), m.ncols());
        Self::new(r, c, m.into_vec(), modality)
    }

    pub fn cast<U: Real>(&self) -> EmbeddingSet<U> {
        EmbeddingSet {
            rows: self.rows,
            dims: self.dims,
            data: self.data.iter().map(|v| U::of(v.to_f64_lossless())).collect(),
            modality: self.modality.clone(),
        }
    }
}

fn check_finite<T: Real>(data: &[T], dims: usize, row_offset: usize) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: row_offset + pos / dims,
            col: pos % dims,
        });
    }
    Ok(())
}

/// An embedding set of either element type, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyEmbeddings {
    F32(EmbeddingSet<f32>),
    F64(EmbeddingSet<f64>),
}

impl AnyEmbeddings {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyEmbeddings::F32(_) => Dtype::F32,
            AnyEmbeddings::F64(_) => Dtype::F64,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            AnyEmbeddings::F32(s) => s.rows(),
            AnyEmbeddings::F64(s) => s.rows(),
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            AnyEmbeddings::F32(s) => s.dims(),
            AnyEmbeddings::F64(s) => s.dims(),
        }
    }

    /// Widens to f64 (exact for f32 input).
    pub fn into_f64(self) -> EmbeddingSet<f64> {
        match self {
            AnyEmbeddings::F32(s) => s.cast(),
            AnyEmbeddings::F64(s) => s,
        }
    }
}

impl From<EmbeddingSet<f32>> for AnyEmbeddings {
    fn from(s: EmbeddingSet<f32>) -> Self {
        AnyEmbeddings::F32(s)
    }
}

impl From<EmbeddingSet<f64>> for AnyEmbeddings {
    fn from(s: EmbeddingSet<f64>) -> Self {
        AnyEmbeddings::F64(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Emb1,
    Csv,
}

impl Format {
    /// `.csv` selects CSV, anything else `EMB1`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Emb1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emb1Header {
    pub dtype: Dtype,
    pub rows: u64,
    pub dims: u32,
}

impl Emb1Header {
    pub fn payload_len(&self) -> u64 {
        self.rows * self.dims as u64 * self.dtype.size() as u64
    }

    pub fn to_bytes(&self) -> [u8; EMB1_HEADER_LEN] {
        let mut b = [0u8; EMB1_HEADER_LEN];
        b[0..4].copy_from_slice(EMB1_MAGIC);
        b[4..8].copy_from_slice(&EMB1_VERSION.to_le_bytes());
        b[8..12].copy_from_slice(&self.dtype.code().to_le_bytes());
        b[12..20].copy_from_slice(&self.rows.to_le_bytes());
        b[20..24].copy_from_slice(&self.dims.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8]) -> Result<Self> {
        if b.len() < EMB1_HEADER_LEN {
            return Err(Error::MalformedHeader(format!(
                "header needs {EMB1_HEADER_LEN} bytes, file has {}",
                b.len()
            )));
        }
        if &b[0..4] != EMB1_MAGIC {
            return Err(Error::MalformedHeader("bad magic (expected EMB1)".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != EMB1_VERSION {
            return Err(Error::MalformedHeader(format!("unsupported EMB1 version {version}")));
        }
        let dtype = Dtype::from_code(u32_at(8))
            .ok_or_else(|| Error::MalformedHeader(format!("unknown dtype code {}", u32_at(8))))?;
        let rows = u64::from_le_bytes(b[12..20].try_into().unwrap());
        let dims = u32_at(20);
        if dims == 0 {
            return Err(Error::MalformedHeader("dims must be >= 1".into()));
        }
        if u32_at(24) != 0 {
            return Err(Error::MalformedHeader("reserved field must be 0".into()));
        }
        Ok(Emb1Header { dtype, rows, dims })
    }
}

/// Streaming `EMB1` reader. The file length is checked against the header
/// on open, so truncation is reported before any row is produced.
pub struct EmbReader {
    path: PathBuf,
    header: Emb1Header,
    reader: BufReader<File>,
    next_row: u64,
    modality: String,
}

impl EmbReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let actual = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut reader = BufReader::with_capacity(1 << 20, file);
        let mut head = Vec::with_capacity(EMB1_HEADER_LEN);
        (&mut reader)
            .take(EMB1_HEADER_LEN as u64)
            .read_to_end(&mut head)
            .map_err(|e| Error::io(&path, e))?;
        let header = Emb1Header::parse(&head)?;
        let expected = EMB1_HEADER_LEN as u64 + header.payload_len();
        if expected != actual {
            return Err(Error::Truncated { expected, actual });
        }
        let modality = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(EmbReader {
            path,
            header,
            reader,
            next_row: 0,
            modality,
        })
    }

    pub fn header(&self) -> Emb1Header {
        self.header
    }

    pub fn dims(&self) -> usize {
        self.header.dims as usize
    }

    pub fn rows(&self) -> u64 {
        self.header.rows
    }

    /// Reads up to `max_rows` rows; `None` once every row has been read.
    pub fn next_batch(&mut self, max_rows: usize) -> Result<Option<AnyEmbeddings>> {
        let remaining = self.header.rows - self.next_row;
        if remaining == 0 {
            return Ok(None);
        }
        let n = remaining.min(max_rows.max(1) as u64) as usize;
        let offset = self.next_row as usize;
        self.next_row += n as u64;
        Ok(Some(match self.header.dtype {
            Dtype::F32 => AnyEmbeddings::F32(self.read_rows::<f32>(n, offset)?),
            Dtype::F64 => AnyEmbeddings::F64(self.read_rows::<f64>(n, offset)?),
        }))
    }

    fn read_rows<T: Real>(&mut self, n: usize, row_offset: usize) -> Result<EmbeddingSet<T>> {
        let dims = self.dims();
        let size = T::DTYPE.size();
        let mut bytes = vec![0u8; n * dims * size];
        self.reader
            .read_exact(&mut bytes)
            .map_err(|e| Error::io(&self.path, e))?;
        let data: Vec<T> = bytes.chunks_exact(size).map(T::read_le).collect();
        check_finite(&data, dims, row_offset)?;
        Ok(EmbeddingSet {
            rows: n,
            dims,
            data,
            modality: self.modality.clone(),
        })
    }

    /// Reads every remaining row into one set.
    pub fn read_all(mut self) -> Result<AnyEmbeddings> {
        let n = (self.header.rows - self.next_row) as usize;
        let offset = self.next_row as usize;
        Ok(match self.header.dtype {
            Dtype::F32 => AnyEmbeddings::F32(self.read_rows::<f32>(n, offset)?),
            Dtype::F64 => AnyEmbeddings::F64(self.read_rows::<f64>(n, offset)?),
        })
    }
}

pub fn read_embeddings(path: impl AsRef<Path>, format: Format) -> Result<AnyEmbeddings> {
    match format {
        Format::Emb1 => EmbReader::open(path)?.read_all(),
        Format::Csv => read_csv(path.as_ref()).map(AnyEmbeddings::F64),
    }
}

/// Reads a file and widens it to f64, picking the format from the extension.
pub fn read_embeddings_f64(path: impl AsRef<Path>) -> Result<EmbeddingSet<f64>> {
    let path = path.as_ref();
    Ok(read_embeddings(path, Format::from_path(path))?.into_f64())
}

fn read_csv(path: &Path) -> Result<EmbeddingSet<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Csv {
                line: 0,
                message: format!("{other:?}"),
            },
        })?;
    let mut data = Vec::new();
    let mut dims = None;
    let mut rows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let d = *dims.get_or_insert(rec.len());
        if rec.len() != d {
            return Err(Error::Csv {
                line: i + 1,
                message: format!("row has {} values, expected {d}", rec.len()),
            });
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Csv {
                line: i + 1,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row: rows, col });
            }
            data.push(v);
        }
        rows += 1;
    }
    let dims = dims.ok_or_else(|| Error::Csv {
        line: 0,
        message: "empty CSV has no dimension".into(),
    })?;
    let modality = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    EmbeddingSet::new(rows, dims, data, modality)
}

fn emb1_bytes<T: Real>(set: &EmbeddingSet<T>) -> Vec<u8> {
    let header = Emb1Header {
        dtype: T::DTYPE,
        rows: set.rows as u64,
        dims: set.dims as u32,
    };
    let mut out = Vec::with_capacity(EMB1_HEADER_LEN + set.data.len() * T::DTYPE.size());
    out.extend_from_slice(&header.to_bytes());
    for &v in &set.data {
        v.write_le(&mut out);
    }
    out
}

fn csv_text<T: Real>(set: &EmbeddingSet<T>) -> String {
    let mut s = String::new();
    for row in set.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Writes atomically (temp file in the target directory, then rename).
pub fn write_embeddings<T: Real>(set: &EmbeddingSet<T>, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Emb1 => emb1_bytes(set),
        Format::Csv => csv_text(set).into_bytes(),
    };
    write_atomic(path.as_ref(), &bytes)
}

pub fn write_any(set: &AnyEmbeddings, path: impl AsRef<Path>, format: Format) -> Result<()> {
    match set {
        AnyEmbeddings::F32(s) => write_embeddings(s, path, format),
        AnyEmbeddings::F64(s) => write_embeddings(s, path, format),
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("output path {} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

/// Where an artifact came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Input path → hex SHA-256 digest.
    #[serde(default)]
    pub source_digests: BTreeMap<String, String>,
    /// Input label → number of samples used.
    #[serde(default)]
    pub sample_counts: BTreeMap<String, u64>,
    /// Creation parameters as given on the command line or in code.
    #[serde(default)]
    pub parameters: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    ModalityStats(ModalityStats<f64>),
    AlignmentStats(AlignmentStats<f64>),
    BlockwiseStats(BlockwiseStats<f64>),
    ReferenceFrame(ReferenceFrame<f64>),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::ModalityStats(_) => "modality_stats",
            Payload::AlignmentStats(_) => "alignment_stats",
            Payload::BlockwiseStats(_) => "blockwise_stats",
            Payload::ReferenceFrame(_) => "reference_frame",
        }
    }
}

/// A persisted statistics object with schema version and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsArtifact {
    pub schema_version: u32,
    pub payload: Payload,
    #[serde(default)]
    pub provenance: Provenance,
}

impl StatsArtifact {
    pub fn new(payload: Payload, provenance: Provenance) -> Self {
        StatsArtifact {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            payload,
            provenance,
        }
    }

    pub fn to_text(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::CorruptArtifact(e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::CorruptArtifact(e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::CorruptArtifact("missing schema_version".into()))?;
        if version != ARTIFACT_SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion {
                found: version.min(u32::MAX as u64) as u32,
                supported: ARTIFACT_SCHEMA_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::CorruptArtifact(e.to_string()))
    }

    pub fn into_modality_stats(self) -> Result<ModalityStats<f64>> {
        match self.payload {
            Payload::ModalityStats(s) => Ok(s),
            other => Err(wrong("modality_stats", &other)),
        }
    }

    pub fn into_alignment_stats(self) -> Result<AlignmentStats<f64>> {
        match self.payload {
            Payload::AlignmentStats(s) => Ok(s),
            other => Err(wrong("alignment_stats", &other)),
        }
    }

    pub fn into_blockwise_stats(self) -> Result<BlockwiseStats<f64>> {
        match self.payload {
            Payload::BlockwiseStats(s) => Ok(s),
            other => Err(wrong("blockwise_stats", &other)),
        }
    }

    pub fn into_frame(self) -> Result<ReferenceFrame<f64>> {
        match self.payload {
            Payload::ReferenceFrame(s) => Ok(s),
            other => Err(wrong("reference_frame", &other)),
        }
    }
}

fn wrong(expected: &'static str, found: &Payload) -> Error {
    Error::WrongPayload {
        expected,
        found: found.kind(),
    }
}

pub fn save_artifact(artifact: &StatsArtifact, path: impl AsRef<Path>) -> Result<()> {
    let mut text = artifact.to_text()?;
    text.push('\n');
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<StatsArtifact> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    StatsArtifact::from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> EmbeddingSet<f64> {
        EmbeddingSet::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], "x").unwrap()
    }

    #[test]
    fn reads_identity_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.emb");
        write_embeddings(&fixture(), &p, Format::Emb1).unwrap();
        let back = read_embeddings(&p, Format::Emb1).unwrap();
        assert_eq!(back.rows(), 2);
        assert_eq!(back.dims(), 3);
        assert_eq!(back.into_f64().as_slice(), fixture().as_slice());
    }

    #[test]
    fn empty_set_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.emb");
        write_embeddings(&EmbeddingSet::<f64>::empty(4, "x").unwrap(), &p, Format::Emb1).unwrap();
        let back = read_embeddings(&p, Format::Emb1).unwrap();
        assert_eq!((back.rows(), back.dims()), (0, 4));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.emb");
        let mut bytes = emb1_bytes(&fixture());
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(EmbReader::open(&p), Err(Error::Truncated { .. })));
        bytes.extend_from_slice(&[0, 0]);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(EmbReader::open(&p), Err(Error::Truncated { .. })));
    }

    #[test]
    fn malformed_headers_are_rejected() {
        let good = emb1_bytes(&fixture());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Emb1Header::parse(&bad_magic), Err(Error::MalformedHeader(_))));
        let mut bad_dtype = good.clone();
        bad_dtype[8] = 7;
        assert!(matches!(Emb1Header::parse(&bad_dtype), Err(Error::MalformedHeader(_))));
        let mut zero_dims = good.clone();
        zero_dims[20..24].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(Emb1Header::parse(&zero_dims), Err(Error::MalformedHeader(_))));
        assert!(Emb1Header::parse(&good[..10]).is_err());
    }

    #[test]
    fn non_finite_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.emb");
        let mut bytes = emb1_bytes(&fixture());
        let off = EMB1_HEADER_LEN + 8 * 4;
        bytes[off..off + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        match read_embeddings(&p, Format::Emb1) {
            Err(Error::NonFinite { row, col }) => assert_eq!((row, col), (1, 1)),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn streaming_visits_rows_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.emb");
        let rows: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, -(i as f32)]).collect();
        write_embeddings(&EmbeddingSet::from_rows(&rows, "y").unwrap(), &p, Format::Emb1).unwrap();
        let mut rdr = EmbReader::open(&p).unwrap();
        let mut seen = Vec::new();
        while let Some(batch) = rdr.next_batch(3).unwrap() {
            assert!(batch.rows() <= 3);
            let b = batch.into_f64();
            seen.extend(b.row_iter().map(|r| r[0]));
        }
        assert_eq!(seen, (0..10).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn f32_round_trip_is_exact_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.emb");
        let s = EmbeddingSet::<f32>::from_rows(&[vec![0.1, 1.0 / 3.0]], "x").unwrap();
        write_embeddings(&s, &p, Format::Emb1).unwrap();
        match read_embeddings(&p, Format::Emb1).unwrap() {
            AnyEmbeddings::F32(back) => assert_eq!(back.as_slice(), s.as_slice()),
            other => panic!("dtype changed: {:?}", other.dtype()),
        }
    }

    #[test]
    fn csv_promotes_to_f64_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let s = EmbeddingSet::<f64>::from_rows(&[vec![0.1, -2.5e-7], vec![1.0 / 3.0, 7.0]], "c").unwrap();
        write_embeddings(&s, &p, Format::Csv).unwrap();
        let back = read_embeddings(&p, Format::Csv).unwrap();
        assert_eq!(back.dtype(), Dtype::F64);
        assert_eq!(back.into_f64().as_slice(), s.as_slice());
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(matches!(read_embeddings(&p, Format::Csv), Err(Error::Csv { line: 2, .. })));
        std::fs::write(&p, "1,nan\n").unwrap();
        assert!(matches!(read_embeddings(&p, Format::Csv), Err(Error::NonFinite { row: 0, col: 1 })));
    }

    #[test]
    fn future_schema_version_is_an_error() {
        let stats = ModalityStats {
            mean: vec![0.0, 0.0],
            trace: 1.0,
            covariance: None,
            n: 10,
        };
        let art = StatsArtifact::new(Payload::ModalityStats(stats), Provenance::default());
        let text = art.to_text().unwrap().replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(
            StatsArtifact::from_text(&text),
            Err(Error::SchemaVersion { found: 2, supported: 1 })
        ));
        assert!(matches!(StatsArtifact::from_text("{not json"), Err(Error::CorruptArtifact(_))));
    }
}
