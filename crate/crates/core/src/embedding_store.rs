//! On-disk and in-memory representation of embeddings and dataset records.
//!
//! Embedding stores use the `CAPEVEC1` little-endian binary layout:
//!
//! | bytes            | content                              |
//! |------------------|--------------------------------------|
//! | 0..8             | ASCII magic `CAPEVEC1`               |
//! | 8..12            | `u32` version, always 1              |
//! | 12..16           | `u32` dimension `d`                  |
//! | 16..24           | `u64` record count                   |
//! | per record       | `u32` id length, UTF-8 id bytes, `u8` modality (0 image, 1 text), `d` x `f32` |
//!
//! Vectors are L2-normalized whenever they enter a store, so downstream cosine
//! similarity is a plain dot product.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mt_select::MtCandidate;
use crate::task_harness::NliLabel;

pub const MAGIC: &[u8; 8] = b"CAPEVEC1";
pub const FORMAT_VERSION: u32 = 1;
/// Magic, version, dimension and record count.
pub const HEADER_LEN: usize = 8 + 4 + 4 + 8;

/// Vectors whose norm is already this close to 1 are stored untouched, which
/// keeps normalization idempotent across save/load cycles.
const UNIT_NORM_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    fn to_byte(self) -> u8 {
        match self {
            Modality::Image => 0,
            Modality::Text => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Modality::Image),
            1 => Some(Modality::Text),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f32>,
    pub modality: Modality,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, vector: Vec<f32>, modality: Modality) -> Self {
        Self {
            id: id.into(),
            vector,
            modality,
        }
    }
}

/// Scales `v` to unit Euclidean norm, accumulating in `f64`.
///
/// Returns `None` for zero or non-finite vectors.
pub fn normalize(v: &mut [f32]) -> Option<()> {
    let norm = v
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    if (norm - 1.0).abs() > UNIT_NORM_SLACK {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
    Some(())
}

/// An id-keyed collection of unit-norm vectors sharing one dimension.
///
/// Records keep insertion order; that order is what [`save_store`] writes.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dimension: usize,
    records: Vec<EmbeddingRecord>,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingStore {
    fn eq(&self, other: &Self) -> bool {
        self.dimension == other.dimension && self.records == other.records
    }
}

impl EmbeddingStore {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Corrupt("dimension must be positive".into()));
        }
        Ok(Self {
            dimension,
            records: Vec::new(),
            index: HashMap::new(),
        })
    }

    /// Builds a store from raw records, normalizing each vector.
    pub fn from_records<I>(dimension: usize, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = EmbeddingRecord>,
    {
        let mut store = Self::new(dimension)?;
        for record in records {
            store.insert(record)?;
        }
        Ok(store)
    }

    /// Adds a record after checking its dimension and id, then normalizes it.
    pub fn insert(&mut self, mut record: EmbeddingRecord) -> Result<()> {
        if record.vector.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: record.vector.len(),
            });
        }
        if self.index.contains_key(&record.id) {
            return Err(Error::DuplicateId(record.id));
        }
        if normalize(&mut record.vector).is_none() {
            return Err(Error::Data(format!(
                "vector `{}` has zero or non-finite norm",
                record.id
            )));
        }
        self.index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.get(id).map(|r| r.vector.as_slice())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.iter()
    }

    /// Encoded size in bytes of this store.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self
                .records
                .iter()
                .map(|r| 4 + r.id.len() + 1 + 4 * self.dimension)
                .sum::<usize>()
    }
}

pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_store(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn save_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if store.is_empty() {
        return Err(Error::Precondition("cannot save an empty store".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_store(store, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_store<W: Write>(store: &EmbeddingStore, w: &mut W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(store.dimension as u32).to_le_bytes())?;
    w.write_all(&(store.records.len() as u64).to_le_bytes())?;
    for record in &store.records {
        w.write_all(&(record.id.len() as u32).to_le_bytes())?;
        w.write_all(record.id.as_bytes())?;
        w.write_all(&[record.modality.to_byte()])?;
        for x in &record.vector {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_store<R: Read>(mut r: R) -> Result<EmbeddingStore> {
    let io_err = |e: io::Error| Error::io("<stream>", e);

    let mut magic = [0u8; 8];
    read_or_truncated(&mut r, &mut magic, || {
        Error::Format("file too short for CAPEVEC1 header".into())
    })?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, expected CAPEVEC1".into()));
    }
    let mut u32_buf = [0u8; 4];
    let mut u64_buf = [0u8; 8];
    read_or_truncated(&mut r, &mut u32_buf, || {
        Error::Format("truncated header".into())
    })?;
    let version = u32::from_le_bytes(u32_buf);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    read_or_truncated(&mut r, &mut u32_buf, || {
        Error::Corrupt("truncated header".into())
    })?;
    let dimension = u32::from_le_bytes(u32_buf) as usize;
    read_or_truncated(&mut r, &mut u64_buf, || {
        Error::Corrupt("truncated header".into())
    })?;
    let count = u64::from_le_bytes(u64_buf);

    let mut store = EmbeddingStore::new(dimension)?;
    let mut vec_buf = vec![0u8; 4 * dimension];
    for k in 0..count {
        let truncated =
            || Error::Corrupt(format!("header declares {count} records but file ends in record {k}"));
        read_or_truncated(&mut r, &mut u32_buf, truncated)?;
        let id_len = u32::from_le_bytes(u32_buf) as usize;
        let mut id_bytes = vec![0u8; id_len];
        read_or_truncated(&mut r, &mut id_bytes, truncated)?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| Error::Corrupt(format!("record {k} id is not valid UTF-8")))?;
        let mut modality = [0u8; 1];
        read_or_truncated(&mut r, &mut modality, truncated)?;
        let modality = Modality::from_byte(modality[0])
            .ok_or_else(|| Error::Corrupt(format!("record `{id}` has modality byte {}", modality[0])))?;
        read_or_truncated(&mut r, &mut vec_buf, truncated)?;
        let vector = vec_buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(EmbeddingRecord::new(id, vector, modality))?;
    }

    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => Ok(store),
        Ok(_) => Err(Error::Corrupt(format!(
            "trailing bytes after the {count} declared records"
        ))),
        Err(e) => Err(io_err(e)),
    }
}

fn read_or_truncated<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    on_eof: impl FnOnce() -> Error,
) -> Result<()> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(on_eof()),
        Err(e) => Err(Error::io("<stream>", e)),
    }
}

// ---------------------------------------------------------------------------
// JSONL datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One metric input aligned with one human judgment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatedPairRecord {
    pub instance_id: String,
    pub image_id: String,
    pub candidate_id: String,
    #[serde(default)]
    pub reference_ids: Vec<String>,
    pub rating: f64,
    pub language: String,
    pub split: Split,
}

/// A true caption and its minimally perturbed foil for the same image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoilRecord {
    pub image_id: String,
    pub caption_id: String,
    pub foil_id: String,
    pub phenomenon: String,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliRecord {
    pub image_id: String,
    pub caption_id: String,
    pub label: NliLabel,
    pub language: String,
}

/// A caption that should hold for both images when `label` is true.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoImageRecord {
    pub group_id: String,
    pub caption_id: String,
    pub image_left: String,
    pub image_right: String,
    pub label: bool,
    pub language: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PascalCategory {
    HC,
    HI,
    HM,
    MM,
}

impl PascalCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            PascalCategory::HC => "HC",
            PascalCategory::HI => "HI",
            PascalCategory::HM => "HM",
            PascalCategory::MM => "MM",
        }
    }
}

/// Pairwise human preference between two candidate captions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub image_id: String,
    pub candidate_a: String,
    pub candidate_b: String,
    pub category: PascalCategory,
    pub votes_a: u32,
    pub votes_b: u32,
    #[serde(default)]
    pub reference_ids: Vec<String>,
}

/// A record type readable from newline-delimited JSON.
pub trait JsonlRecord: DeserializeOwned {
    /// Semantic checks beyond what deserialization enforces.
    fn validate(&self) -> std::result::Result<(), String> {
        Ok(())
    }
}

impl JsonlRecord for RatedPairRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.rating.is_finite() {
            Ok(())
        } else {
            Err(format!("rating of `{}` is not finite", self.instance_id))
        }
    }
}

impl JsonlRecord for FoilRecord {}
impl JsonlRecord for NliRecord {}
impl JsonlRecord for TwoImageRecord {}
impl JsonlRecord for PreferenceRecord {}

impl JsonlRecord for MtCandidate {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.qe_score.is_finite() {
            Ok(())
        } else {
            Err(format!("qe_score of `{}` is not finite", self.candidate_id))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetSchema {
    RatedPair,
    Foil,
    Nli,
    TwoImage,
    Preference,
    MtCandidate,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    RatedPair(Vec<RatedPairRecord>),
    Foil(Vec<FoilRecord>),
    Nli(Vec<NliRecord>),
    TwoImage(Vec<TwoImageRecord>),
    Preference(Vec<PreferenceRecord>),
    MtCandidate(Vec<MtCandidate>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::RatedPair(v) => v.len(),
            Dataset::Foil(v) => v.len(),
            Dataset::Nli(v) => v.len(),
            Dataset::TwoImage(v) => v.len(),
            Dataset::Preference(v) => v.len(),
            Dataset::MtCandidate(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn load_jsonl_dataset(path: impl AsRef<Path>, schema: DatasetSchema) -> Result<Dataset> {
    let path = path.as_ref();
    Ok(match schema {
        DatasetSchema::RatedPair => Dataset::RatedPair(load_jsonl(path)?),
        DatasetSchema::Foil => Dataset::Foil(load_jsonl(path)?),
        DatasetSchema::Nli => Dataset::Nli(load_jsonl(path)?),
        DatasetSchema::TwoImage => Dataset::TwoImage(load_jsonl(path)?),
        DatasetSchema::Preference => Dataset::Preference(load_jsonl(path)?),
        DatasetSchema::MtCandidate => Dataset::MtCandidate(load_jsonl(path)?),
    })
}

pub fn load_jsonl<T: JsonlRecord>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses one record per non-blank line. Line numbers in errors are 1-based
/// physical lines.
pub fn read_jsonl<T: JsonlRecord, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        record.validate().map_err(|message| Error::LineData {
            line: line_no,
            message,
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], w: &mut W) -> io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut *w, record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
