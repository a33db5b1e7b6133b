//! Embedded document corpus and vector primitives.
//!
//! A corpus file is line-delimited JSON, one document per line:
//!
//! ```text
//! {"id":"p1","title":"...","abstract":"...","date":"2024-05","embedding":[0.1,0.2,0.3]}
//! ```
//!
//! Blank lines are ignored. Dates carry year and month only.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VectorError {
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus: I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus: malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("corpus: dimension mismatch at line {line}: expected {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("corpus: duplicate id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("corpus: document {id:?} has a non-finite embedding component")]
    NonFinite { id: String },
    #[error("corpus: document {id:?} has a zero-norm embedding")]
    ZeroNorm { id: String },
    #[error("corpus: document {id:?} has an empty embedding")]
    EmptyEmbedding { id: String },
    #[error("corpus: no documents")]
    Empty,
}

/// Publication date at month resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: u16,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: u16, month: u8) -> Option<Self> {
        (1..=12).contains(&month).then_some(YearMonth { year, month })
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('-').collect();
        match parts.as_slice() {
            [y, m] if y.len() == 4 && m.len() == 2 => {
                let year: u16 = y.parse().map_err(|_| format!("bad year in {s:?}"))?;
                let month: u8 = m.parse().map_err(|_| format!("bad month in {s:?}"))?;
                YearMonth::new(year, month).ok_or_else(|| format!("month out of range in {s:?}"))
            }
            [_, _, _] => Err(format!("date {s:?} has day precision; expected YYYY-MM")),
            _ => Err(format!("date {s:?} is not YYYY-MM")),
        }
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRecord {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub date: YearMonth,
    pub embedding: Vec<f64>,
}

/// The query side of a retrieval step: background, optional motivation and the
/// hypothesis accumulated so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryContext {
    pub background: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motivation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate_hypothesis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_embedding: Option<Vec<f64>>,
}

impl QueryContext {
    pub fn from_background(background: impl Into<String>) -> Self {
        QueryContext {
            background: background.into(),
            ..Default::default()
        }
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Self {
        self.query_embedding = Some(embedding);
        self
    }
}

/// Read access to the documents a tree is built over.
///
/// Implemented by [`Corpus`] and by the synthetic item sets used in simulation.
pub trait DocSource: Sync {
    fn len(&self) -> usize;
    fn doc_id(&self, pos: usize) -> &str;
    fn title(&self, pos: usize) -> &str;
    fn abstract_text(&self, pos: usize) -> &str;
    /// Empty for sources without embeddings.
    fn vector(&self, pos: usize) -> &[f64];
    fn position(&self, id: &str) -> Option<usize>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An immutable, validated set of documents with a common embedding dimension.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<DocRecord>,
    dim: usize,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<DocRecord>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(docs.len());
        let mut dim = None;
        for (pos, doc) in docs.iter().enumerate() {
            validate_record(doc, pos + 1, &mut dim)?;
            if index.insert(doc.id.clone(), pos).is_some() {
                return Err(CorpusError::DuplicateId {
                    id: doc.id.clone(),
                    line: pos + 1,
                });
            }
        }
        let dim = dim.ok_or(CorpusError::Empty)?;
        Ok(Corpus { docs, dim, index })
    }

    pub fn docs(&self) -> &[DocRecord] {
        &self.docs
    }

    pub fn doc(&self, pos: usize) -> &DocRecord {
        &self.docs[pos]
    }

    pub fn get(&self, id: &str) -> Option<&DocRecord> {
        self.index.get(id).map(|&p| &self.docs[p])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// SHA-256 over ids and embedding bits, in document order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.docs.len() as u64).to_le_bytes());
        h.update((self.dim as u64).to_le_bytes());
        for doc in &self.docs {
            h.update((doc.id.len() as u64).to_le_bytes());
            h.update(doc.id.as_bytes());
            for x in &doc.embedding {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

impl DocSource for Corpus {
    fn len(&self) -> usize {
        self.docs.len()
    }
    fn doc_id(&self, pos: usize) -> &str {
        &self.docs[pos].id
    }
    fn title(&self, pos: usize) -> &str {
        &self.docs[pos].title
    }
    fn abstract_text(&self, pos: usize) -> &str {
        &self.docs[pos].abstract_text
    }
    fn vector(&self, pos: usize) -> &[f64] {
        &self.docs[pos].embedding
    }
    fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

fn validate_record(doc: &DocRecord, line: usize, dim: &mut Option<usize>) -> Result<(), CorpusError> {
    if doc.embedding.is_empty() {
        return Err(CorpusError::EmptyEmbedding { id: doc.id.clone() });
    }
    match *dim {
        None => *dim = Some(doc.embedding.len()),
        Some(d) if d != doc.embedding.len() => {
            return Err(CorpusError::DimensionMismatch {
                line,
                expected: d,
                found: doc.embedding.len(),
            })
        }
        Some(_) => {}
    }
    if doc.embedding.iter().any(|x| !x.is_finite()) {
        return Err(CorpusError::NonFinite { id: doc.id.clone() });
    }
    if doc.embedding.iter().all(|&x| x == 0.0) {
        return Err(CorpusError::ZeroNorm { id: doc.id.clone() });
    }
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text)
}

/// Parses corpus text; errors carry 1-based line numbers.
pub fn parse_corpus(text: &str) -> Result<Corpus, CorpusError> {
    let mut docs = Vec::new();
    let mut index = HashMap::new();
    let mut dim = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let doc: DocRecord = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        validate_record(&doc, line, &mut dim)?;
        if index.insert(doc.id.clone(), docs.len()).is_some() {
            return Err(CorpusError::DuplicateId { id: doc.id, line });
        }
        docs.push(doc);
    }
    let dim = dim.ok_or(CorpusError::Empty)?;
    Ok(Corpus { docs, dim, index })
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for doc in &corpus.docs {
        let line = serde_json::to_string(doc).expect("DocRecord serialises");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, VectorError> {
    if a.len() != b.len() {
        return Err(VectorError::LengthMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine that treats a zero vector as orthogonal to everything. Internal helper for
/// centroids, which can legitimately cancel to zero.
pub(crate) fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        (dot(a, b) / denom).clamp(-1.0, 1.0)
    }
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>, VectorError> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(VectorError::ZeroNorm);
    }
    Ok(v.iter().map(|x| x / n).collect())
}
