//! Document model and line-delimited manifest persistence.
//!
//! A manifest is UTF-8 text with one JSON object per line. Keys are written
//! in a fixed order (`id, source, url, language, published_at, text,
//! byte_len, char_len, annotations`) so identical manifests serialize to
//! identical bytes.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
    Other,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PplBucket {
    Head,
    Middle,
    Tail,
    #[default]
    Unassigned,
}

/// Closed set of rejection causes. Stages may only drop a document with
/// one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReasonCode {
    /// Nothing left after extraction or the input was empty.
    Empty,
    /// Language is neither English nor Chinese.
    Language,
    /// Reference-likeness classifier score below threshold.
    LowQuality,
    /// Perplexity bucket not in the retained set.
    PplBucket,
    LongLine,
    MeanLine,
    LowAlnum,
    /// Markup-format file not selected by deterministic sampling.
    MarkupSampled,
    NearDup,
    Recurrent,
}

impl ReasonCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasonCode::Empty => "EMPTY",
            ReasonCode::Language => "LANGUAGE",
            ReasonCode::LowQuality => "LOW_QUALITY",
            ReasonCode::PplBucket => "PPL_BUCKET",
            ReasonCode::LongLine => "LONG_LINE",
            ReasonCode::MeanLine => "MEAN_LINE",
            ReasonCode::LowAlnum => "LOW_ALNUM",
            ReasonCode::MarkupSampled => "MARKUP_SAMPLED",
            ReasonCode::NearDup => "NEAR_DUP",
            ReasonCode::Recurrent => "RECURRENT",
        }
    }
}

impl std::fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityAnnotations {
    pub lang_confidence: f64,
    pub wiki_ref_prob: f64,
    pub ppl_bucket: PplBucket,
    #[serde(default)]
    pub drop_reasons: Vec<ReasonCode>,
}

impl Default for QualityAnnotations {
    fn default() -> Self {
        Self {
            lang_confidence: 0.0,
            wiki_ref_prob: 0.0,
            ppl_bucket: PplBucket::Unassigned,
            drop_reasons: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: String,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub language: Language,
    #[serde(default)]
    pub published_at: Option<NaiveDate>,
    pub text: String,
    pub byte_len: u64,
    pub char_len: u64,
    #[serde(default)]
    pub annotations: Option<QualityAnnotations>,
}

impl Document {
    pub fn new(id: impl Into<String>, source: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let (byte_len, char_len) = text_lengths(&text);
        Self {
            id: id.into(),
            source: source.into(),
            url: None,
            language: Language::Unknown,
            published_at: None,
            text,
            byte_len,
            char_len,
            annotations: None,
        }
    }

    /// Replaces the text and recomputes both lengths.
    pub fn set_text(&mut self, text: String) {
        let (b, c) = text_lengths(&text);
        self.text = text;
        self.byte_len = b;
        self.char_len = c;
    }

    pub fn annotations_mut(&mut self) -> &mut QualityAnnotations {
        self.annotations.get_or_insert_with(QualityAnnotations::default)
    }

    /// Records a rejection reason (deduplicated).
    pub fn reject(&mut self, reason: ReasonCode) {
        let ann = self.annotations_mut();
        if !ann.drop_reasons.contains(&reason) {
            ann.drop_reasons.push(reason);
        }
    }

    pub fn is_rejected(&self) -> bool {
        self.annotations
            .as_ref()
            .is_some_and(|a| !a.drop_reasons.is_empty())
    }
}

pub fn text_lengths(text: &str) -> (u64, u64) {
    (text.len() as u64, text.chars().count() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Violation {
    LenMismatch,
    ProbRange,
    EmptyId,
}

impl Violation {
    pub fn as_str(self) -> &'static str {
        match self {
            Violation::LenMismatch => "LEN_MISMATCH",
            Violation::ProbRange => "PROB_RANGE",
            Violation::EmptyId => "EMPTY_ID",
        }
    }
}

/// Checks the per-document invariants. An empty result means the document
/// is well formed.
pub fn validate_document(doc: &Document) -> Vec<Violation> {
    let mut out = Vec::new();
    if doc.id.is_empty() {
        out.push(Violation::EmptyId);
    }
    let (b, c) = text_lengths(&doc.text);
    if doc.byte_len != b || doc.char_len != c {
        out.push(Violation::LenMismatch);
    }
    if let Some(a) = &doc.annotations {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(a.lang_confidence) || !ok(a.wiki_ref_prob) {
            out.push(Violation::ProbRange);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStats {
    pub documents: u64,
    pub bytes: u64,
    pub chars: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    documents: Vec<Document>,
    stats: BTreeMap<String, SourceStats>,
}

impl CorpusManifest {
    /// Builds a manifest, rejecting duplicate ids.
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for d in &documents {
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate document id {:?}", d.id)));
            }
        }
        let mut stats: BTreeMap<String, SourceStats> = BTreeMap::new();
        for d in &documents {
            let s = stats.entry(d.source.clone()).or_default();
            s.documents += 1;
            s.bytes += d.byte_len;
            s.chars += d.char_len;
        }
        Ok(Self { documents, stats })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }

    pub fn stats(&self) -> &BTreeMap<String, SourceStats> {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.documents.iter().map(|d| d.text.as_str()).collect()
    }
}

/// Result of one filtering stage: documents that pass, in input order, and
/// documents that were rejected, each carrying at least one reason code.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageOutput {
    pub kept: Vec<Document>,
    pub dropped: Vec<Document>,
}

impl StageOutput {
    /// Splits processed documents on [`Document::is_rejected`], keeping order.
    pub fn partition(docs: Vec<Document>) -> Self {
        let (dropped, kept) = docs.into_iter().partition(|d| d.is_rejected());
        Self { kept, dropped }
    }

    pub fn total(&self) -> usize {
        self.kept.len() + self.dropped.len()
    }

    /// Drop counts per reason. A document with several reasons counts once
    /// under each.
    pub fn drop_counts(&self) -> BTreeMap<ReasonCode, u64> {
        let mut out = BTreeMap::new();
        for d in &self.dropped {
            for r in d.annotations.iter().flat_map(|a| a.drop_reasons.iter()) {
                *out.entry(*r).or_insert(0) += 1;
            }
        }
        out
    }

    pub fn kept_manifest(&self) -> Result<CorpusManifest> {
        CorpusManifest::new(self.kept.clone())
    }
}

/// Serializes one document in canonical key order, without a trailing
/// newline. Newlines inside the text are escaped by the JSON encoding.
pub fn document_to_line(doc: &Document) -> String {
    serde_json::to_string(doc).expect("document serialization is infallible")
}

/// Parses one manifest line and checks the stored lengths. `line_no` is
/// 1-based and only used for error messages.
pub fn document_from_line(line: &str, line_no: usize) -> Result<Document> {
    let doc: Document =
        serde_json::from_str(line).map_err(|e| Error::parse(line_no, e.to_string()))?;
    let (b, c) = text_lengths(&doc.text);
    if doc.byte_len != b || doc.char_len != c {
        return Err(Error::parse(
            line_no,
            format!(
                "LEN_MISMATCH for {:?}: stored byte_len={} char_len={}, actual {} / {}",
                doc.id, doc.byte_len, doc.char_len, b, c
            ),
        ));
    }
    Ok(doc)
}

pub fn parse_manifest(content: &str, exec: Execution) -> Result<CorpusManifest> {
    let lines: Vec<(usize, &str)> = content
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .collect();
    // a trailing newline leaves one empty final element
    let lines = match lines.last() {
        Some((_, "")) => &lines[..lines.len() - 1],
        _ => &lines[..],
    };
    let docs = exec.try_map(lines, |&(n, l)| document_from_line(l, n))?;
    CorpusManifest::new(docs)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    read_manifest_with(path, Execution::default())
}

pub fn read_manifest_with(path: impl AsRef<Path>, exec: Execution) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let mut content = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut content))
        .map_err(|e| Error::io(path, e))?;
    parse_manifest(&content, exec)
}

pub fn manifest_to_string(manifest: &CorpusManifest) -> String {
    let mut out = String::new();
    for d in manifest.documents() {
        out.push_str(&document_to_line(d));
        out.push('\n');
    }
    out
}

pub fn write_manifest(manifest: &CorpusManifest, path: impl AsRef<Path>) -> Result<()> {
    write_documents(manifest.documents(), path)
}

pub fn write_documents(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        w.write_all(document_to_line(d).as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
