//! Quality filtering: language identification, perplexity bucketing, a
//! reference-likeness classifier, and heuristics for source-code files.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Language, PplBucket, ReasonCode, StageOutput};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hashing::{derive, fnv1a64, mix64, unit_f64};

// ---------------------------------------------------------------------------
// language identification

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangVerdict {
    pub language: Language,
    pub confidence: f64,
    pub zh_char_fraction: f64,
    pub latin_char_fraction: f64,
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF
        | 0x3400..=0x4DBF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF
        | 0x30000..=0x3134F
        | 0xF900..=0xFAFF
        | 0x2F800..=0x2FA1F)
}

pub fn is_latin_letter(c: char) -> bool {
    c.is_alphabetic()
        && matches!(c as u32,
            0x41..=0x5A | 0x61..=0x7A
            | 0xC0..=0x24F
            | 0x1E00..=0x1EFF
            | 0x2C60..=0x2C7F
            | 0xA720..=0xA7FF
            | 0xFF21..=0xFF3A | 0xFF41..=0xFF5A)
}

/// Counts (letters, cjk, latin). CJK ideographs are alphabetic in Unicode,
/// so both subsets are drawn from the letter class.
pub fn letter_counts(text: &str) -> (usize, usize, usize) {
    let mut letters = 0;
    let mut zh = 0;
    let mut latin = 0;
    for c in text.chars().filter(|c| c.is_alphabetic()) {
        letters += 1;
        if is_cjk(c) {
            zh += 1;
        } else if is_latin_letter(c) {
            latin += 1;
        }
    }
    (letters, zh, latin)
}

pub fn detect_language(text: &str) -> LangVerdict {
    let (letters, zh, latin) = letter_counts(text);
    if letters == 0 {
        return LangVerdict {
            language: Language::Unknown,
            confidence: 0.0,
            zh_char_fraction: 0.0,
            latin_char_fraction: 0.0,
        };
    }
    let zh_f = zh as f64 / letters as f64;
    let latin_f = latin as f64 / letters as f64;
    let (language, confidence) = if zh_f >= 0.3 {
        (Language::Zh, zh_f)
    } else if latin_f >= 0.5 && zh_f < 0.05 {
        (Language::En, latin_f)
    } else {
        (Language::Other, 1.0 - zh_f.max(latin_f))
    };
    LangVerdict {
        language,
        confidence,
        zh_char_fraction: zh_f,
        latin_char_fraction: latin_f,
    }
}

// ---------------------------------------------------------------------------
// hashed character n-gram features

pub const DEFAULT_FEATURE_DIM: usize = 1 << 18;
const MAX_NGRAM: usize = 3;

/// Sparse, length-normalized hashed character n-grams for n = 1..=3.
///
/// The text is read cyclically (windows wrap from the end back to the
/// start), so every order contributes exactly one window per character.
/// Repeating a text therefore doubles every count and the total, and the
/// normalized features are bit-identical.
pub fn features(text: &str, dim: usize) -> Vec<(u32, f64)> {
    let chars: Vec<char> = text.chars().collect();
    let len = chars.len();
    if len == 0 || dim == 0 {
        return Vec::new();
    }
    let mut counts: std::collections::HashMap<u32, u32> = std::collections::HashMap::new();
    let mut buf = [0u8; 4 * MAX_NGRAM + 1];
    for n in 1..=MAX_NGRAM {
        for i in 0..len {
            buf[0] = n as u8;
            let mut w = 1;
            for k in 0..n {
                w += chars[(i + k) % len].encode_utf8(&mut buf[w..]).len();
            }
            let bucket = (mix64(fnv1a64(&buf[..w])) % dim as u64) as u32;
            *counts.entry(bucket).or_insert(0) += 1;
        }
    }
    let total = (len * MAX_NGRAM) as f64;
    let mut out: Vec<(u32, f64)> = counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / total))
        .collect();
    out.sort_unstable_by_key(|&(k, _)| k);
    out
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityClassifier {
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub feature_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            feature_dim: DEFAULT_FEATURE_DIM,
            epochs: 10,
            lr: 5.0,
            seed: 0,
        }
    }
}

/// Mean log-loss after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

const CLASSIFIER_MAGIC: &[u8; 8] = b"CURQCLF1";

impl QualityClassifier {
    pub fn logit(&self, feats: &[(u32, f64)]) -> f64 {
        feats
            .iter()
            .map(|&(k, v)| self.weights[k as usize] * v)
            .sum::<f64>()
            + self.bias
    }

    /// Probability that `text` looks like reference-quality text.
    pub fn score(&self, text: &str) -> f64 {
        sigmoid(self.logit(&features(text, self.feature_dim)))
    }

    /// Logistic regression by plain SGD, one shuffled pass per epoch.
    pub fn train(
        positives: &[&str],
        negatives: &[&str],
        params: &TrainParams,
        exec: Execution,
    ) -> Result<(Self, TrainReport)> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::Training(format!(
                "both classes need examples (positives: {}, negatives: {})",
                positives.len(),
                negatives.len()
            )));
        }
        if params.feature_dim == 0 || !(params.lr > 0.0) {
            return Err(Error::Usage("feature_dim must be positive and lr > 0".into()));
        }
        let dim = params.feature_dim;
        let pos = exec.map(positives, |t| features(t, dim));
        let neg = exec.map(negatives, |t| features(t, dim));
        let mut examples: Vec<(&[(u32, f64)], f64)> = pos
            .iter()
            .map(|f| (f.as_slice(), 1.0))
            .chain(neg.iter().map(|f| (f.as_slice(), 0.0)))
            .collect();

        let mut model = Self {
            feature_dim: dim,
            weights: vec![0.0; dim],
            bias: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut epoch_losses = Vec::with_capacity(params.epochs);
        for _ in 0..params.epochs {
            examples.shuffle(&mut rng);
            for &(feats, label) in &examples {
                let g = sigmoid(model.logit(feats)) - label;
                for &(k, v) in feats {
                    model.weights[k as usize] -= params.lr * g * v;
                }
                model.bias -= params.lr * g;
            }
            let loss = examples
                .iter()
                .map(|&(f, y)| {
                    let p = sigmoid(model.logit(f)).clamp(1e-15, 1.0 - 1e-15);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / examples.len() as f64;
            epoch_losses.push(loss);
        }
        Ok((model, TrainReport { epoch_losses }))
    }

    /// Flat little-endian layout: 8 magic bytes, feature_dim as u64, the
    /// weights as f64, then the bias as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * (self.weights.len() + 2));
        out.extend_from_slice(CLASSIFIER_MAGIC);
        out.extend_from_slice(&(self.feature_dim as u64).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&self.bias.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Integrity(format!("classifier file: {m}"));
        if bytes.len() < 16 || &bytes[..8] != CLASSIFIER_MAGIC {
            return Err(bad("bad magic"));
        }
        let dim = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let expected = dim
            .checked_add(3)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| bad("feature_dim overflow"))?;
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let weights = (0..dim).map(|j| f(16 + 8 * j)).collect();
        Ok(Self {
            feature_dim: dim,
            weights,
            bias: f(16 + 8 * dim),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

// ---------------------------------------------------------------------------
// perplexity buckets

/// Nearest-rank value at fraction `num/den` of a sorted population.
fn nearest_rank(sorted: &[f64], num: usize, den: usize) -> f64 {
    let n = sorted.len();
    let rank = (num * n).div_ceil(den).max(1);
    sorted[rank - 1]
}

/// Head/middle/tail assignment against a calibration population of
/// reference perplexities (sorted ascending). Boundaries are the
/// nearest-rank tertiles.
pub fn assign_ppl_bucket(doc_ppl: f64, calibration: &[f64]) -> Result<PplBucket> {
    if !(doc_ppl > 0.0) || !doc_ppl.is_finite() {
        return Err(Error::Domain(format!("perplexity must be positive and finite, got {doc_ppl}")));
    }
    if calibration.is_empty() {
        return Err(Error::Usage("calibration set is empty".into()));
    }
    if calibration.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Usage("calibration set must be sorted ascending".into()));
    }
    let head_max = nearest_rank(calibration, 1, 3);
    let tail_min = nearest_rank(calibration, 2, 3);
    Ok(if doc_ppl <= head_max {
        PplBucket::Head
    } else if doc_ppl > tail_min {
        PplBucket::Tail
    } else {
        PplBucket::Middle
    })
}

/// Reads one perplexity per line (blank lines ignored) and sorts them.
pub fn read_calibration(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("not a number: {line:?}")))?;
        if !(v > 0.0) {
            return Err(Error::parse(i + 1, "perplexity must be positive"));
        }
        out.push(v);
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

// ---------------------------------------------------------------------------
// code heuristics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodeFilterPolicy {
    pub max_line_len: usize,
    pub max_mean_line_len: f64,
    pub min_alnum_fraction: f64,
    pub markup_keep_fraction: f64,
}

impl Default for CodeFilterPolicy {
    fn default() -> Self {
        Self {
            max_line_len: 1000,
            max_mean_line_len: 100.0,
            min_alnum_fraction: 0.25,
            markup_keep_fraction: 0.1,
        }
    }
}

const MARKUP_EXTENSIONS: &[&str] = &["json", "xml", "yaml", "yml", "html", "htm"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeVerdict {
    pub keep: bool,
    pub reasons: Vec<ReasonCode>,
}

fn extension(path_hint: &str) -> Option<String> {
    let name = path_hint.rsplit(['/', '\\']).next()?;
    let (_, ext) = name.rsplit_once('.')?;
    Some(ext.to_ascii_lowercase())
}

/// Line-length and alphanumeric heuristics, plus deterministic
/// down-sampling of data/markup formats keyed on `(seed, path_hint)`.
/// Lengths are in Unicode scalar values.
pub fn filter_code_file(path_hint: &str, text: &str, policy: &CodeFilterPolicy, seed: u64) -> CodeVerdict {
    if text.trim().is_empty() {
        return CodeVerdict {
            keep: false,
            reasons: vec![ReasonCode::Empty],
        };
    }
    let mut reasons = Vec::new();
    let mut lines = 0usize;
    let mut line_chars = 0usize;
    let mut longest = 0usize;
    for line in text.lines() {
        let n = line.chars().count();
        lines += 1;
        line_chars += n;
        longest = longest.max(n);
    }
    if longest > policy.max_line_len {
        reasons.push(ReasonCode::LongLine);
    }
    if line_chars as f64 / lines.max(1) as f64 > policy.max_mean_line_len {
        reasons.push(ReasonCode::MeanLine);
    }
    let total = text.chars().count();
    let alnum = text.chars().filter(|c| c.is_alphanumeric()).count();
    if (alnum as f64) / (total as f64) < policy.min_alnum_fraction {
        reasons.push(ReasonCode::LowAlnum);
    }
    if reasons.is_empty() {
        if let Some(ext) = extension(path_hint) {
            if MARKUP_EXTENSIONS.contains(&ext.as_str()) {
                let u = unit_f64(derive(seed, fnv1a64(path_hint.as_bytes())));
                if u >= policy.markup_keep_fraction {
                    reasons.push(ReasonCode::MarkupSampled);
                }
            }
        }
    }
    CodeVerdict {
        keep: reasons.is_empty(),
        reasons,
    }
}

// ---------------------------------------------------------------------------
// stage

/// Produces a document-level perplexity from a reference language model.
pub trait PerplexityScorer: Sync {
    fn perplexity(&self, text: &str) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityPolicy {
    pub keep_languages: Vec<Language>,
    /// Applied only when a classifier is supplied.
    pub min_reference_prob: f64,
    /// Applied only when a scorer and calibration set are supplied.
    pub retained_buckets: Vec<PplBucket>,
    /// Documents from these sources go through the code heuristics instead
    /// of language and quality checks.
    pub code_sources: Vec<String>,
    pub code: CodeFilterPolicy,
}

impl Default for QualityPolicy {
    fn default() -> Self {
        Self {
            keep_languages: vec![Language::En, Language::Zh],
            min_reference_prob: 0.5,
            retained_buckets: vec![PplBucket::Head, PplBucket::Middle],
            code_sources: vec!["github".into()],
            code: CodeFilterPolicy::default(),
        }
    }
}

#[derive(Default)]
pub struct QualityModels<'a> {
    pub classifier: Option<&'a QualityClassifier>,
    pub scorer: Option<&'a dyn PerplexityScorer>,
    /// Sorted ascending.
    pub calibration: Option<&'a [f64]>,
}

pub fn assess_document(
    mut doc: Document,
    models: &QualityModels<'_>,
    policy: &QualityPolicy,
    seed: u64,
) -> Result<Document> {
    if policy.code_sources.iter().any(|s| *s == doc.source) {
        let hint = doc.url.clone().unwrap_or_else(|| doc.id.clone());
        let verdict = filter_code_file(&hint, &doc.text, &policy.code, seed);
        doc.annotations_mut();
        for r in verdict.reasons {
            doc.reject(r);
        }
        return Ok(doc);
    }

    let verdict = detect_language(&doc.text);
    doc.language = verdict.language;
    doc.annotations_mut().lang_confidence = verdict.confidence;
    if !policy.keep_languages.contains(&verdict.language) {
        doc.reject(ReasonCode::Language);
    }
    if let Some(clf) = models.classifier {
        let p = clf.score(&doc.text);
        doc.annotations_mut().wiki_ref_prob = p;
        if p < policy.min_reference_prob {
            doc.reject(ReasonCode::LowQuality);
        }
    }
    if let (Some(scorer), Some(cal)) = (models.scorer, models.calibration) {
        if !doc.text.is_empty() {
            let ppl = scorer.perplexity(&doc.text)?;
            let bucket = assign_ppl_bucket(ppl, cal)?;
            doc.annotations_mut().ppl_bucket = bucket;
            if !policy.retained_buckets.contains(&bucket) {
                doc.reject(ReasonCode::PplBucket);
            }
        }
    }
    if doc.text.trim().is_empty() {
        doc.reject(ReasonCode::Empty);
    }
    Ok(doc)
}

pub fn quality_stage(
    docs: &[Document],
    models: &QualityModels<'_>,
    policy: &QualityPolicy,
    seed: u64,
    exec: Execution,
) -> Result<StageOutput> {
    let out = exec.try_map(docs, |d| assess_document(d.clone(), models, policy, seed))?;
    Ok(StageOutput::partition(out))
}
