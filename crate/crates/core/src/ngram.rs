//! Interpolated Kneser-Ney n-gram language model over token ids.
//!
//! The vocabulary is closed (byte fallback makes every text encodable), so
//! the recursion bottoms out in the uniform distribution over
//! `vocab_size` tokens and every token gets non-zero probability:
//!
//! ```text
//! P_k(w | h) = max(c_k(h, w) - D, 0) / c_k(h, .)
//!            + D * N1+(h, .) / c_k(h, .) * P_{k-1}(w | h')
//! P_0(w)     = 1 / V
//! ```
//!
//! `c_N` are raw counts for the highest order and `c_k`, `k < N`, are
//! continuation counts (number of distinct left extensions). A context
//! never seen in training backs off to the next lower order.
//!
//! Each document is scored independently. Its first tokens are conditioned
//! on `order - 1` begin-of-text symbols, which are never predicted.

use std::io::{Read, Write};
use std::path::Path;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::quality::PerplexityScorer;
use crate::tokenizer::Vocabulary;

/// Context padding symbol. Never a vocabulary id.
pub const BOS: u32 = u32::MAX;

pub const DEFAULT_ORDER: usize = 5;
pub const DEFAULT_DISCOUNT: f64 = 0.75;

/// Contexts of one length, stored as a suffix trie: a context is its
/// one-shorter suffix (the parent) extended by one token on the left.
#[derive(Debug, Clone, Default, PartialEq)]
struct Level {
    parent: Vec<u32>,
    first: Vec<u32>,
    total: Vec<u64>,
    distinct: Vec<u64>,
    /// `(parent, first)` to context id.
    children: FxHashMap<u64, u32>,
    /// `(context, token)` to count.
    counts: FxHashMap<u64, u64>,
}

#[inline]
fn key(a: u32, b: u32) -> u64 {
    (a as u64) << 32 | b as u64
}

impl Level {
    fn root() -> Self {
        Self {
            parent: vec![0],
            first: vec![BOS],
            total: vec![0],
            distinct: vec![0],
            ..Self::default()
        }
    }

    fn child(&self, parent: u32, token: u32) -> Option<u32> {
        self.children.get(&key(parent, token)).copied()
    }

    fn child_or_insert(&mut self, parent: u32, token: u32) -> u32 {
        let next = self.parent.len() as u32;
        let id = *self.children.entry(key(parent, token)).or_insert(next);
        if id == next {
            self.parent.push(parent);
            self.first.push(token);
            self.total.push(0);
            self.distinct.push(0);
        }
        id
    }

    fn add(&mut self, ctx: u32, token: u32, c: u64) {
        let e = self.counts.entry(key(ctx, token)).or_insert(0);
        if *e == 0 {
            self.distinct[ctx as usize] += 1;
        }
        *e += c;
        self.total[ctx as usize] += c;
    }

    fn count(&self, ctx: u32, token: u32) -> u64 {
        self.counts.get(&key(ctx, token)).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    KneserNey,
    /// Relative frequencies with back-off to shorter contexts only when a
    /// context is unseen. Can assign zero probability.
    MaximumLikelihood,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    discount: f64,
    vocab_size: u32,
    smoothing: Smoothing,
    /// `levels[k]` holds contexts of length `k` and the order-(k+1)
    /// statistics that follow them.
    levels: Vec<Level>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoredText {
    /// Nats.
    pub nll_total: f64,
    pub token_count: u64,
    pub char_count: u64,
    pub byte_count: u64,
}

impl ScoredText {
    pub fn is_empty(&self) -> bool {
        self.token_count == 0
    }

    /// Builds a score from per-token natural-log probabilities.
    pub fn from_logprobs(logprobs: &[f64]) -> Self {
        let nll_total = logprobs.iter().fold(0.0, |acc, lp| acc - lp);
        Self {
            nll_total,
            token_count: logprobs.len() as u64,
            char_count: 0,
            byte_count: 0,
        }
    }

    /// Fills character and byte counts from the scored text.
    pub fn with_text(mut self, text: &str) -> Self {
        self.char_count = text.chars().count() as u64;
        self.byte_count = text.len() as u64;
        self
    }

    pub fn add(&mut self, other: &ScoredText) {
        self.nll_total += other.nll_total;
        self.token_count += other.token_count;
        self.char_count += other.char_count;
        self.byte_count += other.byte_count;
    }
}

impl NGramModel {
    /// The untrained model: every token has probability `1 / vocab_size`.
    pub fn uniform(vocab_size: u32, order: usize) -> Self {
        let order = order.max(1);
        let mut levels = vec![Level::default(); order];
        levels[0] = Level::root();
        Self {
            order,
            discount: DEFAULT_DISCOUNT,
            vocab_size,
            smoothing: Smoothing::KneserNey,
            levels,
        }
    }

    /// Counts all n-grams of `docs` (each padded at its start) and derives
    /// the continuation tables. Counting order does not affect the result.
    pub fn train<D: AsRef<[u32]> + Sync>(
        docs: &[D],
        order: usize,
        discount: f64,
        vocab_size: u32,
        exec: Execution,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::Usage("order must be at least 1".into()));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Usage(format!("discount must lie in (0, 1), got {discount}")));
        }
        if vocab_size == 0 {
            return Err(Error::Usage("vocab_size must be positive".into()));
        }
        if docs.iter().all(|d| d.as_ref().is_empty()) {
            return Err(Error::Training("cannot train on an empty token stream".into()));
        }
        if let Some(bad) = docs
            .iter()
            .flat_map(|d| d.as_ref().iter())
            .find(|&&t| t >= vocab_size)
        {
            return Err(Error::Usage(format!("token id {bad} out of range (vocab size {vocab_size})")));
        }

        let padded: Vec<Vec<u32>> = exec.map(docs, |d| pad(d.as_ref(), order));
        let mut windows: Vec<&[u32]> = padded.iter().flat_map(|p| p.windows(order)).collect();
        exec.sort_unstable(&mut windows);
        let mut grams: Vec<(&[u32], u64)> = Vec::new();
        for w in windows {
            match grams.last_mut() {
                Some((g, c)) if *g == w => *c += 1,
                _ => grams.push((w, 1)),
            }
        }
        Ok(Self::from_sorted_counts(grams, order, discount, vocab_size))
    }

    /// Builds every level from the sorted, distinct highest-order counts.
    fn from_sorted_counts<G: AsRef<[u32]>>(
        grams: impl IntoIterator<Item = (G, u64)>,
        order: usize,
        discount: f64,
        vocab_size: u32,
    ) -> Self {
        let mut m = Self::uniform(vocab_size, order);
        m.discount = discount;
        let top = order - 1;
        for (gram, c) in grams {
            let gram = gram.as_ref();
            let mut id = 0u32;
            for l in 1..=top {
                id = m.levels[l].child_or_insert(id, gram[top - l]);
            }
            m.levels[top].add(id, gram[top], c);
        }
        // continuation counts: each distinct (k+1)-gram adds one to its suffix
        for l in (1..=top).rev() {
            let mut pairs: Vec<(u32, u32)> = m.levels[l]
                .counts
                .keys()
                .map(|&k| (m.levels[l].parent[(k >> 32) as usize], k as u32))
                .collect();
            pairs.sort_unstable();
            for (ctx, w) in pairs {
                m.levels[l - 1].add(ctx, w, 1);
            }
        }
        m
    }

    pub fn with_smoothing(mut self, smoothing: Smoothing) -> Self {
        self.smoothing = smoothing;
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// Number of distinct highest-order n-grams.
    pub fn num_ngrams(&self) -> usize {
        self.levels[self.order - 1].counts.len()
    }

    /// `P(token | context)`. Only the last `order - 1` context symbols are
    /// used; shorter contexts are left-padded with [`BOS`].
    pub fn prob(&self, context: &[u32], token: u32) -> f64 {
        let need = self.order - 1;
        let ctx: Vec<u32> = if context.len() >= need {
            context[context.len() - need..].to_vec()
        } else {
            let mut v = vec![BOS; need - context.len()];
            v.extend_from_slice(context);
            v
        };
        self.prob_at(&ctx, token)
    }

    /// `ctx` has exactly `order - 1` symbols.
    fn prob_at(&self, ctx: &[u32], token: u32) -> f64 {
        let uniform = 1.0 / self.vocab_size as f64;
        let top = self.order - 1;
        match self.smoothing {
            Smoothing::KneserNey => {
                // shortest context first, then interpolate upward
                let mut p = uniform;
                let mut id = 0u32;
                for l in 0..=top {
                    let level = &self.levels[l];
                    if l > 0 {
                        // a longer context can only be known if its suffix is
                        match level.child(id, ctx[top - l]) {
                            Some(c) => id = c,
                            None => break,
                        }
                    }
                    let t = level.total[id as usize];
                    if t == 0 {
                        break;
                    }
                    let t = t as f64;
                    let c = level.count(id, token) as f64;
                    p = (c - self.discount).max(0.0) / t
                        + self.discount * level.distinct[id as usize] as f64 / t * p;
                }
                p
            }
            Smoothing::MaximumLikelihood => {
                let mut best = None;
                let mut id = 0u32;
                for l in 0..=top {
                    let level = &self.levels[l];
                    if l > 0 {
                        match level.child(id, ctx[top - l]) {
                            Some(c) => id = c,
                            None => break,
                        }
                    }
                    if level.total[id as usize] > 0 {
                        best = Some((l, id));
                    }
                }
                match best {
                    Some((l, id)) => {
                        let level = &self.levels[l];
                        level.count(id, token) as f64 / level.total[id as usize] as f64
                    }
                    None => uniform,
                }
            }
        }
    }

    /// Natural-log probability of each token given its padded history.
    pub fn token_logprobs(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        if let Some(bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::Usage(format!(
                "token id {bad} out of range (vocab size {})",
                self.vocab_size
            )));
        }
        let padded = pad(tokens, self.order);
        Ok(padded
            .windows(self.order)
            .map(|w| {
                let (ctx, t) = w.split_at(self.order - 1);
                self.prob_at(ctx, t[0]).ln()
            })
            .collect())
    }

    /// Total negative log-likelihood of one document. Character and byte
    /// counts are left at zero; see [`ScoredText::with_text`].
    pub fn logprob(&self, tokens: &[u32]) -> Result<ScoredText> {
        Ok(ScoredText::from_logprobs(&self.token_logprobs(tokens)?))
    }

    /// Tokens of context `id` at level `l`, oldest first.
    fn context_tokens(&self, l: usize, mut id: u32) -> Vec<u32> {
        let mut out = Vec::with_capacity(l);
        for k in (1..=l).rev() {
            out.push(self.levels[k].first[id as usize]);
            id = self.levels[k].parent[id as usize];
        }
        out
    }

    // -- persistence ------------------------------------------------------

    /// Versioned little-endian binary: magic, version, order, discount,
    /// vocab_size, then the highest-order count table sorted by n-gram.
    /// Lower-order tables are rebuilt on load.
    pub fn to_bytes(&self) -> Vec<u8> {
        let top = self.order - 1;
        let mut grams: Vec<(Vec<u32>, u64)> = self.levels[top]
            .counts
            .iter()
            .map(|(&k, &c)| {
                let mut g = self.context_tokens(top, (k >> 32) as u32);
                g.push(k as u32);
                (g, c)
            })
            .collect();
        grams.sort_unstable();
        let mut out = Vec::with_capacity(40 + grams.len() * (4 * self.order + 8));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.order as u32).to_le_bytes());
        out.extend_from_slice(&self.discount.to_le_bytes());
        out.extend_from_slice(&self.vocab_size.to_le_bytes());
        out.extend_from_slice(&(grams.len() as u64).to_le_bytes());
        for (g, c) in grams {
            for id in g {
                out.extend_from_slice(&id.to_le_bytes());
            }
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Integrity(format!("model file: {m}"));
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok_or_else(|| bad("truncated header".into()))? != MODEL_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header".into()))?;
        if version != MODEL_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let header = (|| Some((r.u32()? as usize, r.f64()?, r.u32()?, r.u64()?)))();
        let (order, discount, vocab_size, n) = header.ok_or_else(|| bad("truncated header".into()))?;
        if order == 0 || !(discount > 0.0 && discount < 1.0) || vocab_size == 0 {
            return Err(bad("invalid header values".into()));
        }
        let mut grams: Vec<(Vec<u32>, u64)> = Vec::with_capacity(n.min(1 << 24) as usize);
        for _ in 0..n {
            let gram: Option<Vec<u32>> = (0..order).map(|_| r.u32()).collect();
            let gram = gram.ok_or_else(|| bad("truncated count table".into()))?;
            let c = r.u64().ok_or_else(|| bad("truncated count table".into()))?;
            if c == 0 || gram.iter().any(|&t| t >= vocab_size && t != BOS) || gram[order - 1] == BOS {
                return Err(bad("invalid count entry".into()));
            }
            if grams.last().is_some_and(|(prev, _)| *prev >= gram) {
                return Err(bad("count table not strictly sorted".into()));
            }
            grams.push((gram, c));
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes".into()));
        }
        Ok(Self::from_sorted_counts(grams, order, discount, vocab_size))
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

const MODEL_MAGIC: &[u8; 8] = b"CURNGLM\0";
const MODEL_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

fn pad(tokens: &[u32], order: usize) -> Vec<u32> {
    let mut v = vec![BOS; order - 1];
    v.extend_from_slice(tokens);
    v
}

// ---------------------------------------------------------------------------
// scoring text

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    PerToken,
    PerChar,
    PerByte,
}

impl Normalization {
    pub fn denominator(self, s: &ScoredText) -> u64 {
        match self {
            Normalization::PerToken => s.token_count,
            Normalization::PerChar => s.char_count,
            Normalization::PerByte => s.byte_count,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::PerToken => "per_token",
            Normalization::PerChar => "per_char",
            Normalization::PerByte => "per_byte",
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_token" => Ok(Normalization::PerToken),
            "per_char" => Ok(Normalization::PerChar),
            "per_byte" => Ok(Normalization::PerByte),
            _ => Err(Error::Usage(format!("unknown normalization {s:?}"))),
        }
    }
}

/// Anything that can assign a negative log-likelihood to a text sample.
pub trait TextScorer: Sync {
    fn score(&self, text: &str) -> Result<ScoredText>;
}

/// The built-in n-gram model behind a tokenizer.
pub struct NGramScorer<'a> {
    pub model: &'a NGramModel,
    pub vocab: &'a Vocabulary,
}

impl<'a> NGramScorer<'a> {
    pub fn new(model: &'a NGramModel, vocab: &'a Vocabulary) -> Self {
        Self { model, vocab }
    }

    pub fn token_logprobs(&self, text: &str) -> Result<Vec<f64>> {
        self.model.token_logprobs(self.vocab.encode(text).ids())
    }
}

impl TextScorer for NGramScorer<'_> {
    fn score(&self, text: &str) -> Result<ScoredText> {
        Ok(self.model.logprob(self.vocab.encode(text).ids())?.with_text(text))
    }
}

impl PerplexityScorer for NGramScorer<'_> {
    /// Per-token perplexity of a single document.
    fn perplexity(&self, text: &str) -> Result<f64> {
        let s = self.score(text)?;
        if s.token_count == 0 {
            return Err(Error::Domain("cannot compute perplexity of an empty document".into()));
        }
        Ok((s.nll_total / s.token_count as f64).exp())
    }
}

/// Aggregate loss over a document set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusLoss {
    pub totals: ScoredText,
    pub normalization: Normalization,
    /// Nats per normalization unit.
    pub loss: f64,
    pub perplexity: f64,
}

impl CorpusLoss {
    pub fn from_scores(scores: &[ScoredText], normalization: Normalization) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Usage("no documents to score".into()));
        }
        let mut totals = ScoredText::default();
        for s in scores {
            totals.add(s);
        }
        let denom = normalization.denominator(&totals);
        if denom == 0 {
            return Err(Error::Usage(format!(
                "{} denominator is zero",
                normalization.as_str()
            )));
        }
        let loss = totals.nll_total / denom as f64;
        Ok(Self {
            totals,
            normalization,
            loss,
            perplexity: loss.exp(),
        })
    }
}

/// Scores every document and aggregates `sum(nll) / sum(units)`.
pub fn perplexity<S: TextScorer + ?Sized>(
    scorer: &S,
    docs: &[&str],
    normalization: Normalization,
    exec: Execution,
) -> Result<CorpusLoss> {
    if docs.is_empty() {
        return Err(Error::Usage("no documents to score".into()));
    }
    let scores = exec.try_map(docs, |t| scorer.score(t))?;
    CorpusLoss::from_scores(&scores, normalization)
}

// ---------------------------------------------------------------------------
// external scores

/// Per-token log-probabilities produced by some other model.
///
/// File format: one natural-log probability per line; each document is
/// terminated by a blank line (an empty document is a lone blank line).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalScores {
    pub docs: Vec<Vec<f64>>,
}

impl ExternalScores {
    pub fn parse(content: &str) -> Result<Self> {
        let mut docs = Vec::new();
        let mut cur = Vec::new();
        let mut open = false;
        for (i, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                docs.push(std::mem::take(&mut cur));
                open = false;
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("not a number: {line:?}")))?;
            if !(v <= 0.0) {
                return Err(Error::parse(i + 1, format!("log-probability must be <= 0, got {v}")));
            }
            cur.push(v);
            open = true;
        }
        if open {
            docs.push(cur);
        }
        Ok(Self { docs })
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for d in &self.docs {
            for v in d {
                out.push_str(&v.to_string());
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn scored(&self, index: usize) -> Option<ScoredText> {
        self.docs.get(index).map(|d| ScoredText::from_logprobs(d))
    }
}
