//! Paragraph recurrence capping and MinHash/LSH near-duplicate removal.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, ReasonCode, StageOutput};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hashing::{derive, fnv1a64, hash_str, mix64};
use crate::unionfind::UnionFind;

/// Hashes of every contiguous `k`-character window, deduplicated and sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    pub k: usize,
    pub hashes: Vec<u64>,
}

impl ShingleSet {
    pub fn from_hashes(k: usize, mut hashes: Vec<u64>) -> Self {
        hashes.sort_unstable();
        hashes.dedup();
        Self { k, hashes }
    }

    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    /// Exact Jaccard similarity of two sets. Two empty sets count as 1.
    pub fn jaccard(&self, other: &ShingleSet) -> f64 {
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        let (a, b) = (&self.hashes, &other.hashes);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        let union = a.len() + b.len() - inter;
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Collapses every whitespace run to a single space and trims.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn shingle(text: &str, k: usize) -> ShingleSet {
    assert!(k >= 1, "shingle length must be at least 1");
    let norm = collapse_whitespace(text);
    let bounds: Vec<usize> = norm
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(norm.len()))
        .collect();
    let windows = bounds.len().saturating_sub(1).saturating_sub(k - 1);
    let hashes = (0..windows)
        .map(|i| hash_str(&norm[bounds[i]..bounds[i + k]]))
        .collect();
    ShingleSet::from_hashes(k, hashes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub num_hashes: usize,
    pub seed: u64,
    pub values: Vec<u64>,
}

/// The `i`-th member of the hash family. `mix64` is a bijection on u64, so
/// each member is a pseudo-random permutation keyed by `(seed, i)`.
#[inline]
pub fn family_hash(seed: u64, i: usize, x: u64) -> u64 {
    mix64(x ^ derive(seed, i as u64))
}

pub fn minhash(shingles: &ShingleSet, num_hashes: usize, seed: u64) -> MinHashSignature {
    assert!(num_hashes >= 1, "num_hashes must be at least 1");
    let keys: Vec<u64> = (0..num_hashes).map(|i| derive(seed, i as u64)).collect();
    let mut values = vec![u64::MAX; num_hashes];
    for &x in &shingles.hashes {
        for (v, &key) in values.iter_mut().zip(&keys) {
            let h = mix64(x ^ key);
            if h < *v {
                *v = h;
            }
        }
    }
    MinHashSignature {
        num_hashes,
        seed,
        values,
    }
}

impl MinHashSignature {
    /// Empty shingle sets produce all-sentinel signatures.
    pub fn is_sentinel(&self) -> bool {
        self.values.iter().all(|&v| v == u64::MAX)
    }
}

pub fn jaccard_estimate(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64> {
    if a.num_hashes != b.num_hashes || a.seed != b.seed || a.values.len() != b.values.len() {
        return Err(Error::Usage(format!(
            "signature parameters differ: ({}, seed {}) vs ({}, seed {})",
            a.num_hashes, a.seed, b.num_hashes, b.seed
        )));
    }
    let same = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.num_hashes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LshParams {
    pub bands: usize,
    pub rows: usize,
    pub threshold: f64,
}

/// Groups of near-duplicate signatures (indices into `signatures`).
///
/// Signatures that agree on every row of at least one band become
/// candidate pairs; candidates whose estimated Jaccard reaches the
/// threshold are merged with union-find. Sentinel signatures (texts shorter
/// than the shingle length) never participate.
pub fn lsh_group(signatures: &[MinHashSignature], params: &LshParams, exec: Execution) -> Result<Vec<Vec<usize>>> {
    let Some(first) = signatures.first() else {
        return Ok(Vec::new());
    };
    if params.bands == 0 || params.rows == 0 || params.bands * params.rows != first.num_hashes {
        return Err(Error::Usage(format!(
            "bands ({}) x rows ({}) must equal num_hashes ({})",
            params.bands, params.rows, first.num_hashes
        )));
    }
    if let Some(bad) = signatures
        .iter()
        .find(|s| s.num_hashes != first.num_hashes || s.seed != first.seed)
    {
        return Err(Error::Usage(format!(
            "mixed signature parameters: ({}, seed {}) vs ({}, seed {})",
            first.num_hashes, first.seed, bad.num_hashes, bad.seed
        )));
    }

    let live: Vec<usize> = (0..signatures.len())
        .filter(|&i| !signatures[i].is_sentinel())
        .collect();
    let rows = params.rows;
    let per_band: Vec<Vec<(usize, usize)>> = exec.map_range(0..params.bands, |b| {
        let mut buckets: HashMap<&[u64], Vec<usize>> = HashMap::new();
        for &i in &live {
            buckets
                .entry(&signatures[i].values[b * rows..(b + 1) * rows])
                .or_default()
                .push(i);
        }
        let mut pairs = Vec::new();
        for members in buckets.values().filter(|m| m.len() > 1) {
            for (x, &i) in members.iter().enumerate() {
                for &j in &members[x + 1..] {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    });

    let mut seen = HashSet::new();
    let mut candidates: Vec<(usize, usize)> = per_band
        .into_iter()
        .flatten()
        .filter(|p| seen.insert(*p))
        .collect();
    candidates.sort_unstable();
    let accepted = exec.map(&candidates, |&(i, j)| {
        jaccard_estimate(&signatures[i], &signatures[j]).map(|e| e >= params.threshold)
    });

    let mut uf = UnionFind::new(signatures.len());
    for (&(i, j), ok) in candidates.iter().zip(accepted) {
        if ok? {
            uf.union(i, j);
        }
    }
    Ok(uf.groups())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DedupParams {
    /// Shingle length in Unicode scalar values.
    pub k: usize,
    pub num_hashes: usize,
    pub bands: usize,
    pub threshold: f64,
    pub max_occurrences: usize,
    pub seed: u64,
}

impl Default for DedupParams {
    fn default() -> Self {
        Self {
            k: 5,
            num_hashes: 128,
            bands: 16,
            threshold: 0.8,
            max_occurrences: 5,
            seed: 0,
        }
    }
}

impl DedupParams {
    pub fn lsh(&self) -> Result<LshParams> {
        if self.bands == 0 || self.num_hashes % self.bands != 0 {
            return Err(Error::Usage(format!(
                "num_hashes ({}) must be a multiple of bands ({})",
                self.num_hashes, self.bands
            )));
        }
        Ok(LshParams {
            bands: self.bands,
            rows: self.num_hashes / self.bands,
            threshold: self.threshold,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.num_hashes == 0 || self.max_occurrences == 0 {
            return Err(Error::Usage("k, num_hashes and max_occurrences must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Usage(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        self.lsh().map(|_| ())
    }
}

pub fn signatures(docs: &[Document], params: &DedupParams, exec: Execution) -> Vec<MinHashSignature> {
    exec.map(docs, |d| minhash(&shingle(&d.text, params.k), params.num_hashes, params.seed))
}

/// Drops every member of a near-duplicate group except the one that comes
/// first in manifest order.
pub fn near_dedup(docs: &[Document], params: &DedupParams, exec: Execution) -> Result<StageOutput> {
    params.validate()?;
    let sigs = signatures(docs, params, exec);
    let groups = lsh_group(&sigs, &params.lsh()?, exec)?;
    let mut out = docs.to_vec();
    for group in groups {
        for &i in &group[1..] {
            out[i].reject(ReasonCode::NearDup);
        }
    }
    Ok(StageOutput::partition(out))
}

/// Splits on blank lines; returns the raw paragraph slices that contain
/// something other than whitespace.
pub fn paragraphs(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut end = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() {
            if let Some(s) = start.take() {
                out.push(&text[s..end]);
            }
        } else {
            if start.is_none() {
                start = Some(offset);
            }
            end = offset + line.trim_end_matches(['\n', '\r']).len();
        }
        offset += line.len();
    }
    if let Some(s) = start {
        out.push(&text[s..end]);
    }
    out
}

fn paragraph_key(p: &str) -> u64 {
    mix64(fnv1a64(collapse_whitespace(p).as_bytes()))
}

/// Removes paragraphs whose normalized text occurs more than
/// `max_occurrences` times across the corpus. The first `max_occurrences`
/// occurrences in manifest order are kept. Documents left with no text
/// are dropped with `RECURRENT`; untouched documents are passed through
/// byte-for-byte.
pub fn recurrence_filter(docs: &[Document], max_occurrences: usize, exec: Execution) -> Result<StageOutput> {
    if max_occurrences == 0 {
        return Err(Error::Usage("max_occurrences must be at least 1".into()));
    }
    let keyed: Vec<Vec<u64>> = exec.map(docs, |d| paragraphs(&d.text).into_iter().map(paragraph_key).collect());
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut out = Vec::with_capacity(docs.len());
    for (doc, keys) in docs.iter().zip(&keyed) {
        let keep: Vec<bool> = keys
            .iter()
            .map(|k| {
                let c = seen.entry(*k).or_insert(0);
                *c += 1;
                *c <= max_occurrences
            })
            .collect();
        let mut doc = doc.clone();
        if keep.iter().any(|k| !k) {
            let text = paragraphs(&doc.text)
                .into_iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(p, _)| p)
                .collect::<Vec<_>>()
                .join("\n\n");
            if text.is_empty() {
                doc.reject(ReasonCode::Recurrent);
            }
            doc.set_text(text);
        }
        out.push(doc);
    }
    Ok(StageOutput::partition(out))
}

/// Recurrence capping followed by near-duplicate removal.
pub fn dedup_stage(docs: &[Document], params: &DedupParams, exec: Execution) -> Result<StageOutput> {
    params.validate()?;
    let first = recurrence_filter(docs, params.max_occurrences, exec)?;
    let second = near_dedup(&first.kept, params, exec)?;
    let mut dropped = first.dropped;
    dropped.extend(second.dropped);
    // restore input order among the dropped documents
    let order: HashMap<&str, usize> = docs.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    dropped.sort_by_key(|d| order.get(d.id.as_str()).copied().unwrap_or(usize::MAX));
    Ok(StageOutput {
        kept: second.kept,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn short_text_has_no_shingles() {
        assert!(shingle("abcd", 5).is_empty());
        assert!(shingle("", 1).is_empty());
    }

    #[test]
    fn abcab_has_three_windows() {
        let s = shingle("abcab", 3);
        assert_eq!(s.len(), 3);
        let expect = ShingleSet::from_hashes(3, vec![hash_str("abc"), hash_str("bca"), hash_str("cab")]);
        assert_eq!(s, expect);
    }

    #[test]
    fn shingles_count_scalars_not_bytes() {
        assert_eq!(shingle("中文分词测试", 5).len(), 2);
        assert_eq!(shingle("a  b\t\nc", 3), shingle("a b c", 3));
    }

    #[test]
    fn empty_set_gives_sentinel() {
        let sig = minhash(&ShingleSet::from_hashes(5, vec![]), 16, 1);
        assert!(sig.is_sentinel());
        assert_eq!(sig.values, vec![u64::MAX; 16]);
    }

    #[test]
    fn signature_matches_brute_force_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set = ShingleSet::from_hashes(5, (0..1000).map(|_| rng.gen()).collect());
        assert_eq!(set.len(), 1000);
        let sig = minhash(&set, 256, 99);
        for i in 0..256 {
            let brute = set.hashes.iter().map(|&x| family_hash(99, i, x)).min().unwrap();
            assert_eq!(sig.values[i], brute);
        }
    }

    #[test]
    fn estimate_requires_matching_parameters() {
        let s = shingle("hello world", 3);
        let a = minhash(&s, 16, 1);
        assert!(jaccard_estimate(&a, &minhash(&s, 32, 1)).is_err());
        assert!(jaccard_estimate(&a, &minhash(&s, 16, 2)).is_err());
        assert_eq!(jaccard_estimate(&a, &a.clone()).unwrap(), 1.0);
    }

    #[test]
    fn band_mismatch_is_usage_error() {
        let sig = minhash(&shingle("hello world", 3), 128, 0);
        let p = LshParams { bands: 10, rows: 10, threshold: 0.8 };
        assert!(matches!(lsh_group(&[sig], &p, Execution::Sequential), Err(Error::Usage(_))));
    }

    #[test]
    fn paragraph_split() {
        assert_eq!(paragraphs("a\nb\n\n  \nc\n"), vec!["a\nb", "c"]);
        assert!(paragraphs("\n\n").is_empty());
    }

    #[test]
    fn exact_duplicates_group_and_keep_first() {
        let text = "The same article text, repeated across five different pages of a site.";
        let mut docs: Vec<Document> = (0..5).map(|i| Document::new(format!("d{i}"), "web", text)).collect();
        docs.insert(2, Document::new("other", "web", "Something entirely unrelated to the rest of them."));
        let out = near_dedup(&docs, &DedupParams::default(), Execution::Sequential).unwrap();
        let kept: Vec<_> = out.kept.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(kept, vec!["d0", "other"]);
        assert_eq!(out.dropped.len(), 4);
    }

    #[test]
    fn boilerplate_paragraph_capped() {
        let boiler = "Subscribe to our newsletter for more updates!";
        let docs: Vec<Document> = (0..10)
            .map(|i| Document::new(format!("d{i}"), "web", format!("Unique body number {i}.\n\n{boiler}")))
            .collect();
        let out = recurrence_filter(&docs, 5, Execution::Sequential).unwrap();
        assert_eq!(out.kept.len(), 10);
        for (i, d) in out.kept.iter().enumerate() {
            assert_eq!(d.text.contains(boiler), i < 5, "doc {i}");
        }
    }

    #[test]
    fn emptied_document_is_recurrent() {
        let docs: Vec<Document> = (0..3).map(|i| Document::new(format!("d{i}"), "web", "same")).collect();
        let out = recurrence_filter(&docs, 1, Execution::Sequential).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.dropped.len(), 2);
        assert!(out.dropped.iter().all(|d| d.annotations.as_ref().unwrap().drop_reasons == vec![ReasonCode::Recurrent]));
    }

    #[test]
    fn unique_paragraphs_pass_unchanged() {
        let docs = vec![
            Document::new("a", "web", "one\n\n\n\ntwo  "),
            Document::new("b", "web", "three"),
        ];
        let out = recurrence_filter(&docs, 5, Execution::Sequential).unwrap();
        assert_eq!(out.kept, docs);
        assert!(recurrence_filter(&[], 5, Execution::Sequential).unwrap().kept.is_empty());
    }
}
