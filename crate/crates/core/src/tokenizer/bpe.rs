//! Byte-level BPE training.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};

use super::pretokenize::{split_digits, split_pieces, Segment};
use super::{BaseVocab, Category, Entry};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Counts word pieces over the corpus. Digits never take part in merges,
/// so they are not counted.
pub fn count_pieces(texts: &[&str], exec: Execution) -> HashMap<Vec<u8>, u64> {
    exec.map_reduce(
        texts,
        HashMap::new,
        |acc: &mut HashMap<Vec<u8>, u64>, text| {
            for seg in split_digits(text) {
                if let Segment::Text(t) = seg {
                    for p in split_pieces(t) {
                        *acc.entry(p.as_bytes().to_vec()).or_insert(0) += 1;
                    }
                }
            }
        },
        |mut a, b| {
            if a.len() < b.len() {
                return merge_counts(b, a);
            }
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        },
    )
}

fn merge_counts(mut a: HashMap<Vec<u8>, u64>, b: HashMap<Vec<u8>, u64>) -> HashMap<Vec<u8>, u64> {
    for (k, v) in b {
        *a.entry(k).or_insert(0) += v;
    }
    a
}

#[derive(PartialEq, Eq)]
struct Candidate {
    count: u64,
    left: Vec<u8>,
    right: Vec<u8>,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // highest count first; ties go to the lexicographically smallest pair
        self.count
            .cmp(&other.count)
            .then_with(|| Reverse((&self.left, &self.right)).cmp(&Reverse((&other.left, &other.right))))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedy BPE starting from the 256 byte tokens.
///
/// Each round merges the most frequent adjacent pair (ties broken by the
/// byte-wise lexicographic order of `(left, right)`) until `target_size`
/// entries exist or no pair is left. Returns entries `0..256` as byte
/// tokens followed by one entry per merge.
pub fn train_bpe(texts: &[&str], target_size: usize, exec: Execution) -> Result<BaseVocab> {
    if target_size <= 256 {
        return Err(Error::Usage(format!("target_size must exceed 256, got {target_size}")));
    }
    if texts.iter().all(|t| t.is_empty()) {
        return Err(Error::Usage("cannot train BPE on an empty corpus".into()));
    }
    let counts = count_pieces(texts, exec);
    // deterministic word order regardless of hash-map iteration
    let mut words: Vec<(Vec<u8>, u64)> = counts.into_iter().collect();
    words.sort_unstable();
    let mut words: Vec<(Vec<u32>, u64)> = words
        .into_iter()
        .map(|(bytes, c)| (bytes.into_iter().map(u32::from).collect(), c))
        .collect();

    let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut pair_words: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, (syms, c)) in words.iter().enumerate() {
        for w in syms.windows(2) {
            let p = (w[0], w[1]);
            *pair_counts.entry(p).or_insert(0) += c;
            pair_words.entry(p).or_default().insert(wi);
        }
    }
    let candidate = |tokens: &[Vec<u8>], pair: (u32, u32), count: u64| Candidate {
        count,
        left: tokens[pair.0 as usize].clone(),
        right: tokens[pair.1 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&p, &c)| candidate(&tokens, p, c))
        .collect();

    let mut merges = Vec::new();
    while tokens.len() < target_size {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current == 0 {
            continue;
        }
        if current != top.count {
            heap.push(candidate(&tokens, top.pair, current));
            continue;
        }
        let new_id = tokens.len() as u32;
        let mut merged = top.left.clone();
        merged.extend_from_slice(&top.right);
        tokens.push(merged);
        merges.push(top.pair);

        let affected: Vec<usize> = {
            let mut v: Vec<usize> = pair_words.remove(&top.pair).unwrap_or_default().into_iter().collect();
            v.sort_unstable();
            v
        };
        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        for wi in affected {
            let (syms, c) = &mut words[wi];
            let c = *c;
            for w in syms.windows(2) {
                let p = (w[0], w[1]);
                if let Some(e) = pair_counts.get_mut(&p) {
                    *e -= c;
                }
                touched.insert(p);
            }
            *syms = apply_merge(syms, top.pair, new_id);
            for w in syms.windows(2) {
                let p = (w[0], w[1]);
                *pair_counts.entry(p).or_insert(0) += c;
                pair_words.entry(p).or_default().insert(wi);
                touched.insert(p);
            }
        }
        let mut touched: Vec<_> = touched.into_iter().collect();
        touched.sort_unstable();
        for p in touched {
            match pair_counts.get(&p).copied() {
                Some(0) | None => {
                    pair_counts.remove(&p);
                }
                Some(c) => heap.push(candidate(&tokens, p, c)),
            }
        }
    }

    let entries = tokens
        .into_iter()
        .enumerate()
        .map(|(i, bytes)| Entry {
            bytes,
            category: if i < 256 { Category::Byte } else { Category::LatinSubword },
        })
        .collect();
    Ok(BaseVocab { entries, merges })
}

/// Replaces non-overlapping occurrences of `pair`, scanning left to right.
pub(crate) fn apply_merge(syms: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}
