//! Byte-level BPE tokenizer with a bilingual vocabulary extension.
//!
//! A [`Vocabulary`] is assembled from four parts, in id order: a base BPE
//! vocabulary (which always holds the 256 byte tokens), single Chinese
//! characters, Chinese words, and reserved symbols. Encoding:
//!
//! 1. ASCII digits are split off one by one;
//! 2. characters, words and reserved symbols from the extension are
//!    matched greedily, longest first;
//! 3. the remaining text is cut into word pieces and BPE-encoded;
//! 4. bytes with no merge path stay as byte tokens, so encoding is total.
//!
//! Tokens are byte strings, so `decode(encode(s)) == s` for every string.

mod bpe;
pub mod pretokenize;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bpe::{count_pieces, train_bpe};
use pretokenize::{split_digits, split_pieces, Segment};

use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    LatinSubword,
    ZhChar,
    ZhWord,
    Reserved,
    Byte,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::LatinSubword => "latin_subword",
            Category::ZhChar => "zh_char",
            Category::ZhWord => "zh_word",
            Category::Reserved => "reserved",
            Category::Byte => "byte",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "latin_subword" => Category::LatinSubword,
            "zh_char" => Category::ZhChar,
            "zh_word" => Category::ZhWord,
            "reserved" => Category::Reserved,
            "byte" => Category::Byte,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Entry {
    pub bytes: Vec<u8>,
    pub category: Category,
}

impl Entry {
    /// The textual form used in vocabulary files. Byte tokens render as
    /// `<0xHH>`; everything else renders as text with spaces shown as `▁`
    /// and `\`-escapes for control characters, invalid UTF-8, a literal
    /// `▁`, and a leading `<`.
    pub fn display(&self) -> String {
        if self.category == Category::Byte {
            return format!("<0x{:02X}>", self.bytes[0]);
        }
        let mut out = String::new();
        let mut rest: &[u8] = &self.bytes;
        while !rest.is_empty() {
            let (valid, invalid) = match std::str::from_utf8(rest) {
                Ok(s) => (s, &[][..]),
                Err(e) => {
                    let (v, tail) = rest.split_at(e.valid_up_to());
                    let bad = e.error_len().unwrap_or(tail.len());
                    (std::str::from_utf8(v).unwrap(), &tail[..bad])
                }
            };
            for c in valid.chars() {
                match c {
                    ' ' => out.push('▁'),
                    '▁' => out.push_str("\\u{2581}"),
                    '\\' => out.push_str("\\\\"),
                    '\t' => out.push_str("\\t"),
                    '\n' => out.push_str("\\n"),
                    '\r' => out.push_str("\\r"),
                    '<' if out.is_empty() => out.push_str("\\<"),
                    c if c.is_control() => {
                        let _ = write!(out, "\\u{{{:x}}}", c as u32);
                    }
                    c => out.push(c),
                }
            }
            for b in invalid {
                let _ = write!(out, "\\x{b:02X}");
            }
            rest = &rest[valid.len() + invalid.len()..];
        }
        out
    }

    pub fn parse_display(s: &str, category: Category) -> Option<Entry> {
        if category == Category::Byte {
            let hex = s.strip_prefix("<0x")?.strip_suffix('>')?;
            if hex.len() != 2 {
                return None;
            }
            return Some(Entry {
                bytes: vec![u8::from_str_radix(hex, 16).ok()?],
                category,
            });
        }
        let mut bytes = Vec::new();
        let mut chars = s.chars();
        let mut buf = [0u8; 4];
        while let Some(c) = chars.next() {
            match c {
                '▁' => bytes.push(b' '),
                '\\' => match chars.next()? {
                    '\\' => bytes.push(b'\\'),
                    't' => bytes.push(b'\t'),
                    'n' => bytes.push(b'\n'),
                    'r' => bytes.push(b'\r'),
                    '<' => bytes.push(b'<'),
                    'x' => {
                        let h: String = chars.by_ref().take(2).collect();
                        bytes.push(u8::from_str_radix(&h, 16).ok()?);
                    }
                    'u' => {
                        if chars.next()? != '{' {
                            return None;
                        }
                        let h: String = chars.by_ref().take_while(|&c| c != '}').collect();
                        let c = char::from_u32(u32::from_str_radix(&h, 16).ok()?)?;
                        bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                    }
                    _ => return None,
                },
                c => bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes()),
            }
        }
        if bytes.is_empty() {
            return None;
        }
        Some(Entry { bytes, category })
    }
}

/// Output of BPE training, or any base vocabulary supplied by the caller:
/// entries (which must include all 256 byte tokens) and merge rules as
/// pairs of entry ids, in priority order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseVocab {
    pub entries: Vec<Entry>,
    pub merges: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Character trie over the extension entries for longest-match lookup.
#[derive(Debug, Clone, Default)]
struct Trie {
    children: Vec<HashMap<char, usize>>,
    terminal: Vec<Option<u32>>,
}

impl Trie {
    fn new() -> Self {
        Self {
            children: vec![HashMap::new()],
            terminal: vec![None],
        }
    }

    fn insert(&mut self, key: &str, id: u32) {
        let mut node = 0;
        for c in key.chars() {
            node = match self.children[node].get(&c) {
                Some(&n) => n,
                None => {
                    self.children.push(HashMap::new());
                    self.terminal.push(None);
                    let n = self.children.len() - 1;
                    self.children[node].insert(c, n);
                    n
                }
            };
        }
        self.terminal[node] = Some(id);
    }

    /// Longest entry that prefixes `text`: (id, byte length).
    fn longest(&self, text: &str) -> Option<(u32, usize)> {
        let mut node = 0;
        let mut best = None;
        for (i, c) in text.char_indices() {
            match self.children[node].get(&c) {
                Some(&n) => node = n,
                None => break,
            }
            if let Some(id) = self.terminal[node] {
                best = Some((id, i + c.len_utf8()));
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<Entry>,
    merges: Vec<(u32, u32)>,
    /// pair -> (rank, merged id)
    merge_rank: HashMap<(u32, u32), (u32, u32)>,
    byte_ids: [u32; 256],
    prematch: Trie,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.merges == other.merges
    }
}

/// Category sizes of an assembled vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct VocabBreakdown {
    pub base: usize,
    pub zh_chars: usize,
    pub zh_words: usize,
    pub reserved: usize,
    pub total: usize,
}

/// Combines a base vocabulary with the three extension lists.
///
/// Ids are assigned in the order base, `zh_chars`, `zh_words`, `reserved`.
/// Any token that appears twice (within or across parts) is an integrity
/// error naming the token.
pub fn assemble_vocab(
    base: BaseVocab,
    zh_chars: &[String],
    zh_words: &[String],
    reserved: &[String],
) -> Result<Vocabulary> {
    let mut entries = base.entries;
    for (list, category) in [
        (zh_chars, Category::ZhChar),
        (zh_words, Category::ZhWord),
        (reserved, Category::Reserved),
    ] {
        entries.extend(list.iter().map(|s| Entry {
            bytes: s.as_bytes().to_vec(),
            category,
        }));
    }
    Vocabulary::from_parts(entries, base.merges)
}

impl Vocabulary {
    /// Validates and indexes a full entry list.
    pub fn from_parts(entries: Vec<Entry>, merges: Vec<(u32, u32)>) -> Result<Self> {
        if entries.len() > u32::MAX as usize {
            return Err(Error::Integrity("too many entries".into()));
        }
        let mut seen: HashMap<(bool, &[u8]), usize> = HashMap::with_capacity(entries.len());
        let mut byte_ids = [u32::MAX; 256];
        let mut prematch = Trie::new();
        for (id, e) in entries.iter().enumerate() {
            if e.bytes.is_empty() {
                return Err(Error::Integrity(format!("empty token at id {id}")));
            }
            if e.category == Category::Byte && e.bytes.len() != 1 {
                return Err(Error::Integrity(format!("byte token at id {id} is not one byte")));
            }
            let key = (e.category == Category::Byte, e.bytes.as_slice());
            if let Some(prev) = seen.insert(key, id) {
                return Err(Error::Integrity(format!(
                    "duplicate token {:?} (ids {prev} and {id})",
                    e.display()
                )));
            }
            match e.category {
                Category::Byte => byte_ids[e.bytes[0] as usize] = id as u32,
                Category::ZhChar | Category::ZhWord | Category::Reserved => {
                    let s = std::str::from_utf8(&e.bytes).map_err(|_| {
                        Error::Integrity(format!("extension token at id {id} is not UTF-8"))
                    })?;
                    prematch.insert(s, id as u32);
                }
                Category::LatinSubword => {}
            }
        }
        if let Some(b) = byte_ids.iter().position(|&id| id == u32::MAX) {
            return Err(Error::Integrity(format!("byte token <0x{b:02X}> missing")));
        }

        let mut merge_rank = HashMap::with_capacity(merges.len());
        for (rank, &(l, r)) in merges.iter().enumerate() {
            let get = |id: u32| {
                entries
                    .get(id as usize)
                    .filter(|e| matches!(e.category, Category::Byte | Category::LatinSubword))
                    .ok_or_else(|| Error::Integrity(format!("merge {rank} references invalid id {id}")))
            };
            let merged = [get(l)?.bytes.as_slice(), get(r)?.bytes.as_slice()].concat();
            let target = seen
                .get(&(false, merged.as_slice()))
                .copied()
                .filter(|&t| entries[t].category == Category::LatinSubword)
                .ok_or_else(|| {
                    Error::Integrity(format!("merge {rank} produces a token missing from the base"))
                })?;
            merge_rank.entry((l, r)).or_insert((rank as u32, target as u32));
        }
        Ok(Self {
            entries,
            merges,
            merge_rank,
            byte_ids,
            prematch,
        })
    }

    /// A vocabulary with only the 256 byte tokens.
    pub fn bytes_only() -> Self {
        let entries = (0..=255u8)
            .map(|b| Entry {
                bytes: vec![b],
                category: Category::Byte,
            })
            .collect();
        Self::from_parts(entries, Vec::new()).expect("byte vocabulary is valid")
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entry(&self, id: u32) -> Option<&Entry> {
        self.entries.get(id as usize)
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn byte_id(&self, b: u8) -> u32 {
        self.byte_ids[b as usize]
    }

    pub fn breakdown(&self) -> VocabBreakdown {
        let mut b = VocabBreakdown {
            total: self.entries.len(),
            ..Default::default()
        };
        for e in &self.entries {
            match e.category {
                Category::Byte | Category::LatinSubword => b.base += 1,
                Category::ZhChar => b.zh_chars += 1,
                Category::ZhWord => b.zh_words += 1,
                Category::Reserved => b.reserved += 1,
            }
        }
        b
    }

    fn bpe_piece(&self, piece: &[u8], out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = piece.iter().map(|&b| self.byte_ids[b as usize]).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0], w[1])).map(|&(rank, id)| (rank, (w[0], w[1]), id)))
                .min_by_key(|&(rank, _, _)| rank);
            let Some((_, pair, id)) = best else { break };
            syms = bpe::apply_merge(&syms, pair, id);
        }
        out.extend(syms);
    }

    fn encode_plain(&self, text: &str, out: &mut Vec<u32>) {
        for piece in split_pieces(text) {
            self.bpe_piece(piece.as_bytes(), out);
        }
    }

    fn encode_segment(&self, seg: &str, out: &mut Vec<u32>) {
        let mut plain_start = 0;
        let mut i = 0;
        while i < seg.len() {
            if let Some((id, len)) = self.prematch.longest(&seg[i..]) {
                self.encode_plain(&seg[plain_start..i], out);
                out.push(id);
                i += len;
                plain_start = i;
            } else {
                i += seg[i..].chars().next().map_or(1, char::len_utf8);
            }
        }
        self.encode_plain(&seg[plain_start..], out);
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut out = Vec::with_capacity(text.len() / 3 + 1);
        for seg in split_digits(text) {
            match seg {
                Segment::Digit(d) | Segment::Text(d) => self.encode_segment(d, &mut out),
            }
        }
        TokenSequence(out)
    }

    pub fn encode_batch(&self, texts: &[&str], exec: Execution) -> Vec<TokenSequence> {
        exec.map(texts, |t| self.encode(t))
    }

    pub fn decode_bytes(&self, tokens: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in tokens {
            let e = self.entries.get(id as usize).ok_or_else(|| {
                Error::Usage(format!("token id {id} out of range (size {})", self.entries.len()))
            })?;
            out.extend_from_slice(&e.bytes);
        }
        Ok(out)
    }

    /// Decodes to text. Byte runs that do not form valid UTF-8 are replaced
    /// with U+FFFD and reported through [`Decoded::lossy`].
    pub fn decode(&self, tokens: &[u32]) -> Result<Decoded> {
        let bytes = self.decode_bytes(tokens)?;
        Ok(match String::from_utf8(bytes) {
            Ok(text) => Decoded { text, lossy: false },
            Err(e) => Decoded {
                text: String::from_utf8_lossy(e.as_bytes()).into_owned(),
                lossy: true,
            },
        })
    }

    /// Vocabulary file: one `token\tcategory\tid` line per entry, a blank
    /// line, then one `left\tright` line per merge rule.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (id, e) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}", e.display(), e.category.as_str(), id);
        }
        out.push('\n');
        for &(l, r) in &self.merges {
            let _ = writeln!(
                out,
                "{}\t{}",
                self.entries[l as usize].display(),
                self.entries[r as usize].display()
            );
        }
        out
    }

    pub fn from_file_str(content: &str) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        let mut index: HashMap<String, u32> = HashMap::new();
        let mut merges = Vec::new();
        for (i, line) in content.lines().enumerate() {
            let n = i + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                [tok, cat, id] => {
                    if !merges.is_empty() {
                        return Err(Error::parse(n, "entry after merge section"));
                    }
                    let cat = Category::parse(cat).ok_or_else(|| Error::parse(n, format!("unknown category {cat:?}")))?;
                    let id: usize = id.parse().map_err(|_| Error::parse(n, "bad id"))?;
                    if id != entries.len() {
                        return Err(Error::parse(n, format!("expected id {}, found {id}", entries.len())));
                    }
                    let e = Entry::parse_display(tok, cat).ok_or_else(|| Error::parse(n, format!("bad token {tok:?}")))?;
                    index.insert(tok.to_string(), id as u32);
                    entries.push(e);
                }
                [l, r] => {
                    let look = |t: &str| {
                        index
                            .get(t)
                            .copied()
                            .ok_or_else(|| Error::parse(n, format!("merge references unknown token {t:?}")))
                    };
                    merges.push((look(l)?, look(r)?));
                }
                _ => return Err(Error::parse(n, "expected 3 fields (entry) or 2 fields (merge)")),
            }
        }
        Self::from_parts(entries, merges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_str(&content)
    }

    /// A vocabulary with no extension entries.
    pub fn from_base(base: BaseVocab) -> Result<Self> {
        Self::from_parts(base.entries, base.merges)
    }

    /// The base part (byte and subword entries plus merges), e.g. to
    /// re-assemble with different extension lists.
    pub fn base(&self) -> BaseVocab {
        BaseVocab {
            entries: self
                .entries
                .iter()
                .filter(|e| matches!(e.category, Category::Byte | Category::LatinSubword))
                .cloned()
                .collect(),
            merges: self.merges.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub text: String,
    pub lossy: bool,
}

/// Reads a word list: one entry per line, blank lines skipped.
pub fn read_word_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(content
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}
