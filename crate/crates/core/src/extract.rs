//! Main-body text extraction from raw web pages.
//!
//! [`segment_page`] is a tolerant tag scanner, not a DOM parser. It walks the
//! markup once, tracks the stack of open elements, and cuts a new block at
//! every block-level element boundary. Each block is classified from its
//! ancestry: anything under `<nav>` (or an element whose class/id mentions
//! navigation or menus) is navigation, anything under `<footer>` (or
//! footer/copyright/contact hints) is footer, and otherwise the innermost
//! block element decides.

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, ReasonCode, StageOutput};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagClass {
    Paragraph,
    Heading,
    ListItem,
    Nav,
    Footer,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub text: String,
    pub tag_class: TagClass,
    pub link_char_fraction: f64,
    pub char_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionPolicy {
    pub max_link_fraction: f64,
    /// Counted in Unicode scalar values.
    pub min_block_chars: usize,
}

impl Default for ExtractionPolicy {
    fn default() -> Self {
        Self {
            max_link_fraction: 0.5,
            min_block_chars: 20,
        }
    }
}

const VOID: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source",
    "track", "wbr",
];

const BLOCK_LEVEL: &[&str] = &[
    "address", "article", "aside", "blockquote", "body", "dd", "div", "dl", "dt", "figcaption",
    "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hr", "html", "li",
    "main", "nav", "ol", "p", "pre", "section", "table", "tbody", "td", "tfoot", "th", "thead",
    "tr", "ul",
];

/// Elements whose content is never rendered as page text.
const INVISIBLE: &[&str] = &["script", "style", "noscript", "template", "title", "head", "svg"];

const NAV_HINTS: &[&str] = &["nav", "menu", "breadcrumb", "sidebar"];
const FOOTER_HINTS: &[&str] = &["footer", "copyright", "contact"];

#[derive(Debug)]
struct Element {
    name: String,
    /// Lowercased class and id attribute values.
    hints: String,
}

#[derive(Default)]
struct BlockBuilder {
    chars: Vec<(char, bool)>,
    class: Option<TagClass>,
}

fn classify(stack: &[Element]) -> TagClass {
    let has_hint = |e: &Element, hints: &[&str]| hints.iter().any(|h| e.hints.contains(h));
    for e in stack.iter().rev() {
        if e.name == "nav" || has_hint(e, NAV_HINTS) {
            return TagClass::Nav;
        }
        if e.name == "footer" || has_hint(e, FOOTER_HINTS) {
            return TagClass::Footer;
        }
    }
    for e in stack.iter().rev() {
        match e.name.as_str() {
            "h1" | "h2" | "h3" | "h4" | "h5" | "h6" => return TagClass::Heading,
            "li" | "dt" | "dd" => return TagClass::ListItem,
            "p" | "blockquote" | "pre" => return TagClass::Paragraph,
            n if BLOCK_LEVEL.contains(&n) => return TagClass::Other,
            _ => {}
        }
    }
    TagClass::Other
}

impl BlockBuilder {
    fn push_text(&mut self, text: &str, in_link: bool, stack: &[Element]) {
        if self.class.is_none() && text.chars().any(|c| !c.is_whitespace()) {
            self.class = Some(classify(stack));
        }
        self.chars.extend(text.chars().map(|c| (c, in_link)));
    }

    fn flush(&mut self, out: &mut Vec<Block>) {
        let chars = std::mem::take(&mut self.chars);
        let class = self.class.take();
        // collapse every whitespace run to one space and trim
        let mut text = String::new();
        let mut link_chars = 0usize;
        let mut char_len = 0usize;
        let mut pending_space = false;
        for (c, link) in chars {
            if c.is_whitespace() {
                pending_space = char_len > 0;
                continue;
            }
            if pending_space {
                text.push(' ');
                char_len += 1;
                pending_space = false;
            }
            text.push(c);
            char_len += 1;
            if link {
                link_chars += 1;
            }
        }
        if char_len == 0 {
            return;
        }
        out.push(Block {
            text,
            tag_class: class.unwrap_or(TagClass::Other),
            link_char_fraction: link_chars as f64 / char_len.max(1) as f64,
            char_len,
        });
    }
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        let end = rest[1..]
            .find(|c: char| c == ';' || c == '&' || c.is_whitespace())
            .map(|j| j + 1);
        let decoded = match end {
            Some(j) if rest.as_bytes()[j] == b';' => {
                let name = &rest[1..j];
                let ch = match name {
                    "amp" => Some('&'),
                    "lt" => Some('<'),
                    "gt" => Some('>'),
                    "quot" => Some('"'),
                    "apos" | "#39" => Some('\''),
                    "nbsp" => Some(' '),
                    n if n.starts_with("#x") || n.starts_with("#X") => {
                        u32::from_str_radix(&n[2..], 16).ok().and_then(char::from_u32)
                    }
                    n if n.starts_with('#') => n[1..].parse().ok().and_then(char::from_u32),
                    _ => None,
                };
                ch.map(|c| (c, j + 1))
            }
            _ => None,
        };
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &rest[len..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

struct Tag<'a> {
    name: String,
    closing: bool,
    self_closing: bool,
    attrs: &'a str,
}

/// Parses the inside of `<...>` (without the brackets).
fn parse_tag(inner: &str) -> Option<Tag<'_>> {
    let (closing, body) = match inner.strip_prefix('/') {
        Some(b) => (true, b),
        None => (false, inner),
    };
    let name_end = body
        .find(|c: char| c.is_whitespace() || c == '/' || c == '>')
        .unwrap_or(body.len());
    let name = &body[..name_end];
    if name.is_empty() || !name.chars().next()?.is_ascii_alphabetic() {
        return None;
    }
    Some(Tag {
        name: name.to_ascii_lowercase(),
        closing,
        self_closing: body.trim_end().ends_with('/'),
        attrs: &body[name_end..],
    })
}

fn attribute_hints(attrs: &str) -> String {
    let lower = attrs.to_ascii_lowercase();
    let mut hints = String::new();
    for key in ["class", "id", "role"] {
        let mut search = lower.as_str();
        while let Some(i) = search.find(key) {
            let after = search[i + key.len()..].trim_start();
            if let Some(v) = after.strip_prefix('=') {
                let v = v.trim_start();
                let value = match v.chars().next() {
                    Some(q @ ('"' | '\'')) => v[1..].split(q).next().unwrap_or(""),
                    _ => v.split(|c: char| c.is_whitespace() || c == '>').next().unwrap_or(""),
                };
                hints.push_str(value);
                hints.push(' ');
            }
            search = &search[i + key.len()..];
        }
    }
    hints
}

/// Splits a page into visible text blocks in document order.
pub fn segment_page(raw_html: &str) -> Vec<Block> {
    match scan(raw_html) {
        Some(blocks) => blocks,
        None => {
            let text = normalize_whitespace(&strip_tags(raw_html));
            fallback_block(text)
        }
    }
}

fn fallback_block(text: String) -> Vec<Block> {
    if text.is_empty() {
        return Vec::new();
    }
    let char_len = text.chars().count();
    vec![Block {
        text,
        tag_class: TagClass::Other,
        link_char_fraction: 0.0,
        char_len,
    }]
}

/// Drops anything that looks like a tag; used for malformed input.
fn strip_tags(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut in_tag = false;
    for c in raw.chars() {
        match (in_tag, c) {
            (false, '<') => in_tag = true,
            (true, '>') => {
                in_tag = false;
                out.push(' ');
            }
            (false, c) => out.push(c),
            _ => {}
        }
    }
    decode_entities(&out)
}

/// Returns `None` when the input has no markup or the markup is broken
/// (an unterminated tag), so the caller can fall back to plain text.
fn scan(raw: &str) -> Option<Vec<Block>> {
    let mut blocks = Vec::new();
    let mut stack: Vec<Element> = Vec::new();
    let mut builder = BlockBuilder::default();
    let mut link_depth = 0usize;
    let mut saw_tag = false;
    let mut rest = raw;

    while !rest.is_empty() {
        let Some(lt) = rest.find('<') else {
            builder.push_text(&decode_entities(rest), link_depth > 0, &stack);
            break;
        };
        if lt > 0 {
            builder.push_text(&decode_entities(&rest[..lt]), link_depth > 0, &stack);
        }
        rest = &rest[lt..];

        if let Some(after) = rest.strip_prefix("<!--") {
            saw_tag = true;
            rest = after.find("-->").map_or("", |i| &after[i + 3..]);
            continue;
        }
        if rest.starts_with("<!") || rest.starts_with("<?") {
            saw_tag = true;
            let gt = rest.find('>')?;
            rest = &rest[gt + 1..];
            continue;
        }
        let gt = match rest.find('>') {
            Some(gt) => gt,
            None => {
                if parse_tag(&rest[1..]).is_some() {
                    return None;
                }
                builder.push_text(&decode_entities(rest), link_depth > 0, &stack);
                break;
            }
        };
        let Some(tag) = parse_tag(&rest[1..gt]) else {
            // a bare '<' in text
            builder.push_text("<", link_depth > 0, &stack);
            rest = &rest[1..];
            continue;
        };
        saw_tag = true;
        rest = &rest[gt + 1..];

        if !tag.closing && INVISIBLE.contains(&tag.name.as_str()) && !tag.self_closing {
            let close = format!("</{}", tag.name);
            let lower = rest.to_ascii_lowercase();
            rest = match lower.find(&close) {
                Some(i) => rest[i..].find('>').map_or("", |j| &rest[i + j + 1..]),
                None => "",
            };
            continue;
        }

        let is_block = BLOCK_LEVEL.contains(&tag.name.as_str());
        if is_block {
            builder.flush(&mut blocks);
        }
        if tag.name == "br" {
            builder.push_text(" ", link_depth > 0, &stack);
        }
        if tag.closing {
            if let Some(pos) = stack.iter().rposition(|e| e.name == tag.name) {
                for e in stack.drain(pos..) {
                    if e.name == "a" {
                        link_depth = link_depth.saturating_sub(1);
                    }
                }
            }
        } else if !tag.self_closing && !VOID.contains(&tag.name.as_str()) {
            if tag.name == "a" {
                link_depth += 1;
            }
            stack.push(Element {
                hints: attribute_hints(tag.attrs),
                name: tag.name,
            });
        }
    }
    if !saw_tag {
        return None;
    }
    builder.flush(&mut blocks);
    Some(blocks)
}

/// Collapses runs of spaces and tabs, trims each line, and reduces any run
/// of blank lines to a single blank line.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut blank_run = false;
    for line in text.lines() {
        let collapsed = line.split_whitespace().collect::<Vec<_>>().join(" ");
        if collapsed.is_empty() {
            blank_run = !out.is_empty();
            continue;
        }
        if !out.is_empty() {
            out.push_str(if blank_run { "\n\n" } else { "\n" });
        }
        blank_run = false;
        out.push_str(&collapsed);
    }
    out
}

fn passes_filters(b: &Block, policy: &ExtractionPolicy) -> bool {
    !matches!(b.tag_class, TagClass::Nav | TagClass::Footer)
        && b.link_char_fraction <= policy.max_link_fraction
}

/// Indices of the blocks kept by `policy`, in order.
pub fn kept_blocks(blocks: &[Block], policy: &ExtractionPolicy) -> Vec<usize> {
    let body_kept: Vec<bool> = blocks
        .iter()
        .map(|b| {
            b.tag_class != TagClass::Heading
                && passes_filters(b, policy)
                && b.char_len >= policy.min_block_chars
        })
        .collect();
    (0..blocks.len())
        .filter(|&i| {
            if blocks[i].tag_class == TagClass::Heading {
                // titles survive only in front of kept body text
                passes_filters(&blocks[i], policy) && body_kept.get(i + 1).copied().unwrap_or(false)
            } else {
                body_kept[i]
            }
        })
        .collect()
}

/// Joins the kept blocks with blank lines.
pub fn extract_main_text(blocks: &[Block], policy: &ExtractionPolicy) -> String {
    kept_blocks(blocks, policy)
        .into_iter()
        .map(|i| blocks[i].text.as_str())
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn extract_document(mut doc: Document, policy: &ExtractionPolicy) -> Document {
    let text = extract_main_text(&segment_page(&doc.text), policy);
    if text.is_empty() {
        doc.reject(ReasonCode::Empty);
    }
    doc.set_text(text);
    doc
}

pub fn extract_stage(docs: &[Document], policy: &ExtractionPolicy, exec: Execution) -> StageOutput {
    StageOutput::partition(exec.map(docs, |d| extract_document(d.clone(), policy)))
}
