//! Text segmentation applied before BPE, shared by training and encoding.
//!
//! ASCII digits are always isolated. The remaining text is cut into word
//! pieces: a run of letters (or of other non-space symbols) together with
//! at most one leading space, and runs of whitespace. A single space in
//! front of a word travels with the word.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment<'a> {
    Digit(&'a str),
    Text(&'a str),
}

/// Splits `text` into single ASCII digits and the non-digit runs between
/// them, in order.
pub fn split_digits(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, b) in text.bytes().enumerate() {
        if b.is_ascii_digit() {
            if start < i {
                out.push(Segment::Text(&text[start..i]));
            }
            out.push(Segment::Digit(&text[i..i + 1]));
            start = i + 1;
        }
    }
    if start < text.len() {
        out.push(Segment::Text(&text[start..]));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Space,
    Letter,
    Other,
}

fn class_of(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if c.is_alphabetic() || is_mark(c) {
        Class::Letter
    } else {
        Class::Other
    }
}

/// Combining marks stay with the letters they modify.
fn is_mark(c: char) -> bool {
    matches!(c as u32, 0x0300..=0x036F | 0x1AB0..=0x1AFF | 0x1DC0..=0x1DFF | 0x20D0..=0x20FF | 0xFE20..=0xFE2F)
}

/// Word pieces of a digit-free run. Concatenating the pieces gives back
/// the input.
pub fn split_pieces(text: &str) -> Vec<&str> {
    let cs: Vec<(usize, char)> = text.char_indices().collect();
    let n = cs.len();
    let at = |i: usize| if i < n { cs[i].0 } else { text.len() };
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if class_of(cs[i].1) == Class::Space {
            let mut j = i;
            while j < n && class_of(cs[j].1) == Class::Space {
                j += 1;
            }
            // leave a trailing ' ' for the following word
            let end = if j < n && cs[j - 1].1 == ' ' { j - 1 } else { j };
            if end > i {
                out.push(&text[at(i)..at(end)]);
                i = end;
                continue;
            }
        }
        let start = i;
        if cs[i].1 == ' ' {
            i += 1;
        }
        let class = class_of(cs[i].1);
        while i < n && class_of(cs[i].1) == class {
            i += 1;
        }
        out.push(&text[at(start)..at(i)]);
    }
    out
}
