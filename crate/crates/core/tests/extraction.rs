use curator_core::corpus::Document;
use curator_core::extract::{
    extract_document, extract_main_text, kept_blocks, normalize_whitespace, segment_page, ExtractionPolicy,
};
use proptest::prelude::*;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

#[test]
fn golden_article() {
    let html = std::fs::read_to_string(format!("{FIXTURES}/article.html")).unwrap();
    let expected = std::fs::read_to_string(format!("{FIXTURES}/article.expected.txt")).unwrap();
    let doc = extract_document(Document::new("golden", "web", html), &ExtractionPolicy::default());
    assert!(!doc.is_rejected());
    assert_eq!(doc.text, expected.trim_end());
    assert_eq!(doc.char_len as usize, doc.text.chars().count());
}

const WORDS: &[&str] = &["river", "stone", "north", "harbour", "lamp", "keeper", "winter", "boat", "reef"];

fn block() -> impl Strategy<Value = String> {
    (
        prop::sample::select(vec!["p", "h2", "li", "div", "nav", "footer", "td"]),
        prop::collection::vec(prop::sample::select(WORDS.to_vec()), 0..12),
        any::<bool>(),
    )
        .prop_map(|(tag, words, linked)| {
            let text = words.join(" ");
            if linked && !words.is_empty() {
                format!("<{tag}>{} <a href='/x'>{}</a></{tag}>", words[0], words[1..].join(" "))
            } else {
                format!("<{tag}>{text}</{tag}>")
            }
        })
}

fn page() -> impl Strategy<Value = String> {
    prop::collection::vec(block(), 0..10).prop_map(|b| format!("<html><body>{}</body></html>", b.join("\n")))
}

proptest! {
    #[test]
    fn output_is_made_of_segmented_blocks(html in page(), min in 0usize..60, frac in 0.0f64..1.0) {
        let policy = ExtractionPolicy { min_block_chars: min, max_link_fraction: frac };
        let blocks = segment_page(&html);
        let kept = kept_blocks(&blocks, &policy);
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        let joined: Vec<&str> = kept.iter().map(|&i| blocks[i].text.as_str()).collect();
        prop_assert_eq!(extract_main_text(&blocks, &policy), joined.join("\n\n"));
    }

    #[test]
    fn raising_min_block_chars_never_lengthens(html in page(), a in 0usize..60, b in 0usize..60) {
        let (lo, hi) = (a.min(b), a.max(b));
        let blocks = segment_page(&html);
        let len = |min| {
            let policy = ExtractionPolicy { min_block_chars: min, ..Default::default() };
            extract_main_text(&blocks, &policy).chars().count()
        };
        prop_assert!(len(hi) <= len(lo));
    }

    #[test]
    fn extraction_is_idempotent(html in page()) {
        let policy = ExtractionPolicy::default();
        let once = extract_main_text(&segment_page(&html), &policy);
        prop_assume!(!once.is_empty());
        let twice = extract_main_text(&segment_page(&once), &policy);
        prop_assert_eq!(twice, normalize_whitespace(&once));
    }
}
