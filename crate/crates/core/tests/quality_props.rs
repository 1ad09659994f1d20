use curator_core::corpus::PplBucket;
use curator_core::quality::{assign_ppl_bucket, detect_language, filter_code_file, CodeFilterPolicy};
use proptest::prelude::*;

/// Counts by brute force over the character classes, independent of the
/// helper the detector uses.
fn brute_counts(text: &str) -> (usize, usize, usize) {
    let (mut letters, mut zh, mut latin) = (0, 0, 0);
    for c in text.chars() {
        if !c.is_alphabetic() {
            continue;
        }
        letters += 1;
        let u = c as u32;
        if (0x4E00..=0x9FFF).contains(&u) || (0x3400..=0x4DBF).contains(&u) || (0xF900..=0xFAFF).contains(&u) {
            zh += 1;
        } else if c.is_ascii_alphabetic() || (0xC0..=0x24F).contains(&u) {
            latin += 1;
        }
    }
    (letters, zh, latin)
}

fn mixed_text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            "[a-zA-Z]{1,6}",
            "[\u{4e00}-\u{9fff}]{1,4}",
            "[\u{0430}-\u{044f}]{1,5}",
            "[àéîõüç]{1,3}",
            "[0-9 ,.!?]{1,4}",
        ],
        0..20,
    )
    .prop_map(|p| p.concat())
}

proptest! {
    #[test]
    fn language_fractions_are_exact_ratios(text in mixed_text()) {
        let v = detect_language(&text);
        let (letters, zh, latin) = brute_counts(&text);
        if letters == 0 {
            prop_assert_eq!(v.zh_char_fraction, 0.0);
        } else {
            prop_assert_eq!(v.zh_char_fraction, zh as f64 / letters as f64);
            prop_assert_eq!(v.latin_char_fraction, latin as f64 / letters as f64);
        }
    }

    #[test]
    fn buckets_partition_distinct_calibration(mut xs in prop::collection::btree_set(1u32..1_000_000, 1..200)) {
        let cal: Vec<f64> = std::mem::take(&mut xs).into_iter().map(|x| 1.0 + x as f64 / 100.0).collect();
        let mut sizes = [0usize; 3];
        for &p in &cal {
            match assign_ppl_bucket(p, &cal).unwrap() {
                PplBucket::Head => sizes[0] += 1,
                PplBucket::Middle => sizes[1] += 1,
                PplBucket::Tail => sizes[2] += 1,
                PplBucket::Unassigned => unreachable!(),
            }
        }
        prop_assert_eq!(sizes.iter().sum::<usize>(), cal.len());
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1, "{sizes:?}");
    }

    #[test]
    fn markup_sampling_repeats(seed in any::<u64>(), name in "[a-z]{1,10}") {
        let path = format!("conf/{name}.json");
        let policy = CodeFilterPolicy::default();
        let a = filter_code_file(&path, "{\"a\": 1}", &policy, seed);
        let b = filter_code_file(&path, "{\"a\": 1}", &policy, seed);
        prop_assert_eq!(a, b);
    }
}
