//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run with `cargo test -p curator-core --test acceptance`. The process
//! exits non-zero if any criterion fails in a way that is not listed as a
//! known deviation; a known deviation still prints FAIL.

use std::collections::BTreeSet;
use std::time::Instant;

use curator_core::corpus::Document;
use curator_core::dedup::{dedup_stage, jaccard_estimate, minhash, recurrence_filter, DedupParams, ShingleSet};
use curator_core::leakage::{desk_scale_demo, DemoParams, Flag, LeakageReport, Thresholds};
use curator_core::mixture::{build_stage1_plan, build_stage2_plan, SourceSpec, Stage2Params};
use curator_core::monitor::{domain_table, flops_per_token, utilization, LossRecord, ModelShape};
use curator_core::ngram::{NGramModel, Normalization};
use curator_core::pipeline::{parse_config, run_pipeline};
use curator_core::tokenizer::{assemble_vocab, train_bpe, Category, Entry, Vocabulary};
use curator_core::{Error, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
    /// Set when the failure matches a recorded, analysed deviation exactly.
    known_deviation: bool,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Self {
        Self { pass, detail, known_deviation: false }
    }
}

// ---------------------------------------------------------------------------
// 1. published leakage deltas and highlighted cells

/// (model, L_test, L_train, L_ref, printed delta1, printed delta2,
/// delta1 highlighted, delta2 highlighted)
const LEAKAGE_ROWS: [(&str, f64, f64, f64, f64, f64, bool, bool); 14] = [
    ("ChatGLM3-6B", 0.99, 0.78, 0.99, 0.0, 0.21, false, true),
    ("MOSS-7B", 1.51, 1.52, 1.49, 0.02, -0.01, false, false),
    ("InternLM-7B", 1.21, 1.12, 1.27, -0.06, 0.09, false, false),
    ("Qwen-7B", 1.07, 0.64, 1.10, -0.03, 0.43, false, true),
    ("Baichuan2-7B", 1.41, 1.42, 1.36, 0.05, -0.01, false, false),
    ("LLaMA-13B", 1.41, 1.42, 1.36, 0.05, -0.01, false, false),
    ("LLaMA2-13B", 1.36, 1.38, 1.33, 0.03, -0.01, false, false),
    ("Xverse-13B", 1.42, 1.43, 1.39, 0.03, -0.01, false, false),
    ("Baichuan-13B", 1.41, 1.42, 1.37, 0.04, -0.01, false, false),
    ("Baichuan2-13B", 1.09, 0.72, 1.12, -0.03, 0.37, false, true),
    ("Qwen-14B", 1.03, 0.42, 1.14, -0.11, 0.61, false, true),
    ("InternLM-20B", 1.20, 1.09, 1.19, 0.01, 0.11, false, false),
    ("Aquila2-34B", 0.78, 0.39, 1.29, -0.51, 0.39, true, true),
    ("Skywork-13B", 1.01, 0.97, 1.00, 0.01, 0.04, false, false),
];

/// The printed delta2 for this row is -0.01 while its own rounded losses
/// give 1.36 - 1.38 = -0.02. The printed value was presumably taken from
/// unrounded losses; two values rounded to 0.01 can differ by up to 0.01
/// from their rounded difference, which exceeds the 0.005 tolerance.
const KNOWN_MISMATCHES: &[(&str, &str)] = &[("LLaMA2-13B", "delta2")];

fn published_leakage() -> Outcome {
    let thr = Thresholds::default();
    let mut mismatches = Vec::new();
    let (mut flagged, mut expected_flags, mut false_flags, mut missed) = (0, 0, 0, 0);
    for &(model, test, train, reference, d1, d2, g1, g2) in &LEAKAGE_ROWS {
        let r = LeakageReport::from_losses(model, test, train, reference, thr);
        if (r.delta1 - d1).abs() > 0.005 + 1e-12 {
            mismatches.push((model, "delta1", r.delta1, d1));
        }
        if (r.delta2 - d2).abs() > 0.005 + 1e-12 {
            mismatches.push((model, "delta2", r.delta2, d2));
        }
        for (has, gray) in [(r.has(Flag::TestLeakSuspect), g1), (r.has(Flag::TrainOverfitSuspect), g2)] {
            flagged += has as usize;
            expected_flags += gray as usize;
            false_flags += (has && !gray) as usize;
            missed += (!has && gray) as usize;
        }
    }
    let flags_ok = flagged == 6 && expected_flags == 6 && false_flags == 0 && missed == 0;
    let cells: Vec<String> = mismatches
        .iter()
        .map(|(m, c, got, want)| format!("{m} {c} computes {got:.2}, printed {want:.2}"))
        .collect();
    let detail = format!(
        "{} of 28 deltas within 0.005{}; {flagged} flagged, {false_flags} false, {missed} missed",
        28 - mismatches.len(),
        if cells.is_empty() { String::new() } else { format!(" [{}]", cells.join("; ")) }
    );
    let found: Vec<(&str, &str)> = mismatches.iter().map(|(m, c, _, _)| (*m, *c)).collect();
    Outcome {
        pass: mismatches.is_empty() && flags_ok,
        known_deviation: flags_ok && found == KNOWN_MISMATCHES,
        detail,
    }
}

// ---------------------------------------------------------------------------
// 2. published cross-domain perplexities

const DOMAINS: [&str; 6] = ["tech", "movie", "gov", "game", "finance", "general"];

/// (model, perplexity per domain, printed average)
const PPL_ROWS: [(&str, [f64; 6], f64); 13] = [
    ("ChatGLM3-6B", [12.48, 23.48, 5.07, 18.45, 5.67, 7.47], 10.25),
    ("MOSS-7B", [20.83, 39.66, 11.08, 31.24, 10.59, 13.25], 18.50),
    ("InternLM-7B", [13.43, 24.9, 5.88, 19.78, 6.17, 8.10], 11.17),
    ("Qwen-7B", [13.39, 25.16, 5.55, 19.26, 5.76, 7.78], 10.83),
    ("Baichuan2-7B", [12.89, 23.26, 5.34, 18.36, 5.68, 7.62], 10.41),
    ("LLaMA2-13B", [23.26, 50.66, 18.09, 32.52, 14.85, 16.55], 23.54),
    ("Xverse-13B", [12.55, 23.49, 5.20, 17.69, 5.54, 7.46], 10.19),
    ("Baichuan-13B", [12.38, 22.46, 5.21, 17.59, 5.42, 7.37], 10.03),
    ("Baichuan2-13B", [12.14, 21.85, 5.05, 17.15, 5.35, 7.24], 9.81),
    ("Qwen-14B", [11.90, 22.43, 4.89, 16.94, 5.24, 7.03], 9.67),
    ("InternLM-20B", [12.34, 22.06, 5.75, 17.45, 5.73, 7.78], 10.34),
    ("Aquila2-34B", [14.62, 29.09, 5.72, 21.78, 5.83, 8.45], 11.73),
    ("Skywork-13B", [11.58, 21.84, 4.76, 17.28, 4.92, 6.82], 9.42),
];

fn published_perplexities() -> Outcome {
    let mut records = Vec::new();
    for (model, ppl, _) in &PPL_ROWS {
        for (d, p) in DOMAINS.iter().zip(ppl) {
            records.push(LossRecord::from_perplexity(model, d, Normalization::PerToken, *p).unwrap());
        }
    }
    let table = domain_table(&records).unwrap();
    let mut worst: f64 = 0.0;
    let mut ok = 0;
    for (row, (_, _, avg)) in table.rows.iter().zip(&PPL_ROWS) {
        let err = (row.aggregate - avg).abs();
        worst = worst.max(err);
        ok += (err <= 0.01) as usize;
    }
    let skywork = table.rows.iter().position(|r| r.model_id == "Skywork-13B").unwrap();
    let qwen14 = table.rows.iter().position(|r| r.model_id == "Qwen-14B").unwrap();
    // best in every column except game, where Qwen-14B leads
    let marks_ok = table.best_aggregate == vec![skywork]
        && table.best.iter().enumerate().all(|(d, b)| *b == vec![if d == 3 { qwen14 } else { skywork }]);
    Outcome::check(
        ok == 13 && marks_ok,
        format!(
            "{ok}/13 averages within 0.01 (max error {worst:.4}); Skywork {:.2}, ChatGLM3 {:.2}; best marks {}",
            table.rows[skywork].aggregate,
            table.rows[0].aggregate,
            if marks_ok { "match" } else { "differ" }
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. desk-scale contamination experiment

fn desk_scale() -> Outcome {
    let start = Instant::now();
    let r = match desk_scale_demo(0, DemoParams::default(), Execution::Parallel) {
        Ok(r) => r,
        Err(e) => return Outcome::check(false, format!("demo failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let c = &r.clean;
    let pass = c.delta1.abs() <= 0.02
        && c.delta2.abs() <= 0.02
        && c.flags.is_empty()
        && r.train_contaminated.delta2 >= 0.1
        && r.train_contaminated.has(Flag::TrainOverfitSuspect)
        && r.test_contaminated.has(Flag::TestLeakSuspect)
        && secs < 60.0;
    Outcome::check(
        pass,
        format!(
            "clean d1 {:+.3} d2 {:+.3} flags {}; train-contaminated d2 {:+.3} flags {:?}; \
             test-contaminated d1 {:+.3} flags {:?}; {secs:.1}s",
            c.delta1,
            c.delta2,
            c.flags.len(),
            r.train_contaminated.delta2,
            r.train_contaminated.flags,
            r.test_contaminated.delta1,
            r.test_contaminated.flags,
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. model FLOPs utilization

fn model_flops() -> Outcome {
    let peak = 312.0;
    let skywork = 100.0 * utilization(176.2, peak).unwrap();
    let llama2 = 100.0 * utilization(182.6, peak).unwrap();
    let shape = ModelShape {
        layers: 52,
        hidden: 4608,
        heads: 36,
        ffn: 12288,
        vocab: 65536,
        seq_len: 4096,
        tied_embeddings: false,
    };
    let fpt = flops_per_token(&shape);
    let published = 176.2e12 / 1873.0;
    let rel = fpt / published - 1.0;
    Outcome::check(
        (skywork - 56.5).abs() <= 0.2 && (llama2 - 58.5).abs() <= 0.2 && rel.abs() <= 0.03,
        format!("Skywork {skywork:.2}%, LLaMA2 {llama2:.2}%; flops/token {fpt:.4e} vs {published:.4e} ({:+.2}%)", 100.0 * rel),
    )
}

// ---------------------------------------------------------------------------
// 5. tokenizer sizes, roundtrip and digit atomicity

fn cjk(i: u32) -> char {
    char::from_u32(0x4E00 + i).unwrap()
}

fn full_size_vocab() -> Vocabulary {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let words = ["harbour", "light", "keeper", "winter", "stone", "river", "the", "and", "of"];
    let texts: Vec<String> = (0..400)
        .map(|_| {
            (0..30)
                .map(|_| words[rng.gen_range(0..words.len())].to_string() + if rng.gen_bool(0.2) { "s" } else { "" })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let mut base = train_bpe(&refs, 600, Execution::Parallel).unwrap();
    // pad the learned subwords with unreachable letter-only entries up to
    // the base size
    let taken: BTreeSet<Vec<u8>> = base.entries.iter().map(|e| e.bytes.clone()).collect();
    let mut k = 0u64;
    while base.entries.len() < 32_000 {
        let mut s = Vec::new();
        let mut n = k;
        loop {
            s.push(b'a' + (n % 26) as u8);
            n /= 26;
            if n == 0 {
                break;
            }
        }
        s.extend_from_slice(b"_pad");
        k += 1;
        if !taken.contains(&s) {
            base.entries.push(Entry { bytes: s, category: Category::LatinSubword });
        }
    }
    let chars: Vec<String> = (0..8000).map(|i| cjk(i).to_string()).collect();
    let zh_words: Vec<String> = (0..25_519u32).map(|i| format!("{}{}", cjk(i / 160), cjk(i % 160))).collect();
    let reserved: Vec<String> = (b'a'..=b'q').map(|c| format!("<|reserved_{}|>", c as char)).collect();
    assemble_vocab(base, &chars, &zh_words, &reserved).unwrap()
}

fn fuzz_text(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(0..120);
    let mut s = String::new();
    for _ in 0..len {
        match rng.gen_range(0..6) {
            0 => s.push(rng.gen_range(' '..='~')),
            1 => s.push(rng.gen_range('0'..='9')),
            2 => s.push(cjk(rng.gen_range(0..20_000))),
            3 => s.push(rng.gen_range('\u{1F300}'..='\u{1FAFF}')),
            4 => s.push_str(["harbour ", "12345", "\n", "\t", "é", "<|reserved_a|>"][rng.gen_range(0..6)]),
            _ => s.push(rng.gen::<char>()),
        }
    }
    s
}

fn tokenizer() -> Outcome {
    let start = Instant::now();
    let v = full_size_vocab();
    let b = v.breakdown();
    let sizes_ok = (b.base, b.zh_chars, b.zh_words, b.reserved, b.total) == (32_000, 8000, 25_519, 17, 65_536);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let corpus: Vec<String> = (0..10_000).map(|_| fuzz_text(&mut rng)).collect();
    let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
    let seqs = v.encode_batch(&refs, Execution::Parallel);
    let mut exact = 0;
    let mut two_digit_tokens = 0;
    for (text, seq) in corpus.iter().zip(&seqs) {
        let d = v.decode(seq.ids()).unwrap();
        exact += (!d.lossy && d.text == *text) as usize;
        two_digit_tokens += seq
            .ids()
            .iter()
            .filter(|&&id| v.entry(id).unwrap().bytes.iter().filter(|c| c.is_ascii_digit()).count() >= 2)
            .count();
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        sizes_ok && exact == 10_000 && two_digit_tokens == 0 && secs < 60.0,
        format!(
            "sizes {}+{}+{}+{}={}; roundtrip {exact}/10000; tokens with two digits {two_digit_tokens}; {secs:.1}s",
            b.base, b.zh_chars, b.zh_words, b.reserved, b.total
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. mixture weights, ramp and repetition cap

const MAIN_WEIGHTS: [(&str, f64); 11] = [
    ("en_web", 39.8),
    ("en_books", 3.6),
    ("en_papers", 3.0),
    ("en_encyclopedia", 0.5),
    ("en_misc", 2.9),
    ("zh_web", 30.4),
    ("zh_social", 5.5),
    ("zh_encyclopedia", 0.8),
    ("zh_misc", 3.1),
    ("other_encyclopedia", 2.4),
    ("code_github", 8.0),
];

fn mixture() -> Outcome {
    let main: Vec<SourceSpec> = MAIN_WEIGHTS
        .iter()
        .map(|&(n, p)| SourceSpec::new(n, 1_000_000_000_000, p / 100.0))
        .collect();
    let pct: f64 = MAIN_WEIGHTS.iter().map(|w| w.1).sum();
    let accepted = build_stage1_plan(&main, 3_200_000_000_000, 5).is_ok();

    let params = Stage2Params {
        stem: SourceSpec::new("stem", 1_000_000_000_000, 0.0),
        stem_ratio_start: 0.10,
        stem_ratio_end: 0.40,
        steps: 10_000,
        tokens_per_step: 0,
        repetition_cap: 5,
    };
    let plan = build_stage2_plan(&main, &params).unwrap();
    let k = plan.source_names().iter().position(|n| *n == "stem").unwrap();
    let rows = plan.per_step_probs();
    let first = rows[0][k];
    let last = rows[rows.len() - 1][k];
    let mean = rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;

    // random source specs: a plan either respects the cap or is refused
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut plans, mut refused, mut violations) = (0, 0, 0);
    for _ in 0..1000 {
        let n = rng.gen_range(1..10);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let src: Vec<SourceSpec> = raw
            .iter()
            .enumerate()
            .map(|(i, w)| SourceSpec::new(format!("s{i}"), rng.gen_range(1..1_000_000), w / sum))
            .collect();
        let cap = rng.gen_range(1..=5);
        match build_stage1_plan(&src, rng.gen_range(1..10_000_000), cap) {
            Ok(p) => {
                plans += 1;
                violations += p.repetitions().iter().filter(|&&r| r > cap as f64 * (1.0 + 1e-9)).count();
            }
            Err(Error::Planning(_)) => refused += 1,
            Err(_) => violations += 1,
        }
    }
    Outcome::check(
        accepted
            && (pct - 100.0).abs() < 1e-9
            && first == 0.10
            && last == 0.40
            && (mean - 0.25).abs() <= 0.001
            && violations == 0,
        format!(
            "weights sum {pct:.1}% accepted={accepted}; ramp {first} -> {last}, mean {:.3}%; \
             random specs: {plans} planned, {refused} refused, {violations} over cap",
            100.0 * mean
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. MinHash accuracy and dedup idempotence

fn constructed_pair(rng: &mut impl Rng, target: f64) -> (ShingleSet, ShingleSet) {
    let union = 400usize;
    let shared = (target * union as f64).round() as usize;
    let only = (union - shared) / 2;
    let pool: Vec<u64> = (0..union).map(|_| rng.gen()).collect();
    let a = pool[..shared + only].to_vec();
    let b: Vec<u64> = pool[..shared].iter().chain(&pool[shared + only..]).copied().collect();
    (ShingleSet::from_hashes(5, a), ShingleSet::from_hashes(5, b))
}

const BOILERPLATE: [&str; 3] = [
    "Subscribe to our newsletter for weekly updates.",
    "All rights reserved by the publisher.",
    "Share this story with your friends and family.",
];

fn dedup_fixture(n: usize) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let words: Vec<String> = (0..500).map(|i| format!("w{i}x")).collect();
    let mut docs: Vec<Document> = Vec::with_capacity(n);
    for i in 0..n {
        let text = if i > 0 && rng.gen_bool(0.2) {
            // near copy of an earlier document
            let src = &docs[rng.gen_range(0..i)].text;
            src.replacen("the", "a", 1)
        } else {
            let mut paras: Vec<String> = (0..rng.gen_range(1..4))
                .map(|_| (0..40).map(|_| words[rng.gen_range(0..words.len())].as_str()).collect::<Vec<_>>().join(" the "))
                .collect();
            if rng.gen_bool(0.3) {
                paras.push(BOILERPLATE[rng.gen_range(0..3)].to_string());
            }
            paras.join("\n\n")
        };
        docs.push(Document::new(format!("d{i:04}"), "web", text));
    }
    docs
}

fn dedup() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let targets = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut within = 0;
    let mut exact_ok = true;
    for trial in 0..1000u64 {
        let j = targets[trial as usize % 5];
        let (a, b) = constructed_pair(&mut rng, j);
        exact_ok &= a.jaccard(&b) == j;
        let est = jaccard_estimate(&minhash(&a, 256, trial), &minhash(&b, 256, trial)).unwrap();
        within += ((est - j).abs() <= 0.1) as usize;
    }
    let docs = dedup_fixture(1000);
    let params = DedupParams::default();
    let once = dedup_stage(&docs, &params, Execution::Parallel).unwrap();
    let twice = dedup_stage(&once.kept, &params, Execution::Parallel).unwrap();
    let dedup_idem = twice.dropped.is_empty() && twice.kept == once.kept;
    let r1 = recurrence_filter(&docs, params.max_occurrences, Execution::Parallel).unwrap();
    let r2 = recurrence_filter(&r1.kept, params.max_occurrences, Execution::Parallel).unwrap();
    let rec_idem = r2.dropped.is_empty() && r2.kept == r1.kept;
    Outcome::check(
        exact_ok && within >= 950 && dedup_idem && rec_idem && !once.dropped.is_empty() && once.dropped.len() < 500,
        format!(
            "{within}/1000 estimates within 0.1; dedup removed {} of 1000, idempotent={dedup_idem}; \
             recurrence removed {}, idempotent={rec_idem}",
            once.dropped.len(),
            r1.dropped.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. n-gram closed forms

fn ngram() -> Outcome {
    let v = 40u32;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let docs: Vec<Vec<u32>> = (0..50).map(|_| (0..300).map(|_| rng.gen_range(0..v / 2) * 2 % v).collect()).collect();
    let model = NGramModel::train(&docs, 4, 0.75, v, Execution::Parallel).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let len = rng.gen_range(0..4);
        let ctx: Vec<u32> = if i % 2 == 0 {
            // a context seen in training
            let d = &docs[rng.gen_range(0..docs.len())];
            let s = rng.gen_range(0..d.len() - len);
            d[s..s + len].to_vec()
        } else {
            (0..len).map(|_| rng.gen_range(0..v)).collect()
        };
        let total: f64 = (0..v).map(|t| model.prob(&ctx, t)).sum();
        worst = worst.max((total - 1.0).abs());
    }

    let uniform = NGramModel::uniform(1000, 3);
    let probe: Vec<u32> = (0..500).map(|_| rng.gen_range(0..1000)).collect();
    let s = uniform.logprob(&probe).unwrap();
    let uni_err = (s.nll_total / s.token_count as f64 - 1000f64.ln()).abs();

    let coin = |rng: &mut ChaCha8Rng, n: usize| -> Vec<u32> { (0..n).map(|_| rng.gen_range(0..2)).collect() };
    let train = vec![coin(&mut rng, 200_000)];
    let m2 = NGramModel::train(&train, 3, 0.75, 2, Execution::Parallel).unwrap();
    let held = coin(&mut rng, 20_000);
    let s2 = m2.logprob(&held).unwrap();
    let two = s2.nll_total / s2.token_count as f64;
    Outcome::check(
        worst <= 1e-6 && uni_err <= 1e-6 && (two - 2f64.ln()).abs() <= 0.01,
        format!(
            "max |sum P - 1| {worst:.1e} over 1000 contexts; uniform NLL error {uni_err:.1e}; \
             two-symbol NLL {two:.4} (ln 2 = {:.4})",
            2f64.ln()
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. pipeline determinism on the bundled fixture

fn pipeline() -> Outcome {
    let pages = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/pages.jsonl");
    let tmp = tempfile::tempdir().unwrap();
    let mut snapshots = Vec::new();
    let mut conserved = true;
    let mut counts = String::new();
    for run in ["first", "second"] {
        let cfg = tmp.path().join(format!("{run}.toml"));
        std::fs::write(
            &cfg,
            format!("input = {pages:?}\noutput_dir = \"out\"\nstages = [\"extract\", \"quality\", \"dedup\"]\n"),
        )
        .unwrap();
        let report = run_pipeline(&parse_config(&cfg).unwrap()).unwrap();
        conserved &= report.input_documents == 100 && report.stages.iter().all(|s| s.kept + s.dropped == s.input);
        counts = report
            .stages
            .iter()
            .map(|s| format!("{} {}+{}", s.stage.as_str(), s.kept, s.dropped))
            .collect::<Vec<_>>()
            .join(", ");
        let out = tmp.path().join("out");
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap())
            .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
            .collect();
        files.sort();
        snapshots.push(files);
        std::fs::rename(&out, tmp.path().join(run)).unwrap();
    }
    let identical = snapshots[0] == snapshots[1];
    Outcome::check(
        identical && conserved,
        format!("{} files byte-identical={identical}; conserved={conserved} ({counts})", snapshots[0].len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("published leakage deltas and highlighted cells", published_leakage),
        ("geometric-mean averages of published perplexities", published_perplexities),
        ("desk-scale contamination experiment", desk_scale),
        ("model FLOPs utilization", model_flops),
        ("tokenizer sizes, roundtrip and digit atomicity", tokenizer),
        ("mixture weights, ramp and repetition cap", mixture),
        ("MinHash accuracy and dedup idempotence", dedup),
        ("n-gram normalization and closed forms", ngram),
        ("pipeline determinism and conservation", pipeline),
    ];
    let mut unexpected = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && o.known_deviation { " [known deviation]" } else { "" };
        println!(
            "criterion {}: {status}{note}  {name}: {} ({:.2}s)",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass && !o.known_deviation {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criterion(s) failed unexpectedly");
        std::process::exit(1);
    }
}
