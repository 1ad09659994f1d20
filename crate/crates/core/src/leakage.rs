//! Benchmark contamination audit.
//!
//! A model is scored on a benchmark's train split, its test split and a
//! reference set drawn from the same distribution. With per-token losses
//! `L_train`, `L_test` and `L_ref`:
//!
//! * `delta1 = L_test - L_ref`; strongly negative suggests the test split
//!   was seen in training,
//! * `delta2 = L_test - L_train`; strongly positive suggests the train
//!   split was seen in training.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ngram::{ExternalScores, NGramModel, NGramScorer, ScoredText, TextScorer};
use crate::tokenizer::{train_bpe, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Ref,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Ref];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Ref => "ref",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BenchmarkSplits {
    pub train: Vec<String>,
    pub test: Vec<String>,
    #[serde(rename = "ref")]
    pub reference: Vec<String>,
}

impl BenchmarkSplits {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Ref => &self.reference,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<String> {
        match split {
            Split::Train => &mut self.train,
            Split::Test => &mut self.test,
            Split::Ref => &mut self.reference,
        }
    }

    /// Splits file: `[train]`, `[test]` and `[ref]` section headers, one
    /// sample per line with `\n`, `\r`, `\t` and `\\` escaped. Blank lines
    /// are ignored.
    pub fn parse(content: &str) -> Result<Self> {
        let mut out = Self::default();
        let mut current: Option<Split> = None;
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(name) = line.trim().strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                current = Some(
                    Split::ALL
                        .into_iter()
                        .find(|s| s.as_str() == name)
                        .ok_or_else(|| Error::parse(i + 1, format!("unknown section [{name}]")))?,
                );
                continue;
            }
            let split = current.ok_or_else(|| Error::parse(i + 1, "sample before any section header"))?;
            let sample = unescape_line(line).map_err(|m| Error::parse(i + 1, m))?;
            out.get_mut(split).push(sample);
        }
        Ok(out)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for split in Split::ALL {
            out.push('[');
            out.push_str(split.as_str());
            out.push_str("]\n");
            for s in self.get(split) {
                out.push_str(&escape_line(s));
                out.push('\n');
            }
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }
}

pub fn escape_line(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_line(s: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('t') => out.push('\t'),
            Some(o) => return Err(format!("unknown escape \\{o}")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

/// Joins each question with its answer.
pub fn build_samples(questions: &[String], answers: &[String], joiner: &str) -> Result<Vec<String>> {
    if questions.len() != answers.len() {
        return Err(Error::Usage(format!(
            "{} questions but {} answers",
            questions.len(),
            answers.len()
        )));
    }
    Ok(questions
        .iter()
        .zip(answers)
        .map(|(q, a)| format!("{q}{joiner}{a}"))
        .collect())
}

// ---------------------------------------------------------------------------
// reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Flag {
    TestLeakSuspect,
    TrainOverfitSuspect,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::TestLeakSuspect => "TEST_LEAK_SUSPECT",
            Flag::TrainOverfitSuspect => "TRAIN_OVERFIT_SUSPECT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// `delta1 <= t1` raises the test-leak flag.
    pub t1: f64,
    /// `delta2 >= t2` raises the train-overfit flag.
    pub t2: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { t1: -0.2, t2: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub model_id: String,
    pub l_train: f64,
    pub l_test: f64,
    pub l_ref: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub flags: Vec<Flag>,
}

impl LeakageReport {
    pub fn from_losses(model_id: &str, l_test: f64, l_train: f64, l_ref: f64, thresholds: Thresholds) -> Self {
        let mut r = Self {
            model_id: model_id.to_string(),
            l_train,
            l_test,
            l_ref,
            delta1: l_test - l_ref,
            delta2: l_test - l_train,
            flags: Vec::new(),
        };
        r.apply(thresholds);
        r
    }

    fn apply(&mut self, t: Thresholds) {
        self.flags.clear();
        if self.delta1 <= t.t1 {
            self.flags.push(Flag::TestLeakSuspect);
        }
        if self.delta2 >= t.t2 {
            self.flags.push(Flag::TrainOverfitSuspect);
        }
    }

    pub fn has(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }
}

/// Re-applies the threshold rule to every report.
pub fn flag_outliers(reports: &[LeakageReport], thresholds: Thresholds) -> Vec<LeakageReport> {
    reports
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.apply(thresholds);
            r
        })
        .collect()
}

/// Aligned text table; flagged deltas carry a `*`.
pub fn render_reports(reports: &[LeakageReport]) -> String {
    let w = reports.iter().map(|r| r.model_id.chars().count()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<w$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}  flags",
        "model", "L_test", "L_train", "L_ref", "delta1", "delta2"
    );
    for r in reports {
        let m1 = if r.has(Flag::TestLeakSuspect) { "*" } else { " " };
        let m2 = if r.has(Flag::TrainOverfitSuspect) { "*" } else { " " };
        let flags: Vec<&str> = r.flags.iter().map(|f| f.as_str()).collect();
        let line = format!(
            "{:<w$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>6.4}{m1}  {:>6.4}{m2}  {}",
            r.model_id,
            r.l_test,
            r.l_train,
            r.l_ref,
            r.delta1,
            r.delta2,
            flags.join(",")
        );
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// auditing

/// Scores one benchmark sample. Implementations may use the split and
/// position (e.g. to look up precomputed scores).
pub trait SampleScorer: Sync {
    fn score_sample(&self, split: Split, index: usize, text: &str) -> Result<ScoredText>;
}

impl SampleScorer for NGramScorer<'_> {
    fn score_sample(&self, _split: Split, _index: usize, text: &str) -> Result<ScoredText> {
        self.score(text)
    }
}

/// Per-token log-probabilities computed elsewhere, one file per split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalSplitScores {
    pub train: ExternalScores,
    pub test: ExternalScores,
    pub reference: ExternalScores,
}

impl ExternalSplitScores {
    fn get(&self, split: Split) -> &ExternalScores {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Ref => &self.reference,
        }
    }
}

impl SampleScorer for ExternalSplitScores {
    fn score_sample(&self, split: Split, index: usize, _text: &str) -> Result<ScoredText> {
        self.get(split).scored(index).ok_or_else(|| {
            Error::Usage(format!(
                "external scores for split {} have no entry {index}",
                split.as_str()
            ))
        })
    }
}

/// Token-weighted loss per split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitLoss {
    pub nll_total: f64,
    pub tokens: u64,
}

impl SplitLoss {
    /// Sums in ascending order of value so the result does not depend on
    /// sample order.
    pub fn from_scores(split: Split, scores: &[ScoredText]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Usage(format!("split {} is empty", split.as_str())));
        }
        let mut nll: Vec<f64> = scores.iter().map(|s| s.nll_total).collect();
        nll.sort_by(f64::total_cmp);
        let tokens: u64 = scores.iter().map(|s| s.token_count).sum();
        if tokens == 0 {
            return Err(Error::Usage(format!("split {} has no tokens", split.as_str())));
        }
        Ok(Self {
            nll_total: nll.iter().sum(),
            tokens,
        })
    }

    pub fn loss(&self) -> f64 {
        self.nll_total / self.tokens as f64
    }
}

pub fn audit<S: SampleScorer + ?Sized>(
    scorer: &S,
    splits: &BenchmarkSplits,
    model_id: &str,
    thresholds: Thresholds,
    exec: Execution,
) -> Result<LeakageReport> {
    for split in Split::ALL {
        if splits.get(split).is_empty() {
            return Err(Error::Usage(format!("split {} is empty", split.as_str())));
        }
    }
    let mut losses = [0.0; 3];
    for (k, split) in Split::ALL.into_iter().enumerate() {
        let samples = splits.get(split);
        let scores = exec
            .map_range(0..samples.len(), |i| scorer.score_sample(split, i, &samples[i]))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        losses[k] = SplitLoss::from_scores(split, &scores)?.loss();
    }
    let [l_train, l_test, l_ref] = losses;
    Ok(LeakageReport::from_losses(model_id, l_test, l_train, l_ref, thresholds))
}

// ---------------------------------------------------------------------------
// synthetic demonstration

const NAMES: [&str; 24] = [
    "Ava", "Ben", "Chloe", "Dev", "Elena", "Farid", "Grace", "Hugo", "Iris", "Jon", "Kira", "Liam", "Maya", "Noah",
    "Omar", "Priya", "Quinn", "Rosa", "Sam", "Tara", "Umar", "Vera", "Wes", "Yuki",
];
const ITEMS: [&str; 16] = [
    "apples", "pencils", "stickers", "marbles", "cookies", "books", "shells", "stamps", "cards", "coins",
    "oranges", "balloons", "candles", "buttons", "beads", "tickets",
];

/// One templated arithmetic word problem as (question, answer).
pub fn word_problem(rng: &mut impl Rng) -> (String, String) {
    let n = NAMES[rng.gen_range(0..NAMES.len())];
    let mut p = NAMES[rng.gen_range(0..NAMES.len())];
    while p == n {
        p = NAMES[rng.gen_range(0..NAMES.len())];
    }
    let item = ITEMS[rng.gen_range(0..ITEMS.len())];
    match rng.gen_range(0..4) {
        0 => {
            let (a, b) = (rng.gen_range(2..100), rng.gen_range(2..100));
            (
                format!("{n} has {a} {item}. {p} gives {n} {b} more. How many {item} does {n} have now?"),
                format!("{n} starts with {a} {item} and gets {b} more, so {a} + {b} = {}. The answer is {}.", a + b, a + b),
            )
        }
        1 => {
            let b = rng.gen_range(2..60);
            let a = b + rng.gen_range(1..60);
            (
                format!("{n} had {a} {item} and gave {b} of them to {p}. How many {item} does {n} have left?"),
                format!("{n} gave away {b} of {a} {item}, so {a} - {b} = {}. The answer is {}.", a - b, a - b),
            )
        }
        2 => {
            let (a, b) = (rng.gen_range(2..13), rng.gen_range(2..13));
            (
                format!("{n} buys {a} boxes of {item}. Each box holds {b} {item}. How many {item} does {n} buy?"),
                format!("There are {a} boxes with {b} {item} each, so {a} x {b} = {}. The answer is {}.", a * b, a * b),
            )
        }
        _ => {
            let b = rng.gen_range(2..10);
            let q = rng.gen_range(2..20);
            let a = b * q;
            (
                format!("{n} shares {a} {item} equally among {b} friends. How many {item} does each friend get?"),
                format!("Each of the {b} friends gets {a} / {b} = {q} {item}. The answer is {q}."),
            )
        }
    }
}

pub fn word_problems(rng: &mut impl Rng, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| {
            let (q, a) = word_problem(rng);
            format!("{q}\n{a}")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoParams {
    pub background: usize,
    pub split_size: usize,
    pub order: usize,
    pub discount: f64,
    pub vocab_size: usize,
    /// Times a contaminating split is repeated in the training corpus.
    pub repeats: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            background: 20_000,
            split_size: 4_000,
            order: 8,
            discount: 0.75,
            vocab_size: 1024,
            repeats: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub seed: u64,
    pub params: DemoParams,
    pub vocab_size: usize,
    /// Background corpus only.
    pub clean: LeakageReport,
    /// Background plus the train split.
    pub train_contaminated: LeakageReport,
    /// Background plus train and test splits.
    pub test_contaminated: LeakageReport,
}

impl DemoReport {
    /// The expected outcome: clean is flat and unflagged, contamination of
    /// each split raises its flag.
    pub fn holds(&self) -> bool {
        self.clean.delta1.abs() <= 0.02
            && self.clean.delta2.abs() <= 0.02
            && self.clean.flags.is_empty()
            && self.train_contaminated.delta2 >= 0.1
            && self.train_contaminated.has(Flag::TrainOverfitSuspect)
            && self.test_contaminated.has(Flag::TestLeakSuspect)
    }

    pub fn reports(&self) -> [&LeakageReport; 3] {
        [&self.clean, &self.train_contaminated, &self.test_contaminated]
    }
}

/// Builds a synthetic benchmark, trains one tokenizer and three n-gram
/// models on differently contaminated corpora, and audits each.
pub fn desk_scale_demo(seed: u64, params: DemoParams, exec: Execution) -> Result<DemoReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = word_problems(&mut rng, params.background);
    let mut pool = word_problems(&mut rng, 3 * params.split_size);
    pool.shuffle(&mut rng);
    let reference = pool.split_off(2 * params.split_size);
    let test = pool.split_off(params.split_size);
    let splits = BenchmarkSplits {
        train: pool,
        test,
        reference,
    };

    let bg: Vec<&str> = background.iter().map(String::as_str).collect();
    let vocab = Vocabulary::from_base(train_bpe(&bg, params.vocab_size, exec)?)?;
    let encode = |texts: &[String]| -> Vec<Vec<u32>> {
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        vocab.encode_batch(&refs, exec).into_iter().map(|t| t.0).collect()
    };
    let bg_ids = encode(&background);
    let train_ids = encode(&splits.train);
    let test_ids = encode(&splits.test);

    let model = |corpus: Vec<Vec<u32>>| {
        NGramModel::train(&corpus, params.order, params.discount, vocab.size() as u32, exec)
    };
    let thresholds = Thresholds::default();
    let run = |name: &str, m: &NGramModel| audit(&NGramScorer::new(m, &vocab), &splits, name, thresholds, exec);

    let clean = model(bg_ids.clone())?;
    let clean = run("clean", &clean)?;
    let repeated = |ids: &[Vec<u32>]| -> Vec<Vec<u32>> {
        (0..params.repeats.max(1)).flat_map(|_| ids.iter().cloned()).collect()
    };
    let train_model = model([bg_ids.clone(), repeated(&train_ids)].concat())?;
    let train_contaminated = run("train-contaminated", &train_model)?;
    let test_model = model([bg_ids, repeated(&train_ids), repeated(&test_ids)].concat())?;
    let test_contaminated = run("test-contaminated", &test_model)?;

    Ok(DemoReport {
        seed,
        params,
        vocab_size: vocab.size(),
        clean,
        train_contaminated,
        test_contaminated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn report(l_test: f64, l_train: f64, l_ref: f64) -> LeakageReport {
        LeakageReport::from_losses("m", l_test, l_train, l_ref, Thresholds::default())
    }

    #[test]
    fn samples_join_question_and_answer() {
        assert!(build_samples(&[], &[], "\n").unwrap().is_empty());
        assert_eq!(
            build_samples(&["Q1".into()], &["A1".into()], "\n").unwrap(),
            vec!["Q1\nA1".to_string()]
        );
        assert!(matches!(build_samples(&["Q".into()], &[], "\n"), Err(Error::Usage(_))));
    }

    #[test]
    fn deltas_and_flags() {
        let r = report(1.03, 0.42, 1.14);
        assert_abs_diff_eq!(r.delta1, -0.11, epsilon = 1e-12);
        assert_abs_diff_eq!(r.delta2, 0.61, epsilon = 1e-12);
        assert_eq!(r.flags, vec![Flag::TrainOverfitSuspect]);
        let r = report(1.01, 0.97, 1.00);
        assert_abs_diff_eq!(r.delta1, 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(r.delta2, 0.04, epsilon = 1e-12);
        assert!(r.flags.is_empty());
        let r = report(0.7, 0.7, 0.7);
        assert_eq!((r.delta1, r.delta2), (0.0, 0.0));
        assert!(r.flags.is_empty());
        let r = report(0.78, 0.39, 1.29);
        assert_eq!(r.flags, vec![Flag::TestLeakSuspect, Flag::TrainOverfitSuspect]);
        assert!(flag_outliers(&[], Thresholds::default()).is_empty());
    }

    #[test]
    fn splits_file_roundtrip() {
        let s = BenchmarkSplits {
            train: vec!["a\nb".into(), "tab\there \\ ok".into()],
            test: vec!["t".into()],
            reference: vec![],
        };
        let text = s.to_file_string();
        assert_eq!(BenchmarkSplits::parse(&text).unwrap(), s);
        assert!(BenchmarkSplits::parse("orphan\n[train]\n").is_err());
        assert!(BenchmarkSplits::parse("[dev]\nx\n").is_err());
        assert!(BenchmarkSplits::parse("[train]\nbad \\q\n").is_err());
    }

    struct Fixed;
    impl SampleScorer for Fixed {
        fn score_sample(&self, split: Split, i: usize, _t: &str) -> Result<ScoredText> {
            let per = match split {
                Split::Train => 1.0,
                Split::Test => 2.0,
                Split::Ref => 3.0,
            };
            let n = i as u64 + 1;
            Ok(ScoredText { nll_total: per * n as f64, token_count: n, char_count: 0, byte_count: 0 })
        }
    }

    #[test]
    fn audit_is_token_weighted() {
        let splits = BenchmarkSplits {
            train: vec!["a".into(), "b".into()],
            test: vec!["c".into()],
            reference: vec!["d".into(); 3],
        };
        let r = audit(&Fixed, &splits, "m", Thresholds::default(), Execution::Sequential).unwrap();
        assert_eq!((r.l_train, r.l_test, r.l_ref), (1.0, 2.0, 3.0));
        let mut empty = splits.clone();
        empty.test.clear();
        assert!(matches!(audit(&Fixed, &empty, "m", Thresholds::default(), Execution::Sequential),
            Err(Error::Usage(m)) if m.contains("test")));
    }

    #[test]
    fn small_demo_behaves() {
        let params = DemoParams { background: 3000, split_size: 300, order: 4, discount: 0.75, vocab_size: 400, repeats: 4 };
        let r = desk_scale_demo(1, params, Execution::Sequential).unwrap();
        assert!(r.train_contaminated.delta2 > r.clean.delta2 + 0.05, "{r:?}");
        assert!(r.test_contaminated.delta1 < r.clean.delta1 - 0.05, "{r:?}");
    }
}
