use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use curator_core::corpus::{read_manifest_with, write_documents, Document, ReasonCode, StageOutput};
use curator_core::dedup::{dedup_stage, DedupParams};
use curator_core::exec::with_workers;
use curator_core::extract::{extract_stage, ExtractionPolicy};
use curator_core::leakage::{
    audit, desk_scale_demo, render_reports, BenchmarkSplits, DemoParams, ExternalSplitScores, Thresholds,
};
use curator_core::mixture::{build_stage1_plan, build_stage2_plan, sample_stream, MixtureConfig, MixturePlan};
use curator_core::monitor::{
    build_eval_set, correlation, domain_table, mfu, read_loss_records, utilization, write_loss_records, LossRecord,
    ModelShape,
};
use curator_core::ngram::{
    perplexity, ExternalScores, NGramModel, NGramScorer, Normalization, Smoothing, DEFAULT_DISCOUNT, DEFAULT_ORDER,
};
use curator_core::pipeline::{parse_config, run_pipeline, QualityStageConfig, RunStatus};
use curator_core::quality::{
    quality_stage, read_calibration, PerplexityScorer, QualityClassifier, QualityModels, TrainParams,
};
use curator_core::refgen::{request_reference_samples, write_samples, Endpoint, Source};
use curator_core::tokenizer::{assemble_vocab, read_word_list, train_bpe, Vocabulary};
use curator_core::{Error, Execution, Result};

#[derive(Parser)]
#[command(name = "curator", version, about = "Corpus curation and contamination auditing")]
struct Cli {
    /// Worker threads: 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover main-body text from raw HTML documents.
    Extract(ExtractArgs),
    /// Language, perplexity-bucket, classifier and code filters.
    Quality(QualityArgs),
    /// Train the reference-likeness classifier.
    TrainClassifier(TrainClassifierArgs),
    /// Paragraph recurrence cap followed by near-duplicate removal.
    Dedup(DedupArgs),
    /// Train, assemble and apply the byte-level BPE vocabulary
    #[command(subcommand)]
    Tokenizer(TokenizerCommand),
    /// Train an n-gram language model on a manifest.
    TrainLm(TrainLmArgs),
    /// Corpus loss and perplexity under an n-gram model.
    Score(ScoreArgs),
    /// Plan and sample source mixtures for the two training stages
    #[command(subcommand)]
    Mixture(MixtureCommand),
    /// Evaluation sets, loss tables, correlation and FLOPs utilization
    #[command(subcommand)]
    Monitor(MonitorCommand),
    /// Compare train, test and reference losses on a benchmark.
    AuditLeakage(AuditArgs),
    /// Collect reference samples from a completion service or a file.
    ReferenceSamples(RefSamplesArgs),
    /// Run the configured pipeline stages.
    Run(RunArgs),
    /// Synthetic contamination experiment with three n-gram models.
    DemoLeakage(DemoArgs),
}

#[derive(Args)]
struct StageIo {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Where to write rejected documents.
    #[arg(long)]
    dropped: Option<PathBuf>,
    /// Pipeline config whose stage block supplies defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    io: StageIo,
    #[arg(long)]
    min_block_chars: Option<usize>,
    #[arg(long)]
    max_link_fraction: Option<f64>,
}

#[derive(Args)]
struct QualityArgs {
    #[command(flatten)]
    io: StageIo,
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    min_reference_prob: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainClassifierArgs {
    /// Manifest of reference-quality documents.
    #[arg(long)]
    positives: PathBuf,
    #[arg(long)]
    negatives: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DedupArgs {
    #[command(flatten)]
    io: StageIo,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    hashes: Option<usize>,
    #[arg(long)]
    bands: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_occurrences: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum TokenizerCommand {
    /// Learn a byte-level BPE base vocabulary.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extend a base vocabulary with character, word and reserved lists.
    Assemble {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        zh_chars: Option<PathBuf>,
        #[arg(long)]
        zh_words: Option<PathBuf>,
        #[arg(long)]
        reserved: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Manifest to `{"id", "tokens"}` lines.
    Encode {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// `{"id", "tokens"}` lines back to `{"id", "text", "lossy"}` lines.
    Decode {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainLmArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
    discount: f64,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    lm: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "per_token")]
    normalization: Normalization,
    /// Score with unsmoothed relative frequencies.
    #[arg(long)]
    max_likelihood: bool,
    /// Append a loss record for this corpus to the given file.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long, default_value = "model")]
    model_id: String,
    #[arg(long, default_value = "corpus")]
    domain: String,
    #[arg(long, default_value_t = 0)]
    checkpoint_tokens: u64,
    /// Write per-token log-probabilities in the external-scores format.
    #[arg(long)]
    logprobs_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MixtureCommand {
    /// Clamped static mixture over the whole token budget.
    Stage1 {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        total_tokens: Option<u64>,
        #[arg(long)]
        repetition_cap: Option<u32>,
    },
    /// Linear ramp of one source over the continual-training steps.
    Stage2 {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Draw source names from a plan, one per line.
    Sample {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum MonitorCommand {
    /// Keep documents published after a cutoff date.
    EvalSet {
        #[arg(long = "in")]
        input: PathBuf,
        /// YYYY-MM-DD; documents on this date are excluded.
        #[arg(long)]
        cutoff: chrono::NaiveDate,
        #[arg(long)]
        domain: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Model × domain perplexity table from loss records.
    Table {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out_json: Option<PathBuf>,
    },
    /// Pearson correlation of two whitespace-separated columns.
    Corr {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Model FLOPs utilization.
    Mfu {
        /// TOML file with layers, hidden, heads, ffn, vocab, seq_len.
        #[arg(long, required_unless_present = "achieved_tflops")]
        shape: Option<PathBuf>,
        #[arg(long, requires = "shape")]
        tokens_per_sec: Option<f64>,
        /// Measured TFLOPS per GPU, instead of shape and throughput.
        #[arg(long, conflicts_with = "shape")]
        achieved_tflops: Option<f64>,
        #[arg(long, default_value_t = 312.0)]
        peak_tflops: f64,
    },
}

#[derive(Args)]
struct AuditArgs {
    /// Splits file with [train], [test] and [ref] sections.
    #[arg(long)]
    splits: PathBuf,
    #[arg(long, default_value = "model")]
    model_id: String,
    #[arg(long, requires = "vocab", required_unless_present = "scores_train")]
    lm: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// External per-token log-probabilities, one file per split.
    #[arg(long, requires_all = ["scores_test", "scores_ref"], conflicts_with = "lm")]
    scores_train: Option<PathBuf>,
    #[arg(long)]
    scores_test: Option<PathBuf>,
    #[arg(long)]
    scores_ref: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    t1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    t2: Option<f64>,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Args)]
struct RefSamplesArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Prompt template; `{index}` is replaced by the request number.
    #[arg(long, default_value = "")]
    template: String,
    #[arg(long, conflicts_with = "template")]
    template_file: Option<PathBuf>,
    /// Read samples from this file instead of calling a service.
    #[arg(long, required_unless_present = "base_url")]
    offline: Option<PathBuf>,
    #[arg(long, requires = "model", conflicts_with = "offline")]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    token_env: Option<String>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    #[arg(long)]
    max_concurrency: Option<usize>,
    /// Used when the service cannot be reached.
    #[arg(long)]
    fallback: Option<PathBuf>,
    /// Request/response log (JSON lines).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    background: Option<usize>,
    #[arg(long)]
    split_size: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let exec = if cli.workers == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let workers = cli.workers;
    match with_workers(workers, || dispatch(cli.command, exec, workers)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Response { raw, .. } = &e {
                eprintln!("raw response: {raw}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command, exec: Execution, workers: usize) -> Result<()> {
    match command {
        Command::Extract(a) => cmd_extract(a, exec),
        Command::Quality(a) => cmd_quality(a, exec),
        Command::TrainClassifier(a) => cmd_train_classifier(a, exec),
        Command::Dedup(a) => cmd_dedup(a, exec),
        Command::Tokenizer(c) => cmd_tokenizer(c, exec),
        Command::TrainLm(a) => cmd_train_lm(a, exec),
        Command::Score(a) => cmd_score(a, exec),
        Command::Mixture(c) => cmd_mixture(c, exec),
        Command::Monitor(c) => cmd_monitor(c),
        Command::AuditLeakage(a) => cmd_audit(a, exec),
        Command::ReferenceSamples(a) => cmd_reference_samples(a),
        Command::Run(a) => cmd_run(a, workers),
        Command::DemoLeakage(a) => cmd_demo(a, exec),
    }
}

// ---------------------------------------------------------------------------
// helpers

/// Reads `[key]` from a pipeline config, or the default when there is no
/// config or no such block.
fn config_block<T: DeserializeOwned + Default>(config: Option<&Path>, key: &str) -> Result<T> {
    let Some(path) = config else {
        return Ok(T::default());
    };
    let content = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = content
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim().to_string()))?;
    match table.remove(key) {
        None => Ok(T::default()),
        Some(v) => v
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("[{key}]: {}", e.to_string().trim()))),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn read_lines_json<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string())))
        .collect()
}

fn write_lines_json<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    write_text(path, &out)
}

#[derive(Serialize)]
struct StageSummary {
    input: usize,
    kept: usize,
    dropped: usize,
    drop_reasons: std::collections::BTreeMap<ReasonCode, u64>,
}

fn finish_stage(output: StageOutput, io: &StageIo) -> Result<()> {
    write_documents(&output.kept, &io.out)?;
    if let Some(p) = &io.dropped {
        write_documents(&output.dropped, p)?;
    }
    let summary = StageSummary {
        input: output.total(),
        kept: output.kept.len(),
        dropped: output.dropped.len(),
        drop_reasons: output.drop_counts(),
    };
    print!("{}", to_json(&summary));
    Ok(())
}

fn load_docs(path: &Path, exec: Execution) -> Result<Vec<Document>> {
    Ok(read_manifest_with(path, exec)?.into_documents())
}

// ---------------------------------------------------------------------------
// curation stages

fn cmd_extract(a: ExtractArgs, exec: Execution) -> Result<()> {
    let mut policy: ExtractionPolicy = config_block(a.io.config.as_deref(), "extract")?;
    if let Some(v) = a.min_block_chars {
        policy.min_block_chars = v;
    }
    if let Some(v) = a.max_link_fraction {
        policy.max_link_fraction = v;
    }
    let docs = load_docs(&a.io.input, exec)?;
    finish_stage(extract_stage(&docs, &policy, exec), &a.io)
}

fn cmd_quality(a: QualityArgs, exec: Execution) -> Result<()> {
    let mut cfg: QualityStageConfig = config_block(a.io.config.as_deref(), "quality")?;
    // model paths in a config file are relative to it
    if let Some(base) = a.io.config.as_deref().and_then(Path::parent) {
        for p in [&mut cfg.classifier, &mut cfg.lm, &mut cfg.vocab, &mut cfg.calibration]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    let seed = match a.seed {
        Some(s) => s,
        None => config_block::<Option<u64>>(a.io.config.as_deref(), "seed")?.unwrap_or(0),
    };
    cfg.classifier = a.classifier.or(cfg.classifier);
    cfg.calibration = a.calibration.or(cfg.calibration);
    cfg.lm = a.lm.or(cfg.lm);
    cfg.vocab = a.vocab.or(cfg.vocab);
    if let Some(v) = a.min_reference_prob {
        cfg.policy.min_reference_prob = v;
    }
    if cfg.lm.is_some() != cfg.vocab.is_some() || cfg.lm.is_some() != cfg.calibration.is_some() {
        return Err(Error::Usage("--lm, --vocab and --calibration must be given together".into()));
    }

    let classifier = cfg.classifier.as_ref().map(QualityClassifier::load).transpose()?;
    let lm = cfg.lm.as_ref().map(NGramModel::load).transpose()?;
    let vocab = cfg.vocab.as_ref().map(Vocabulary::load).transpose()?;
    let calibration = cfg.calibration.as_ref().map(read_calibration).transpose()?;
    let scorer = lm.as_ref().zip(vocab.as_ref()).map(|(m, v)| NGramScorer::new(m, v));
    let models = QualityModels {
        classifier: classifier.as_ref(),
        scorer: scorer.as_ref().map(|s| s as &dyn PerplexityScorer),
        calibration: calibration.as_deref(),
    };
    let docs = load_docs(&a.io.input, exec)?;
    finish_stage(quality_stage(&docs, &models, &cfg.policy, seed, exec)?, &a.io)
}

fn cmd_train_classifier(a: TrainClassifierArgs, exec: Execution) -> Result<()> {
    let mut params = TrainParams::default();
    if let Some(v) = a.feature_dim {
        params.feature_dim = v;
    }
    if let Some(v) = a.epochs {
        params.epochs = v;
    }
    if let Some(v) = a.lr {
        params.lr = v;
    }
    if let Some(v) = a.seed {
        params.seed = v;
    }
    let pos = read_manifest_with(&a.positives, exec)?;
    let neg = read_manifest_with(&a.negatives, exec)?;
    let (model, report) = QualityClassifier::train(&pos.texts(), &neg.texts(), &params, exec)?;
    model.save(&a.out)?;
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>3}  log-loss {loss:.6}", i + 1);
    }
    Ok(())
}

fn cmd_dedup(a: DedupArgs, exec: Execution) -> Result<()> {
    let mut p: DedupParams = config_block(a.io.config.as_deref(), "dedup")?;
    if let Some(v) = a.k {
        p.k = v;
    }
    if let Some(v) = a.hashes {
        p.num_hashes = v;
    }
    if let Some(v) = a.bands {
        p.bands = v;
    }
    if let Some(v) = a.threshold {
        p.threshold = v;
    }
    if let Some(v) = a.max_occurrences {
        p.max_occurrences = v;
    }
    if let Some(v) = a.seed {
        p.seed = v;
    }
    let docs = load_docs(&a.io.input, exec)?;
    finish_stage(dedup_stage(&docs, &p, exec)?, &a.io)
}

// ---------------------------------------------------------------------------
// tokenizer and language model

#[derive(Serialize, serde::Deserialize)]
struct TokenLine {
    id: String,
    tokens: Vec<u32>,
}

#[derive(Serialize)]
struct DecodedLine {
    id: String,
    text: String,
    lossy: bool,
}

fn cmd_tokenizer(c: TokenizerCommand, exec: Execution) -> Result<()> {
    match c {
        TokenizerCommand::Train { input, size, out } => {
            let manifest = read_manifest_with(&input, exec)?;
            let vocab = Vocabulary::from_base(train_bpe(&manifest.texts(), size, exec)?)?;
            vocab.save(&out)?;
            print!("{}", to_json(&vocab.breakdown()));
        }
        TokenizerCommand::Assemble {
            base,
            zh_chars,
            zh_words,
            reserved,
            out,
        } => {
            let list = |p: Option<PathBuf>| p.map(read_word_list).transpose().map(Option::unwrap_or_default);
            let vocab = assemble_vocab(Vocabulary::load(&base)?.base(), &list(zh_chars)?, &list(zh_words)?, &list(reserved)?)?;
            vocab.save(&out)?;
            print!("{}", to_json(&vocab.breakdown()));
        }
        TokenizerCommand::Encode { vocab, input, out } => {
            let vocab = Vocabulary::load(&vocab)?;
            let manifest = read_manifest_with(&input, exec)?;
            let seqs = vocab.encode_batch(&manifest.texts(), exec);
            let lines: Vec<TokenLine> = manifest
                .documents()
                .iter()
                .zip(seqs)
                .map(|(d, s)| TokenLine {
                    id: d.id.clone(),
                    tokens: s.0,
                })
                .collect();
            write_lines_json(&lines, &out)?;
        }
        TokenizerCommand::Decode { vocab, input, out } => {
            let vocab = Vocabulary::load(&vocab)?;
            let lines: Vec<TokenLine> = read_lines_json(&input)?;
            let decoded = lines
                .into_iter()
                .map(|l| {
                    let d = vocab.decode(&l.tokens)?;
                    Ok(DecodedLine {
                        id: l.id,
                        text: d.text,
                        lossy: d.lossy,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            write_lines_json(&decoded, &out)?;
        }
    }
    Ok(())
}

fn cmd_train_lm(a: TrainLmArgs, exec: Execution) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let manifest = read_manifest_with(&a.input, exec)?;
    let seqs = vocab.encode_batch(&manifest.texts(), exec);
    let ids: Vec<&[u32]> = seqs.iter().map(|s| s.ids()).collect();
    let model = NGramModel::train(&ids, a.order, a.discount, vocab.size() as u32, exec)?;
    model.save(&a.out)?;
    println!(
        "order {} discount {} vocab {} n-grams {}",
        model.order(),
        model.discount(),
        model.vocab_size(),
        model.num_ngrams()
    );
    Ok(())
}

fn cmd_score(a: ScoreArgs, exec: Execution) -> Result<()> {
    let mut model = NGramModel::load(&a.lm)?;
    if a.max_likelihood {
        model = model.with_smoothing(Smoothing::MaximumLikelihood);
    }
    let vocab = Vocabulary::load(&a.vocab)?;
    let manifest = read_manifest_with(&a.input, exec)?;
    let scorer = NGramScorer::new(&model, &vocab);
    let texts = manifest.texts();
    let loss = perplexity(&scorer, &texts, a.normalization, exec)?;
    if let Some(path) = &a.logprobs_out {
        let docs = exec.try_map(&texts, |t| scorer.token_logprobs(t))?;
        ExternalScores { docs }.write(path)?;
    }
    if let Some(path) = &a.records {
        let mut records = if path.exists() {
            read_loss_records(path)?
        } else {
            Vec::new()
        };
        records.push(LossRecord::from_corpus_loss(&a.model_id, a.checkpoint_tokens, &a.domain, &loss)?);
        write_loss_records(&records, path)?;
    }
    print!("{}", to_json(&loss));
    Ok(())
}

// ---------------------------------------------------------------------------
// mixture and monitoring

fn cmd_mixture(c: MixtureCommand, exec: Execution) -> Result<()> {
    match c {
        MixtureCommand::Stage1 {
            spec,
            out,
            total_tokens,
            repetition_cap,
        } => {
            let cfg = MixtureConfig::read(&spec)?;
            let total = total_tokens.unwrap_or(cfg.total_tokens);
            let cap = repetition_cap.unwrap_or(cfg.repetition_cap);
            let plan = build_stage1_plan(&cfg.sources, total, cap)?;
            plan.write(&out)?;
            print_plan(&plan);
        }
        MixtureCommand::Stage2 { spec, out, steps } => {
            let cfg = MixtureConfig::read(&spec)?;
            let mut params = cfg
                .stage2
                .ok_or_else(|| Error::Config(format!("{} has no [stage2] block", spec.display())))?;
            if let Some(s) = steps {
                params.steps = s;
            }
            let plan = build_stage2_plan(&cfg.sources, &params)?;
            plan.write(&out)?;
            print_plan(&plan);
        }
        MixtureCommand::Sample { plan, n, seed, out } => {
            let plan = MixturePlan::read(&plan)?;
            let names = sample_stream(&plan, seed, n, exec);
            let mut text = names.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            match out {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn print_plan(plan: &MixturePlan) {
    let mean = plan.mean_probs();
    let reps = plan.repetitions();
    println!("{:<20} {:>9} {:>9} {:>8}", "source", "mean %", "epochs", "clamped");
    for (i, s) in plan.sources.iter().enumerate() {
        println!(
            "{:<20} {:>9.3} {:>9.3} {:>8}",
            s.name,
            100.0 * mean[i],
            reps[i],
            if s.clamped { "yes" } else { "" }
        );
    }
}

fn cmd_monitor(c: MonitorCommand) -> Result<()> {
    match c {
        MonitorCommand::EvalSet {
            input,
            cutoff,
            domain,
            out,
        } => {
            let docs = load_docs(&input, Execution::Sequential)?;
            let set = build_eval_set(&docs, cutoff, &domain)?;
            let kept: Vec<Document> = set.documents.into_documents();
            write_documents(&kept, &out)?;
            println!("{}: kept {} of {} documents published after {}", domain, kept.len(), docs.len(), cutoff);
        }
        MonitorCommand::Table { records, out_json } => {
            let table = domain_table(&read_loss_records(&records)?)?;
            print!("{}", table.render_text());
            if let Some(p) = out_json {
                write_text(&p, &table.to_json())?;
            }
        }
        MonitorCommand::Corr { input } => {
            let content = std::fs::read_to_string(&input).map_err(|e| Error::io(&input, e))?;
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (i, line) in content.lines().enumerate() {
                let cols: Vec<&str> = line.split_whitespace().collect();
                if cols.is_empty() {
                    continue;
                }
                let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(i + 1, format!("not a number: {s:?}")));
                if cols.len() != 2 {
                    return Err(Error::parse(i + 1, "expected two columns"));
                }
                xs.push(parse(cols[0])?);
                ys.push(parse(cols[1])?);
            }
            println!("{:.6}", correlation(&xs, &ys)?);
        }
        MonitorCommand::Mfu {
            shape,
            tokens_per_sec,
            achieved_tflops,
            peak_tflops,
        } => {
            if let Some(t) = achieved_tflops {
                println!("mfu {:.2}%", 100.0 * utilization(t, peak_tflops)?);
                return Ok(());
            }
            let path = shape.expect("clap enforces --shape");
            let content = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let shape: ModelShape =
                toml::from_str(&content).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
            let tps = tokens_per_sec.ok_or_else(|| Error::Usage("--tokens-per-sec is required with --shape".into()))?;
            let r = mfu(&shape, tps, peak_tflops)?;
            println!("params {}", curator_core::monitor::param_count(&shape));
            println!("flops/token {:.4e}", r.flops_per_token);
            println!("achieved {:.1} TFLOPS", r.achieved_tflops);
            println!("mfu {:.2}%", 100.0 * r.mfu);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// leakage

fn cmd_audit(a: AuditArgs, exec: Execution) -> Result<()> {
    let splits = BenchmarkSplits::read(&a.splits)?;
    let mut thr = Thresholds::default();
    if let Some(v) = a.t1 {
        thr.t1 = v;
    }
    if let Some(v) = a.t2 {
        thr.t2 = v;
    }
    let report = match (&a.lm, &a.vocab, &a.scores_train) {
        (Some(lm), Some(vocab), _) => {
            let model = NGramModel::load(lm)?;
            let vocab = Vocabulary::load(vocab)?;
            audit(&NGramScorer::new(&model, &vocab), &splits, &a.model_id, thr, exec)?
        }
        (_, _, Some(train)) => {
            let need = |p: &Option<PathBuf>, flag: &str| {
                p.as_ref()
                    .ok_or_else(|| Error::Usage(format!("{flag} is required with --scores-train")))
                    .and_then(ExternalScores::read)
            };
            let scores = ExternalSplitScores {
                train: ExternalScores::read(train)?,
                test: need(&a.scores_test, "--scores-test")?,
                reference: need(&a.scores_ref, "--scores-ref")?,
            };
            audit(&scores, &splits, &a.model_id, thr, exec)?
        }
        _ => return Err(Error::Usage("give --lm with --vocab, or the three --scores-* files".into())),
    };
    print!("{}", render_reports(std::slice::from_ref(&report)));
    if let Some(p) = a.out_json {
        write_text(&p, &to_json(&report))?;
    }
    Ok(())
}

fn cmd_reference_samples(a: RefSamplesArgs) -> Result<()> {
    let template = match &a.template_file {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => a.template.clone(),
    };
    let source = match (a.offline, a.base_url) {
        (Some(p), _) => Source::Offline(p),
        (None, Some(url)) => {
            let model = a.model.ok_or_else(|| Error::Usage("--model is required with --base-url".into()))?;
            let mut endpoint = Endpoint::new(url, model);
            endpoint.token_env = a.token_env;
            if let Some(v) = a.timeout_secs {
                endpoint.timeout_secs = v;
            }
            if let Some(v) = a.max_concurrency {
                endpoint.max_concurrency = v;
            }
            Source::Online {
                endpoint,
                fallback: a.fallback,
            }
        }
        (None, None) => return Err(Error::Usage("give --offline or --base-url".into())),
    };
    let samples = request_reference_samples(&source, &template, a.n, a.log.as_deref())?;
    write_samples(&samples, &a.out)?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// pipeline and demo

fn cmd_run(a: RunArgs, workers: usize) -> Result<()> {
    let mut cfg = parse_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.output_dir {
        cfg.output_dir = std::path::absolute(&d).map_err(|e| Error::io(&d, e))?;
    }
    if workers != 0 {
        cfg.workers = workers;
    }
    let report = run_pipeline(&cfg)?;
    debug_assert_eq!(report.status, RunStatus::Complete);
    println!("{:<8} {:>8} {:>8} {:>8}", "stage", "input", "kept", "dropped");
    for s in &report.stages {
        println!("{:<8} {:>8} {:>8} {:>8}", s.stage.as_str(), s.input, s.kept, s.dropped);
    }
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_demo(a: DemoArgs, exec: Execution) -> Result<()> {
    let mut p = DemoParams::default();
    if let Some(v) = a.background {
        p.background = v;
    }
    if let Some(v) = a.split_size {
        p.split_size = v;
    }
    if let Some(v) = a.order {
        p.order = v;
    }
    if let Some(v) = a.vocab_size {
        p.vocab_size = v;
    }
    if let Some(v) = a.repeats {
        p.repeats = v;
    }
    let report = desk_scale_demo(a.seed, p, exec)?;
    let rows: Vec<_> = report.reports().into_iter().cloned().collect();
    print!("{}", render_reports(&rows));
    if let Some(path) = &a.out_json {
        write_text(path, &to_json(&report))?;
    }
    if report.holds() {
        println!("expected outcome: holds");
        Ok(())
    } else {
        Err(Error::Domain("the contamination signal did not separate as expected".into()))
    }
}
