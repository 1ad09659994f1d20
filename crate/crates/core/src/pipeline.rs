//! Config-driven runs of the curation stages.
//!
//! A run reads one manifest, applies the configured stages in order and
//! writes, per stage, the kept and dropped documents plus drop counts by
//! reason. Output is a pure function of the config and inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{read_manifest_with, write_documents, Document, ReasonCode, StageOutput};
use crate::dedup::{dedup_stage, DedupParams};
use crate::error::{Error, Result};
use crate::exec::{with_workers, Execution};
use crate::extract::{extract_stage, ExtractionPolicy};
use crate::ngram::{NGramModel, NGramScorer};
use crate::quality::{quality_stage, read_calibration, PerplexityScorer, QualityClassifier, QualityModels, QualityPolicy};
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageName {
    Extract,
    Quality,
    Dedup,
}

impl StageName {
    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Extract => "extract",
            StageName::Quality => "quality",
            StageName::Dedup => "dedup",
        }
    }
}

/// Model files for the quality stage. Any of them may be omitted; the
/// corresponding check is then skipped.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityStageConfig {
    pub classifier: Option<PathBuf>,
    /// n-gram model used for perplexity bucketing; needs `vocab` and
    /// `calibration` too.
    pub lm: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub policy: QualityPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// 0 uses every core, 1 runs sequentially.
    #[serde(default)]
    pub workers: usize,
    /// Advisory only; recorded in the resolved config.
    #[serde(default)]
    pub memory_budget_mb: u64,
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub stages: Vec<StageName>,
    #[serde(default)]
    pub extract: ExtractionPolicy,
    #[serde(default)]
    pub quality: QualityStageConfig,
    #[serde(default)]
    pub dedup: DedupParams,
}

impl PipelineConfig {
    /// Parses TOML and resolves relative paths against `base`.
    pub fn from_toml(content: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(content).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if let Ok(abs) = std::path::absolute(&*p) {
                *p = abs;
            }
        };
        resolve(&mut cfg.input);
        resolve(&mut cfg.output_dir);
        for p in [
            &mut cfg.quality.classifier,
            &mut cfg.quality.lm,
            &mut cfg.quality.vocab,
            &mut cfg.quality.calibration,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("no stages configured".into()));
        }
        let mut seen = Vec::new();
        for s in &self.stages {
            if seen.contains(s) {
                return Err(Error::Config(format!("stage {} listed twice", s.as_str())));
            }
            seen.push(*s);
        }
        let q = &self.quality;
        if q.lm.is_some() != q.vocab.is_some() || q.lm.is_some() != q.calibration.is_some() {
            return Err(Error::Config(
                "quality.lm, quality.vocab and quality.calibration must be given together".into(),
            ));
        }
        self.dedup.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Resolved configuration with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn execution(&self) -> Execution {
        if self.workers == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    PipelineConfig::from_toml(&content, base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: StageName,
    pub input: u64,
    pub kept: u64,
    pub dropped: u64,
    pub drop_reasons: BTreeMap<ReasonCode, u64>,
    pub kept_file: String,
    pub dropped_file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub status: RunStatus,
    pub seed: u64,
    pub input_documents: u64,
    pub stages: Vec<StageReport>,
    /// Stage that failed, with its error, when `status` is failed.
    pub failure: Option<(StageName, String)>,
}

pub const REPORT_FILE: &str = "run_report.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
/// Present in the output directory while (and if) a run did not finish.
pub const PARTIAL_MARKER: &str = "PARTIAL";

fn stage_files(index: usize, stage: StageName) -> (String, String) {
    (
        format!("{:02}_{}.kept.jsonl", index + 1, stage.as_str()),
        format!("{:02}_{}.dropped.jsonl", index + 1, stage.as_str()),
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct LoadedModels {
    classifier: Option<QualityClassifier>,
    lm: Option<(NGramModel, Vocabulary, Vec<f64>)>,
}

impl LoadedModels {
    fn load(cfg: &QualityStageConfig) -> Result<Self> {
        let classifier = cfg.classifier.as_ref().map(QualityClassifier::load).transpose()?;
        let lm = match (&cfg.lm, &cfg.vocab, &cfg.calibration) {
            (Some(lm), Some(v), Some(c)) => Some((NGramModel::load(lm)?, Vocabulary::load(v)?, read_calibration(c)?)),
            _ => None,
        };
        Ok(Self { classifier, lm })
    }
}

fn run_stage(
    stage: StageName,
    docs: &[Document],
    cfg: &PipelineConfig,
    models: &LoadedModels,
    exec: Execution,
) -> Result<StageOutput> {
    match stage {
        StageName::Extract => Ok(extract_stage(docs, &cfg.extract, exec)),
        StageName::Quality => {
            let scorer = models.lm.as_ref().map(|(m, v, _)| NGramScorer::new(m, v));
            let qm = QualityModels {
                classifier: models.classifier.as_ref(),
                scorer: scorer.as_ref().map(|s| s as &dyn PerplexityScorer),
                calibration: models.lm.as_ref().map(|(_, _, c)| c.as_slice()),
            };
            quality_stage(docs, &qm, &cfg.quality.policy, cfg.seed, exec)
        }
        StageName::Dedup => dedup_stage(docs, &cfg.dedup, exec),
    }
}

/// Executes the configured stages. On a stage failure the outputs written
/// so far stay in place, the report records the failure and a
/// [`PARTIAL_MARKER`] file is left in the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    if !cfg.input.is_file() {
        return Err(Error::Config(format!("input {} does not exist", cfg.input.display())));
    }
    for p in [&cfg.quality.classifier, &cfg.quality.lm, &cfg.quality.vocab, &cfg.quality.calibration]
        .into_iter()
        .flatten()
    {
        if cfg.stages.contains(&StageName::Quality) && !p.is_file() {
            return Err(Error::Config(format!("model file {} does not exist", p.display())));
        }
    }
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let marker = out.join(PARTIAL_MARKER);
    write_text(&marker, "run in progress or failed; outputs are incomplete\n")?;
    write_text(&out.join(RESOLVED_CONFIG_FILE), &cfg.to_toml())?;

    let exec = cfg.execution();
    with_workers(cfg.workers, || {
        let mut report = RunReport {
            status: RunStatus::Failed,
            seed: cfg.seed,
            input_documents: 0,
            stages: Vec::new(),
            failure: None,
        };
        let result = (|| -> Result<()> {
            let input = read_manifest_with(&cfg.input, exec)?;
            report.input_documents = input.len() as u64;
            let models = if cfg.stages.contains(&StageName::Quality) {
                LoadedModels::load(&cfg.quality)?
            } else {
                LoadedModels { classifier: None, lm: None }
            };
            let mut docs = input.into_documents();
            for (i, &stage) in cfg.stages.iter().enumerate() {
                let output = run_stage(stage, &docs, cfg, &models, exec).map_err(|e| {
                    report.failure = Some((stage, e.to_string()));
                    e
                })?;
                let (kept_file, dropped_file) = stage_files(i, stage);
                write_documents(&output.kept, out.join(&kept_file))?;
                write_documents(&output.dropped, out.join(&dropped_file))?;
                report.stages.push(StageReport {
                    stage,
                    input: docs.len() as u64,
                    kept: output.kept.len() as u64,
                    dropped: output.dropped.len() as u64,
                    drop_reasons: output.drop_counts(),
                    kept_file,
                    dropped_file,
                });
                log::info!("{}: kept {} of {}", stage.as_str(), output.kept.len(), docs.len());
                docs = output.kept;
            }
            Ok(())
        })();
        if result.is_ok() {
            report.status = RunStatus::Complete;
        } else if report.failure.is_none() {
            let e = result.as_ref().err().map(|e| e.to_string()).unwrap_or_default();
            let stage = cfg.stages.get(report.stages.len()).copied().unwrap_or(StageName::Extract);
            report.failure = Some((stage, e));
        }
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write_text(&out.join(REPORT_FILE), &json)?;
        result?;
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
        Ok(report)
    })
}
