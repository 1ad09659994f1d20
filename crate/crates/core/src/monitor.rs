//! Validation-loss bookkeeping: held-out set construction, per-domain
//! comparison tables, loss/metric correlation and a throughput calculator.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, Document};
use crate::error::{Error, Result};
use crate::ngram::{CorpusLoss, Normalization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossRecord {
    pub model_id: String,
    pub checkpoint_tokens: u64,
    pub domain: String,
    pub normalization: Normalization,
    /// Nats per normalization unit.
    pub loss: f64,
}

impl LossRecord {
    pub fn new(
        model_id: impl Into<String>,
        checkpoint_tokens: u64,
        domain: impl Into<String>,
        normalization: Normalization,
        loss: f64,
    ) -> Result<Self> {
        if !(loss >= 0.0) || !loss.is_finite() {
            return Err(Error::Domain(format!("loss must be finite and non-negative, got {loss}")));
        }
        Ok(Self {
            model_id: model_id.into(),
            checkpoint_tokens,
            domain: domain.into(),
            normalization,
            loss,
        })
    }

    /// Record for a published perplexity value.
    pub fn from_perplexity(model_id: &str, domain: &str, normalization: Normalization, ppl: f64) -> Result<Self> {
        if !(ppl >= 1.0) {
            return Err(Error::Domain(format!("perplexity must be at least 1, got {ppl}")));
        }
        Self::new(model_id, 0, domain, normalization, ppl.ln())
    }

    pub fn from_corpus_loss(model_id: &str, checkpoint_tokens: u64, domain: &str, loss: &CorpusLoss) -> Result<Self> {
        Self::new(model_id, checkpoint_tokens, domain, loss.normalization, loss.loss)
    }

    pub fn perplexity(&self) -> f64 {
        self.loss.exp()
    }
}

pub fn read_loss_records(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_loss_records(&content)
}

pub fn parse_loss_records(content: &str) -> Result<Vec<LossRecord>> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r: LossRecord = serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string()))?;
            LossRecord::new(r.model_id, r.checkpoint_tokens, r.domain, r.normalization, r.loss)
                .map_err(|e| Error::parse(i + 1, e.to_string()))
        })
        .collect()
}

pub fn write_loss_records(records: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// held-out sets

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub domain: String,
    pub cutoff: NaiveDate,
    pub documents: CorpusManifest,
}

/// Keeps documents published strictly after `cutoff`. Undated documents
/// are excluded.
pub fn build_eval_set(docs: &[Document], cutoff: NaiveDate, domain: &str) -> Result<EvalSet> {
    let kept: Vec<Document> = docs
        .iter()
        .filter(|d| d.published_at.is_some_and(|p| p > cutoff))
        .cloned()
        .collect();
    Ok(EvalSet {
        domain: domain.to_string(),
        cutoff,
        documents: CorpusManifest::new(kept)?,
    })
}

// ---------------------------------------------------------------------------
// comparison table

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub model_id: String,
    pub perplexities: Vec<f64>,
    /// Geometric mean of `perplexities`.
    pub aggregate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainTable {
    pub normalization: Normalization,
    pub domains: Vec<String>,
    pub rows: Vec<TableRow>,
    /// Per domain column, the row indices holding the minimum.
    pub best: Vec<Vec<usize>>,
    pub best_aggregate: Vec<usize>,
}

/// Builds the model × domain perplexity table. Models and domains keep
/// their order of first appearance; for repeated (model, domain) pairs the
/// latest checkpoint wins.
pub fn domain_table(records: &[LossRecord]) -> Result<DomainTable> {
    let Some(first) = records.first() else {
        return Err(Error::Usage("no loss records".into()));
    };
    if let Some(r) = records.iter().find(|r| r.normalization != first.normalization) {
        return Err(Error::Usage(format!(
            "mixed normalizations: {} and {}",
            first.normalization.as_str(),
            r.normalization.as_str()
        )));
    }
    let mut models: Vec<&str> = Vec::new();
    let mut domains: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(&str, &str), &LossRecord> = BTreeMap::new();
    for r in records {
        if !models.contains(&r.model_id.as_str()) {
            models.push(&r.model_id);
        }
        if !domains.contains(&r.domain.as_str()) {
            domains.push(&r.domain);
        }
        let key = (r.model_id.as_str(), r.domain.as_str());
        match cells.get(&key) {
            Some(prev) if prev.checkpoint_tokens == r.checkpoint_tokens => {
                return Err(Error::Usage(format!(
                    "duplicate record for {} / {} at checkpoint {}",
                    r.model_id, r.domain, r.checkpoint_tokens
                )));
            }
            Some(prev) if prev.checkpoint_tokens > r.checkpoint_tokens => {}
            _ => {
                cells.insert(key, r);
            }
        }
    }
    let mut rows = Vec::with_capacity(models.len());
    for m in &models {
        let mut losses = Vec::with_capacity(domains.len());
        for d in &domains {
            let r = cells
                .get(&(*m, *d))
                .ok_or_else(|| Error::Usage(format!("missing record for model {m} on domain {d}")))?;
            losses.push(r.loss);
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        rows.push(TableRow {
            model_id: m.to_string(),
            perplexities: losses.iter().map(|l| l.exp()).collect(),
            aggregate: mean.exp(),
        });
    }
    let argmin = |vals: Vec<f64>| -> Vec<usize> {
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        (0..vals.len()).filter(|&i| vals[i] == min).collect()
    };
    let best = (0..domains.len())
        .map(|j| argmin(rows.iter().map(|r| r.perplexities[j]).collect()))
        .collect();
    let best_aggregate = argmin(rows.iter().map(|r| r.aggregate).collect());
    Ok(DomainTable {
        normalization: first.normalization,
        domains: domains.iter().map(|d| d.to_string()).collect(),
        rows,
        best,
        best_aggregate,
    })
}

impl DomainTable {
    /// Aligned plain text; the best value in each column carries a `*`.
    pub fn render_text(&self) -> String {
        let mut header = vec!["model".to_string()];
        header.extend(self.domains.iter().cloned());
        header.push("average".into());
        let mut grid = vec![header];
        for (i, r) in self.rows.iter().enumerate() {
            let mut line = vec![r.model_id.clone()];
            for (j, p) in r.perplexities.iter().enumerate() {
                line.push(mark(*p, self.best[j].contains(&i)));
            }
            line.push(mark(r.aggregate, self.best_aggregate.contains(&i)));
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &grid {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }
}

fn mark(v: f64, best: bool) -> String {
    if best {
        format!("{v:.2}*")
    } else {
        format!("{v:.2} ")
    }
}

// ---------------------------------------------------------------------------
// correlation

/// Pearson correlation coefficient.
pub fn correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Usage(format!("series lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Usage("correlation needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Domain("correlation undefined: a series has zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

// ---------------------------------------------------------------------------
// model size and throughput

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub layers: u64,
    pub hidden: u64,
    pub heads: u64,
    pub ffn: u64,
    pub vocab: u64,
    pub seq_len: u64,
    #[serde(default)]
    pub tied_embeddings: bool,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Usage(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

/// Gated-FFN decoder: embeddings, per-layer attention, FFN and two norms,
/// plus the final norm.
pub fn param_count(shape: &ModelShape) -> u64 {
    let h = shape.hidden;
    let embed = shape.vocab * h * if shape.tied_embeddings { 1 } else { 2 };
    let per_layer = 4 * h * h + 3 * h * shape.ffn + 2 * h;
    let final_norm = if shape.layers > 0 { h } else { 0 };
    embed + per_layer * shape.layers + final_norm
}

/// Training FLOPs per token: `6N + 12 * layers * hidden * seq_len`.
pub fn flops_per_token(shape: &ModelShape) -> f64 {
    6.0 * param_count(shape) as f64 + 12.0 * (shape.layers * shape.hidden * shape.seq_len) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub tokens_per_sec_per_gpu: f64,
    pub flops_per_token: f64,
    pub achieved_tflops: f64,
    pub peak_tflops: f64,
    pub mfu: f64,
}

pub fn mfu(shape: &ModelShape, tokens_per_sec_per_gpu: f64, peak_tflops: f64) -> Result<ThroughputReport> {
    shape.validate()?;
    ThroughputReport::new(tokens_per_sec_per_gpu, flops_per_token(shape), peak_tflops)
}

impl ThroughputReport {
    pub fn new(tokens_per_sec_per_gpu: f64, flops_per_token: f64, peak_tflops: f64) -> Result<Self> {
        if !(peak_tflops > 0.0) || !(tokens_per_sec_per_gpu >= 0.0) || !(flops_per_token > 0.0) {
            return Err(Error::Usage("throughput, flops and peak must be positive".into()));
        }
        let achieved_tflops = tokens_per_sec_per_gpu * flops_per_token / 1e12;
        Ok(Self {
            tokens_per_sec_per_gpu,
            flops_per_token,
            achieved_tflops,
            peak_tflops,
            mfu: achieved_tflops / peak_tflops,
        })
    }
}

/// Utilization for an already measured TFLOPS figure.
pub fn utilization(achieved_tflops: f64, peak_tflops: f64) -> Result<f64> {
    if !(peak_tflops > 0.0) || !(achieved_tflops >= 0.0) {
        return Err(Error::Usage("achieved and peak TFLOPS must be positive".into()));
    }
    Ok(achieved_tflops / peak_tflops)
}
