//! Data-mixture planning: a constant stage-1 composition with repetition
//! caps and a stage-2 schedule that ramps one source linearly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hashing::{derive, unit_f64};

pub const DEFAULT_REPETITION_CAP: u32 = 5;
const WEIGHT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    pub available_tokens: u64,
    pub weight: f64,
}

impl SourceSpec {
    pub fn new(name: impl Into<String>, available_tokens: u64, weight: f64) -> Self {
        Self {
            name: name.into(),
            available_tokens,
            weight,
        }
    }
}

/// Probabilities move linearly from `start` (at `first_step`) to `end`
/// (at `last_step`), both inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSegment {
    pub first_step: u64,
    pub last_step: u64,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl PlanSegment {
    fn row(&self, step: u64) -> Vec<f64> {
        if step == self.first_step || self.first_step == self.last_step {
            return self.start.clone();
        }
        if step == self.last_step {
            return self.end.clone();
        }
        let f = (step - self.first_step) as f64 / (self.last_step - self.first_step) as f64;
        self.start
            .iter()
            .zip(&self.end)
            .map(|(a, b)| a + (b - a) * f)
            .collect()
    }

    fn steps(&self) -> u64 {
        self.last_step - self.first_step + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSource {
    pub name: String,
    pub available_tokens: u64,
    /// Weight requested in the input, before any clamping.
    pub requested_weight: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub sources: Vec<PlanSource>,
    pub steps: u64,
    pub tokens_per_step: u64,
    pub repetition_cap: u32,
    pub segments: Vec<PlanSegment>,
    /// Expected tokens drawn from each source over the whole plan.
    pub expected_draws: Vec<f64>,
}

impl MixturePlan {
    pub fn source_names(&self) -> Vec<&str> {
        self.sources.iter().map(|s| s.name.as_str()).collect()
    }

    /// Probability row for step `t` (0-indexed).
    pub fn row(&self, step: u64) -> Result<Vec<f64>> {
        self.segments
            .iter()
            .find(|s| (s.first_step..=s.last_step).contains(&step))
            .map(|s| s.row(step))
            .ok_or_else(|| Error::Usage(format!("step {step} outside plan of {} steps", self.steps)))
    }

    /// Materialized `steps × sources` matrix.
    pub fn per_step_probs(&self) -> Vec<Vec<f64>> {
        self.segments
            .iter()
            .flat_map(|s| (s.first_step..=s.last_step).map(move |t| s.row(t)))
            .collect()
    }

    /// Average probability of each source over all steps.
    pub fn mean_probs(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.sources.len()];
        for seg in &self.segments {
            let n = seg.steps() as f64;
            for (i, a) in acc.iter_mut().enumerate() {
                *a += (seg.start[i] + seg.end[i]) / 2.0 * n;
            }
        }
        acc.iter().map(|a| a / self.steps as f64).collect()
    }

    /// Expected repetitions per source (`expected_draws / available`).
    pub fn repetitions(&self) -> Vec<f64> {
        self.expected_draws
            .iter()
            .zip(&self.sources)
            .map(|(d, s)| if s.available_tokens == 0 { 0.0 } else { d / s.available_tokens as f64 })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(content: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(content).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Checks segment coverage and that every row endpoint sums to 1.
    pub fn validate(&self) -> Result<()> {
        let k = self.sources.len();
        let mut next = 0;
        for seg in &self.segments {
            if seg.first_step != next || seg.last_step < seg.first_step {
                return Err(Error::Integrity(format!("segments do not tile steps at {next}")));
            }
            for row in [&seg.start, &seg.end] {
                if row.len() != k {
                    return Err(Error::Integrity("row width differs from source count".into()));
                }
                if row.iter().any(|p| !(0.0..=1.0 + WEIGHT_TOLERANCE).contains(p)) {
                    return Err(Error::Integrity("probability outside [0, 1]".into()));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
                    return Err(Error::Integrity(format!("row sums to {sum}")));
                }
            }
            next = seg.last_step + 1;
        }
        if next != self.steps || self.expected_draws.len() != k {
            return Err(Error::Integrity("plan shape mismatch".into()));
        }
        Ok(())
    }

    fn expected_from_segments(&self) -> Vec<f64> {
        self.mean_probs()
            .iter()
            .map(|p| p * self.steps as f64 * self.tokens_per_step as f64)
            .collect()
    }
}

fn check_weights(sources: &[SourceSpec]) -> Result<()> {
    if sources.is_empty() {
        return Err(Error::Usage("no sources given".into()));
    }
    for s in sources {
        if !(0.0..=1.0).contains(&s.weight) {
            return Err(Error::Usage(format!("weight of {} outside [0, 1]: {}", s.name, s.weight)));
        }
    }
    let mut names: Vec<&str> = sources.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Usage(format!("duplicate source {}", w[0])));
    }
    let sum: f64 = sources.iter().map(|s| s.weight).sum();
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::Usage(format!("weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Clamps weights so no source is drawn more than `cap` times its size,
/// handing the excess to the unclamped sources in proportion to their
/// weights until nothing changes.
pub fn clamp_weights(sources: &[SourceSpec], total_tokens: u64, cap: u32) -> Result<(Vec<f64>, Vec<bool>)> {
    let total = total_tokens as f64;
    let limits: Vec<f64> = sources
        .iter()
        .map(|s| cap as f64 * s.available_tokens as f64 / total)
        .collect();
    let capacity: f64 = sources.iter().map(|s| cap as f64 * s.available_tokens as f64).sum();
    if capacity < total {
        return Err(Error::Planning(format!(
            "repetition cap {cap} allows at most {capacity} of {total_tokens} tokens (shortfall {})",
            total - capacity
        )));
    }
    let mut weights: Vec<f64> = sources.iter().map(|s| s.weight).collect();
    let mut clamped = vec![false; sources.len()];
    loop {
        let mut changed = false;
        for i in 0..weights.len() {
            if !clamped[i] && weights[i] > limits[i] {
                weights[i] = limits[i];
                clamped[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let fixed: f64 = (0..weights.len()).filter(|&i| clamped[i]).map(|i| weights[i]).sum();
        let free: f64 = (0..weights.len()).filter(|&i| !clamped[i]).map(|i| sources[i].weight).sum();
        if free <= 0.0 {
            return Err(Error::Planning(format!(
                "no unclamped source with positive weight can absorb {:.6} of the mixture",
                1.0 - fixed
            )));
        }
        for i in 0..weights.len() {
            if !clamped[i] {
                weights[i] = sources[i].weight / free * (1.0 - fixed);
            }
        }
    }
    Ok((weights, clamped))
}

/// Constant composition over `total_tokens`, as a single step.
pub fn build_stage1_plan(sources: &[SourceSpec], total_tokens: u64, repetition_cap: u32) -> Result<MixturePlan> {
    check_weights(sources)?;
    if total_tokens == 0 {
        return Err(Error::Usage("total_tokens must be at least 1".into()));
    }
    if repetition_cap == 0 {
        return Err(Error::Usage("repetition_cap must be positive".into()));
    }
    let (weights, clamped) = clamp_weights(sources, total_tokens, repetition_cap)?;
    let expected_draws = sources
        .iter()
        .zip(&weights)
        .zip(&clamped)
        .map(|((s, w), &c)| {
            if c {
                repetition_cap as f64 * s.available_tokens as f64
            } else {
                w * total_tokens as f64
            }
        })
        .collect();
    let plan = MixturePlan {
        sources: plan_sources(sources, &clamped),
        steps: 1,
        tokens_per_step: total_tokens,
        repetition_cap,
        segments: vec![PlanSegment {
            first_step: 0,
            last_step: 0,
            start: weights.clone(),
            end: weights,
        }],
        expected_draws,
    };
    plan.validate()?;
    Ok(plan)
}

fn plan_sources(sources: &[SourceSpec], clamped: &[bool]) -> Vec<PlanSource> {
    sources
        .iter()
        .zip(clamped)
        .map(|(s, &c)| PlanSource {
            name: s.name.clone(),
            available_tokens: s.available_tokens,
            requested_weight: s.weight,
            clamped: c,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Params {
    /// Source whose share is ramped.
    pub stem: SourceSpec,
    pub stem_ratio_start: f64,
    pub stem_ratio_end: f64,
    pub steps: u64,
    #[serde(default)]
    pub tokens_per_step: u64,
    #[serde(default = "default_cap")]
    pub repetition_cap: u32,
}

fn default_cap() -> u32 {
    DEFAULT_REPETITION_CAP
}

/// Ramps the ramped source from `stem_ratio_start` to `stem_ratio_end`
/// over `steps`; the main sources share the rest in proportion to their
/// weights. The ramped source's own `weight` field is ignored.
///
/// When `tokens_per_step > 0`, a plan that would draw any source more than
/// `repetition_cap` times is rejected.
pub fn build_stage2_plan(main: &[SourceSpec], params: &Stage2Params) -> Result<MixturePlan> {
    check_weights(main)?;
    let (a, b) = (params.stem_ratio_start, params.stem_ratio_end);
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        return Err(Error::Usage(format!("stem ratios must lie in [0, 1], got {a} and {b}")));
    }
    if params.steps == 0 {
        return Err(Error::Usage("steps must be at least 1".into()));
    }
    if main.iter().any(|s| s.name == params.stem.name) {
        return Err(Error::Usage(format!("{} is both a main and the ramped source", params.stem.name)));
    }
    let row = |stem: f64| -> Vec<f64> {
        let mut r: Vec<f64> = main.iter().map(|s| s.weight * (1.0 - stem)).collect();
        r.push(stem);
        r
    };
    let end = if params.steps == 1 { a } else { b };
    let mut specs = main.to_vec();
    specs.push(params.stem.clone());
    let mut plan = MixturePlan {
        sources: plan_sources(&specs, &vec![false; specs.len()]),
        steps: params.steps,
        tokens_per_step: params.tokens_per_step,
        repetition_cap: params.repetition_cap,
        segments: vec![PlanSegment {
            first_step: 0,
            last_step: params.steps - 1,
            start: row(a),
            end: row(end),
        }],
        expected_draws: Vec::new(),
    };
    plan.expected_draws = plan.expected_from_segments();
    plan.validate()?;
    if params.tokens_per_step > 0 {
        for (s, d) in plan.sources.iter().zip(&plan.expected_draws) {
            let limit = params.repetition_cap as f64 * s.available_tokens as f64;
            if *d > limit * (1.0 + 1e-12) {
                return Err(Error::Planning(format!(
                    "{} would be drawn {d:.0} tokens, above the cap of {limit:.0}",
                    s.name
                )));
            }
        }
    }
    Ok(plan)
}

/// Source index of each of `n` draws. Draw `i` uses the plan row for step
/// `i * steps / n` and a uniform variate derived from `(seed, i)`.
pub fn sample_indices(plan: &MixturePlan, seed: u64, n: usize, exec: Execution) -> Vec<usize> {
    let steps = plan.steps;
    exec.map_range(0..n, |i| {
        let step = ((i as u128 * steps as u128) / n as u128) as u64;
        let row = plan.row(step).expect("step within plan");
        let u = unit_f64(derive(seed, i as u64));
        let mut acc = 0.0;
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // rounding left u above the cumulative sum: last source with mass
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    })
}

pub fn sample_stream(plan: &MixturePlan, seed: u64, n: usize, exec: Execution) -> Vec<String> {
    sample_indices(plan, seed, n, exec)
        .into_iter()
        .map(|i| plan.sources[i].name.clone())
        .collect()
}

/// Sources file read by the command-line front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    #[serde(default)]
    pub total_tokens: u64,
    #[serde(default = "default_cap")]
    pub repetition_cap: u32,
    #[serde(rename = "source")]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub stage2: Option<Stage2Params>,
}

impl MixtureConfig {
    pub fn parse(content: &str) -> Result<Self> {
        toml::from_str(content).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
