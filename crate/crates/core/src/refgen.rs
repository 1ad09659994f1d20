//! Reference-sample generation through a chat-completion service, with a
//! file-backed offline mode.
//!
//! Requests follow the common `POST {base_url}/chat/completions` shape.
//! Every request and response is appended to an optional JSONL log so a
//! reference set can be traced back to the exact exchanges that made it.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::leakage::{escape_line, unescape_line};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_timeout() -> u64 {
    60
}
fn default_concurrency() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_temperature() -> f64 {
    1.0
}

impl Endpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            token_env: None,
            timeout_secs: default_timeout(),
            max_concurrency: default_concurrency(),
            max_retries: default_retries(),
            backoff_ms: default_backoff(),
            temperature: default_temperature(),
        }
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn token(&self) -> Result<Option<String>> {
        match &self.token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| Error::Config(format!("environment variable {var} is not set"))),
        }
    }
}

/// Where samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    /// Read from a file: one sample per line, newlines escaped.
    Offline(PathBuf),
    /// Query the service; if it cannot be reached, use `fallback` when
    /// given.
    Online {
        endpoint: Endpoint,
        fallback: Option<PathBuf>,
    },
}

/// Replaces `{index}` in the template with the request number.
pub fn render_prompt(template: &str, index: usize) -> String {
    template.replace("{index}", &index.to_string())
}

pub fn request_body(endpoint: &Endpoint, prompt: &str) -> Value {
    json!({
        "model": endpoint.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": endpoint.temperature,
    })
}

/// Extracts `choices[0].message.content`.
pub fn parse_completion(raw: &str) -> Result<String> {
    let bad = |m: &str| Error::Response {
        message: m.to_string(),
        raw: raw.to_string(),
    };
    let v: Value = serde_json::from_str(raw).map_err(|e| bad(&format!("invalid JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| bad("missing choices[0].message.content"))
}

pub fn read_offline(path: &Path, n: usize) -> Result<Vec<String>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let samples: Vec<String> = content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| unescape_line(l).map_err(|m| Error::parse(i + 1, m)))
        .collect::<Result<_>>()?;
    if samples.len() < n {
        return Err(Error::Integrity(format!(
            "{} holds {} samples, {n} requested",
            path.display(),
            samples.len()
        )));
    }
    Ok(samples.into_iter().take(n).collect())
}

pub fn write_samples(samples: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in samples {
        out.push_str(&escape_line(s));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub index: usize,
    pub attempt: u32,
    pub request: Value,
    pub status: Option<u16>,
    pub response: Option<String>,
    pub error: Option<String>,
}

enum Failure {
    /// Worth retrying: connection problems, 429 and 5xx.
    Transient(Error),
    Fatal(Error),
}

fn call(agent: &ureq::Agent, endpoint: &Endpoint, token: Option<&str>, body: &Value) -> (Exchange, std::result::Result<String, Failure>) {
    let mut ex = Exchange {
        index: 0,
        attempt: 0,
        request: body.clone(),
        status: None,
        response: None,
        error: None,
    };
    let mut req = agent.post(endpoint.url()).header("Content-Type", "application/json");
    if let Some(t) = token {
        req = req.header("Authorization", format!("Bearer {t}"));
    }
    let result = match req.send(body.to_string()) {
        Err(e) => Err(Failure::Transient(Error::Transport(format!("{}: {e}", endpoint.url())))),
        Ok(mut resp) => {
            let status = resp.status().as_u16();
            ex.status = Some(status);
            match resp.body_mut().read_to_string() {
                Err(e) => Err(Failure::Transient(Error::Transport(format!("reading response: {e}")))),
                Ok(raw) => {
                    ex.response = Some(raw.clone());
                    if status == 429 || status >= 500 {
                        Err(Failure::Transient(Error::Transport(format!("service returned HTTP {status}"))))
                    } else if status >= 400 {
                        Err(Failure::Fatal(Error::Response {
                            message: format!("HTTP {status}"),
                            raw,
                        }))
                    } else {
                        parse_completion(&raw).map_err(Failure::Fatal)
                    }
                }
            }
        }
    };
    if let Err(Failure::Transient(e) | Failure::Fatal(e)) = &result {
        ex.error = Some(e.to_string());
    }
    (ex, result)
}

fn fetch(endpoint: &Endpoint, template: &str, n: usize, log: &Mutex<Vec<Exchange>>) -> Result<Vec<String>> {
    let token = endpoint.token()?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(endpoint.timeout_secs.max(1))))
        .http_status_as_error(false)
        .build()
        .into();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<String>>>> = Mutex::new((0..n).map(|_| None).collect());
    let workers = endpoint.max_concurrency.clamp(1, n.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let body = request_body(endpoint, &render_prompt(template, i));
                let mut attempt = 0;
                let outcome = loop {
                    let (mut ex, r) = call(&agent, endpoint, token.as_deref(), &body);
                    ex.index = i;
                    ex.attempt = attempt;
                    log.lock().expect("log lock").push(ex);
                    match r {
                        Ok(text) => break Ok(text),
                        Err(Failure::Fatal(e)) => break Err(e),
                        Err(Failure::Transient(e)) if attempt >= endpoint.max_retries => break Err(e),
                        Err(Failure::Transient(_)) => {
                            std::thread::sleep(Duration::from_millis(endpoint.backoff_ms << attempt.min(10)));
                            attempt += 1;
                        }
                    }
                };
                let failed = outcome.is_err();
                results.lock().expect("results lock")[i] = Some(outcome);
                if failed {
                    // stop handing out new work
                    next.store(n, Ordering::SeqCst);
                }
            });
        }
    });
    let mut out = Vec::with_capacity(n);
    for r in results.into_inner().expect("results lock") {
        match r {
            Some(Ok(s)) => out.push(s),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    // only reachable if a failure stopped dispatch, which returned above
    debug_assert_eq!(out.len(), n);
    Ok(out)
}

/// Returns `n` samples in request order. The exchange log (sorted by
/// request index, then attempt) is written to `log_path` even when the
/// run fails.
pub fn request_reference_samples(
    source: &Source,
    template: &str,
    n: usize,
    log_path: Option<&Path>,
) -> Result<Vec<String>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    match source {
        Source::Offline(path) => read_offline(path, n),
        Source::Online { endpoint, fallback } => {
            let log = Mutex::new(Vec::new());
            let result = fetch(endpoint, template, n, &log);
            if let Some(p) = log_path {
                let mut entries = log.into_inner().expect("log lock");
                entries.sort_by_key(|e| (e.index, e.attempt));
                write_log(&entries, p)?;
            }
            match (result, fallback) {
                (Err(Error::Transport(msg)), Some(path)) => {
                    log::warn!("{msg}; using offline samples from {}", path.display());
                    read_offline(path, n)
                }
                (r, _) => r,
            }
        }
    }
}

fn write_log(entries: &[Exchange], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).expect("exchange serializes");
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}
