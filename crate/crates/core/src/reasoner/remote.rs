use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tracing::warn;

use super::rules::{rule_verdict, RuleConfig};
use super::types::{render_prompt, ReasonerRequest, ReasonerVerdict, SourcedVerdict, VerdictSource};
use super::ReasonerError;
use crate::cues::{CueRecord, SizePrototypes};
use crate::geometry::ObjectClass;

pub const ENV_ENDPOINT: &str = "OWL_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "OWL_LLM_API_KEY";
pub const ENV_MODEL: &str = "OWL_LLM_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// First backoff delay; doubled after each failed attempt.
    pub backoff_ms: u64,
    /// Boxes per request.
    pub batch_size: usize,
    /// Concurrent requests.
    pub max_in_flight: usize,
    /// Request/response log, replayable offline.
    pub log_path: Option<PathBuf>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: None,
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 250,
            batch_size: 32,
            max_in_flight: 1,
            log_path: None,
        }
    }
}

impl RemoteConfig {
    /// Environment variables override the file values.
    pub fn with_env(mut self) -> Self {
        if let Ok(v) = std::env::var(ENV_ENDPOINT) {
            self.endpoint = Some(v);
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            self.model = Some(v);
        }
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 || self.batch_size > 32 {
            return Err("batch_size must be in 1..=32".into());
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be >= 1".into());
        }
        if self.timeout_ms == 0 {
            return Err("timeout_ms must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteStats {
    pub requests: usize,
    pub retries: usize,
    /// Boxes answered by the rule table after a remote failure.
    pub fallbacks: usize,
    /// Individual verdicts rejected by the schema gate.
    pub schema_rejections: usize,
}

/// One logged exchange; `key` hashes the prompt and payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub key: String,
    pub request: Value,
    pub response: Option<String>,
}

fn payload(cues: &[CueRecord]) -> Value {
    Value::Array(
        cues.iter()
            .map(|c| {
                json!({
                    "box_id": c.box_index,
                    "class": c.bbox.class.as_str(),
                    "l": c.bbox.l, "w": c.bbox.w, "h": c.bbox.h,
                    "speed": c.speed,
                    "point_count": c.point_count,
                    "mean_intensity": c.mean_intensity,
                    "distance": c.distance,
                    "s_dis": c.s_dis,
                    "s_cons": c.s_cons,
                })
            })
            .collect(),
    )
}

fn request_key(prompt: &str, payload: &Value) -> String {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update([0u8]);
    h.update(payload.to_string().as_bytes());
    hex::encode(h.finalize())
}

/// Parses a response body into per-box verdicts keyed by `box_id`. Entries
/// that violate the schema are dropped and counted.
pub fn parse_verdicts(body: &str, cues: &[CueRecord]) -> Result<(BTreeMap<usize, ReasonerVerdict>, usize), String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
    let arr = v
        .get("verdicts")
        .and_then(Value::as_array)
        .ok_or_else(|| "response lacks a `verdicts` array".to_string())?;
    let dims: BTreeMap<usize, [f64; 3]> = cues.iter().map(|c| (c.box_index, c.bbox.dims())).collect();
    let mut out = BTreeMap::new();
    let mut rejected = 0;
    for item in arr {
        match parse_one(item, &dims) {
            Ok((id, verdict)) => {
                out.insert(id, verdict);
            }
            Err(e) => {
                warn!("reasoner verdict rejected: {e}");
                rejected += 1;
            }
        }
    }
    Ok((out, rejected))
}

fn parse_one(item: &Value, dims: &BTreeMap<usize, [f64; 3]>) -> Result<(usize, ReasonerVerdict), String> {
    let id = item.get("box_id").and_then(Value::as_u64).ok_or("missing box_id")? as usize;
    let d = dims.get(&id).ok_or_else(|| format!("unknown box_id {id}"))?;
    let keep = match item.get("keep") {
        Some(Value::Bool(b)) => *b,
        Some(Value::Number(n)) if n.as_u64() == Some(0) => false,
        Some(Value::Number(n)) if n.as_u64() == Some(1) => true,
        _ => return Err(format!("box {id}: keep must be a boolean or 0/1")),
    };
    let num = |k: &str| item.get(k).and_then(Value::as_f64).ok_or_else(|| format!("box {id}: missing number `{k}`"));
    let class: ObjectClass = item
        .get("class")
        .and_then(Value::as_str)
        .ok_or_else(|| format!("box {id}: missing class"))?
        .parse()
        .map_err(|e| format!("box {id}: {e}"))?;
    let verdict = ReasonerVerdict { keep, s_rea: num("score")?, delta: [num("dl")?, num("dw")?, num("dh")?], cls_new: class };
    verdict.check(*d).map_err(|e| format!("box {id}: {e}"))?;
    Ok((id, verdict))
}

enum Attempt {
    Body(String),
    Retryable(String),
    Fatal(ReasonerError),
}

/// HTTP client for a large-model reasoner with schema gating and a
/// rule-table fallback.
pub struct RemoteReasoner {
    cfg: RemoteConfig,
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    prototypes: SizePrototypes,
    rules: RuleConfig,
    pub stats: RemoteStats,
    log: Option<File>,
}

impl RemoteReasoner {
    /// Fails with [`ReasonerError::Unconfigured`] when no endpoint is set.
    pub fn new(cfg: RemoteConfig, prototypes: SizePrototypes, rules: RuleConfig) -> Result<Self, ReasonerError> {
        cfg.validate().map_err(ReasonerError::Config)?;
        let endpoint = cfg.endpoint.clone().ok_or(ReasonerError::Unconfigured)?;
        let api_key = std::env::var(ENV_API_KEY).ok();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let log = match &cfg.log_path {
            Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
            None => None,
        };
        Ok(Self { cfg, endpoint, api_key, agent, prototypes, rules, stats: RemoteStats::default(), log })
    }

    fn prototype_list(&self) -> Vec<(ObjectClass, [f64; 3])> {
        self.prototypes.sizes.iter().map(|(c, s)| (*c, *s)).collect()
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        match req.send(body.to_string()) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                match status {
                    200..=299 => Attempt::Body(text),
                    401 | 403 => Attempt::Fatal(ReasonerError::Auth(status)),
                    _ => Attempt::Retryable(format!("HTTP {status}")),
                }
            }
            Err(e) => Attempt::Retryable(e.to_string()),
        }
    }

    /// Sends one batch with retries. Returns the raw body of the first
    /// response that parses as a verdict document, the retry count, and
    /// `None` when every attempt failed.
    fn exchange(&self, body: &Value, cues: &[CueRecord]) -> Result<(Option<String>, usize), ReasonerError> {
        let mut delay = self.cfg.backoff_ms;
        let mut retries = 0;
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(delay));
                delay = delay.saturating_mul(2);
                retries += 1;
            }
            match self.attempt(body) {
                Attempt::Body(text) => match parse_verdicts(&text, cues) {
                    Ok(_) => return Ok((Some(text), retries)),
                    Err(e) => warn!("malformed reasoner response: {e}"),
                },
                Attempt::Retryable(e) => warn!("reasoner request failed: {e}"),
                Attempt::Fatal(e) => return Err(e),
            }
        }
        Ok((None, retries))
    }

    pub fn reason(&mut self, req: &ReasonerRequest) -> Result<Vec<SourcedVerdict>, ReasonerError> {
        let protos = self.prototype_list();
        let model = self.cfg.model.clone().unwrap_or_default();
        let batches: Vec<&[CueRecord]> = req.cues.chunks(self.cfg.batch_size).collect();
        let bodies: Vec<(String, Value)> = batches
            .iter()
            .map(|cues| {
                let prompt = render_prompt(req.frame_id, req.sensor_range, cues, &protos);
                let p = payload(cues);
                let key = request_key(&prompt, &p);
                (key, json!({ "model": model, "prompt": prompt, "cue_payload": p }))
            })
            .collect();

        let mut results: Vec<Result<(Option<String>, usize), ReasonerError>> = Vec::with_capacity(bodies.len());
        for group in bodies.iter().zip(&batches).collect::<Vec<_>>().chunks(self.cfg.max_in_flight) {
            let this = &*self;
            let joined: Vec<_> = thread::scope(|s| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|((_, body), cues)| s.spawn(move || this.exchange(body, cues)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("request thread panicked")).collect()
            });
            results.extend(joined);
        }

        let mut out = Vec::with_capacity(req.len());
        for (((key, body), cues), res) in bodies.iter().zip(&batches).zip(results) {
            let (text, retries) = res?;
            self.stats.requests += 1;
            self.stats.retries += retries;
            if let Some(log) = &mut self.log {
                let entry = LogEntry { key: key.clone(), request: body.clone(), response: text.clone() };
                serde_json::to_writer(&mut *log, &entry).map_err(|e| ReasonerError::Io(e.into()))?;
                log.write_all(b"\n")?;
            }
            let parsed = text.as_deref().and_then(|t| parse_verdicts(t, cues).ok());
            out.extend(merge(cues, parsed, VerdictSource::Remote, &self.prototypes, &self.rules, &mut self.stats));
        }
        Ok(out)
    }
}

fn merge(
    cues: &[CueRecord],
    parsed: Option<(BTreeMap<usize, ReasonerVerdict>, usize)>,
    source: VerdictSource,
    prototypes: &SizePrototypes,
    rules: &RuleConfig,
    stats: &mut RemoteStats,
) -> Vec<SourcedVerdict> {
    let (map, rejected) = parsed.unwrap_or_default();
    stats.schema_rejections += rejected;
    cues.iter()
        .map(|c| match map.get(&c.box_index) {
            Some(v) => SourcedVerdict { verdict: *v, source },
            None => {
                stats.fallbacks += 1;
                SourcedVerdict { verdict: rule_verdict(c, prototypes, rules), source: VerdictSource::Fallback }
            }
        })
        .collect()
}

/// Answers requests from a recorded log; unseen requests fall back to rules.
pub struct ReplayReasoner {
    entries: BTreeMap<String, Option<String>>,
    prototypes: SizePrototypes,
    rules: RuleConfig,
    batch_size: usize,
    pub stats: RemoteStats,
}

impl ReplayReasoner {
    pub fn open(path: &Path, batch_size: usize, prototypes: SizePrototypes, rules: RuleConfig) -> Result<Self, ReasonerError> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: LogEntry = serde_json::from_str(&line).map_err(|e| ReasonerError::Log { line: i + 1, message: e.to_string() })?;
            entries.insert(e.key, e.response);
        }
        Ok(Self::from_entries(entries, batch_size, prototypes, rules))
    }

    pub fn from_entries(
        entries: BTreeMap<String, Option<String>>,
        batch_size: usize,
        prototypes: SizePrototypes,
        rules: RuleConfig,
    ) -> Self {
        Self { entries, prototypes, rules, batch_size: batch_size.clamp(1, 32), stats: RemoteStats::default() }
    }

    pub fn reason(&mut self, req: &ReasonerRequest) -> Vec<SourcedVerdict> {
        let protos: Vec<(ObjectClass, [f64; 3])> = self.prototypes.sizes.iter().map(|(c, s)| (*c, *s)).collect();
        let mut out = Vec::with_capacity(req.len());
        for cues in req.cues.chunks(self.batch_size) {
            let prompt = render_prompt(req.frame_id, req.sensor_range, cues, &protos);
            let key = request_key(&prompt, &payload(cues));
            self.stats.requests += 1;
            let parsed = self
                .entries
                .get(&key)
                .and_then(|r| r.as_deref())
                .and_then(|t| parse_verdicts(t, cues).ok());
            out.extend(merge(cues, parsed, VerdictSource::Replay, &self.prototypes, &self.rules, &mut self.stats));
        }
        out
    }
}
