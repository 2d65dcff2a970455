//! Translation/classification backend contract.
//!
//! [`Backend`] is implemented by [`MockBackend`] (hermetic, driven by a
//! lexicon or a TOML script) and [`HttpBackend`] (JSON over HTTP to the
//! model service). [`wire`] holds the server side of the protocol so any
//! backend can be exposed over HTTP, which is how the client is tested.
//!
//! Endpoints, all with UTF-8 JSON bodies:
//!
//! | method | path            | body               | reply              |
//! |--------|-----------------|--------------------|--------------------|
//! | POST   | `/v1/translate` | [`TranslateRequest`] | [`TranslateResponse`] |
//! | POST   | `/v1/classify`  | [`ClassifyRequest`]  | [`ClassifyResponse`]  |
//! | POST   | `/v1/train`     | [`TrainingJob`]      | [`JobSubmitted`]      |
//! | GET    | `/v1/jobs/<id>` |                      | [`JobStatus`]         |
//! | POST   | `/v1/jobs/<id>` | [`JobAction`]        | [`JobStatus`]         |
//!
//! Errors are `{"error": {"kind": ..., "detail": ...}}` with `kind` one of
//! the strings from [`BackendError::kind`].

mod http;
mod mock;
pub mod wire;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LangTag, Task};
use crate::textprep::PipelineSpec;

pub use http::{HttpBackend, Method, Transport, UreqTransport};
pub use mock::MockBackend;

/// Environment variable that overrides the configured endpoint.
pub const ENDPOINT_ENV: &str = "LOCMT_BACKEND";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unsupported language pair {src} -> {tgt}")]
    UnsupportedPair { src: String, tgt: String },
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("service error ({kind}): {detail}")]
    Service { kind: String, detail: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Wire name of the error kind.
    pub fn kind(&self) -> &str {
        match self {
            BackendError::Timeout(_) => "timeout",
            BackendError::Transport(_) => "transport",
            BackendError::UnsupportedPair { .. } => "unsupported_pair",
            BackendError::UnknownJob(_) => "unknown_job",
            BackendError::UnknownModel(_) => "unknown_model",
            BackendError::InvalidRequest(_) => "invalid_request",
            BackendError::InvalidResponse(_) => "invalid_response",
            BackendError::Service { kind, .. } => kind,
            BackendError::Config(_) => "config",
        }
    }

    /// Whether a retry of an idempotent request could succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout(_) | BackendError::Transport(_) => true,
            BackendError::Service { kind, .. } => kind == "unavailable" || kind == "internal",
            _ => false,
        }
    }

    pub fn detail(&self) -> String {
        match self {
            BackendError::Service { detail, .. } => detail.clone(),
            other => other.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, BackendError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: 200,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt` (1-based; the first attempt has none).
    pub fn delay(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            Duration::ZERO
        } else {
            Duration::from_millis(self.backoff_ms.saturating_mul(1 << (attempt - 2).min(16)))
        }
    }
}

fn default_timeout() -> f64 {
    30.0
}
fn default_in_flight() -> usize {
    4
}
fn default_batch() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// `http(s)://host:port` or `mock:<path>`.
    pub endpoint: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Items per wire request; larger requests are split.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

impl BackendConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        BackendConfig {
            endpoint: endpoint.into(),
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            retry: RetryPolicy::default(),
            batch_size: default_batch(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(BackendError::Config(format!("timeout must be positive, got {}", self.timeout_secs)));
        }
        if self.max_in_flight < 1 {
            return Err(BackendError::Config("max_in_flight must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(BackendError::Config("batch_size must be at least 1".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(BackendError::Config("retry.max_attempts must be at least 1".into()));
        }
        if !(self.endpoint.starts_with("mock:")
            || self.endpoint.starts_with("http://")
            || self.endpoint.starts_with("https://"))
        {
            return Err(BackendError::Config(format!(
                "endpoint `{}` is neither a URL nor mock:<path>",
                self.endpoint
            )));
        }
        Ok(())
    }

    /// Applies endpoint overrides: an explicit flag wins, then the
    /// [`ENDPOINT_ENV`] variable, then the configured value.
    pub fn override_endpoint(&mut self, flag: Option<&str>) {
        if let Some(e) = flag.map(str::to_string).or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|v| !v.is_empty())) {
            self.endpoint = e;
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Opens the backend named by `cfg.endpoint`.
pub fn connect(cfg: &BackendConfig) -> Result<Box<dyn Backend>> {
    cfg.validate()?;
    match cfg.endpoint.strip_prefix("mock:") {
        Some(path) => Ok(Box::new(MockBackend::from_path(std::path::Path::new(path))?)),
        None => Ok(Box::new(HttpBackend::new(
            UreqTransport::new(&cfg.endpoint, cfg.timeout()),
            cfg.clone(),
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextItem {
    pub id: String,
    pub text: String,
}

impl TextItem {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        TextItem {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateRequest {
    pub items: Vec<TextItem>,
    pub src: LangTag,
    pub tgt: LangTag,
    /// Checkpoint to use; the service default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Translation {
    pub id: String,
    pub translation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub items: Vec<Translation>,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub items: Vec<TextItem>,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub id: String,
    pub label: String,
    /// Class name to probability, over all classes of the task.
    pub probabilities: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub items: Vec<Classification>,
    pub model_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Nmt,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingJob {
    /// Experiment name; lets a service (or the mock) tell jobs apart.
    pub name: String,
    pub kind: JobKind,
    /// `sentiment`/`hate` for classifiers; absent for translation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    /// Split name to corpus path or URI.
    pub corpora: BTreeMap<String, String>,
    pub pipeline: PipelineSpec,
    pub eval_every: u64,
    pub monitored_metric: String,
    pub seed: u64,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSubmitted {
    pub job_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Finished,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Finished | JobState::Failed)
    }
}

/// One validation evaluation reported by the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// 1-based position in the job's evaluation sequence.
    pub eval_index: usize,
    pub step: u64,
    pub metric: f64,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub state: JobState,
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latest_metric: Option<f64>,
    /// Every evaluation so far, oldest first.
    #[serde(default)]
    pub evals: Vec<EvalRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Control message for a running job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum JobAction {
    /// Stop training and finish with `select_checkpoint` as the model.
    Stop {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        select_checkpoint: Option<String>,
    },
}

pub trait Backend: Send + Sync {
    fn translate(&self, req: &TranslateRequest) -> Result<TranslateResponse>;
    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse>;
    fn submit_training_job(&self, job: &TrainingJob) -> Result<String>;
    fn poll_job(&self, job_id: &str) -> Result<JobStatus>;
    fn stop_job(&self, job_id: &str, select_checkpoint: Option<&str>) -> Result<JobStatus>;
    /// Short human-readable identity for manifests.
    fn describe(&self) -> String;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn translate(&self, req: &TranslateRequest) -> Result<TranslateResponse> {
        (**self).translate(req)
    }
    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse> {
        (**self).classify(req)
    }
    fn submit_training_job(&self, job: &TrainingJob) -> Result<String> {
        (**self).submit_training_job(job)
    }
    fn poll_job(&self, job_id: &str) -> Result<JobStatus> {
        (**self).poll_job(job_id)
    }
    fn stop_job(&self, job_id: &str, select_checkpoint: Option<&str>) -> Result<JobStatus> {
        (**self).stop_job(job_id, select_checkpoint)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn translate(&self, req: &TranslateRequest) -> Result<TranslateResponse> {
        (**self).translate(req)
    }
    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse> {
        (**self).classify(req)
    }
    fn submit_training_job(&self, job: &TrainingJob) -> Result<String> {
        (**self).submit_training_job(job)
    }
    fn poll_job(&self, job_id: &str) -> Result<JobStatus> {
        (**self).poll_job(job_id)
    }
    fn stop_job(&self, job_id: &str, select_checkpoint: Option<&str>) -> Result<JobStatus> {
        (**self).stop_job(job_id, select_checkpoint)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Class names of `task` in their canonical order (used for tie-breaking).
pub fn task_classes(task: Task) -> [&'static str; 2] {
    let [a, b] = task.labels();
    [a.as_str(), b.as_str()]
}

/// Highest-probability class; the earlier class in canonical order wins ties.
pub fn argmax_label(task: Task, probabilities: &BTreeMap<String, f64>) -> Option<&'static str> {
    let mut best: Option<(&'static str, f64)> = None;
    for c in task_classes(task) {
        let p = *probabilities.get(c)?;
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((c, p));
        }
    }
    best.map(|(c, _)| c)
}

/// Checks that `got` carries exactly the ids of `sent` and returns the
/// items reordered to request order.
pub fn conserve_ids<T: Clone>(sent: &[TextItem], got: &[T], id_of: impl Fn(&T) -> &str) -> Result<Vec<T>> {
    if sent.len() != got.len() {
        return Err(BackendError::InvalidResponse(format!(
            "{} items requested, {} returned",
            sent.len(),
            got.len()
        )));
    }
    let mut index: BTreeMap<&str, &T> = BTreeMap::new();
    for g in got {
        if index.insert(id_of(g), g).is_some() {
            return Err(BackendError::InvalidResponse(format!("id `{}` returned twice", id_of(g))));
        }
    }
    sent.iter()
        .map(|s| {
            index
                .get(s.id.as_str())
                .map(|g| (*g).clone())
                .ok_or_else(|| BackendError::InvalidResponse(format!("id `{}` missing from response", s.id)))
        })
        .collect()
}

/// Validates probabilities and fixes the label to their argmax.
pub fn normalize_classification(task: Task, mut c: Classification) -> Result<Classification> {
    let sum: f64 = c.probabilities.values().sum();
    if c.probabilities.len() != 2 || (sum - 1.0).abs() > 1e-6 || c.probabilities.values().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(BackendError::InvalidResponse(format!(
            "item `{}`: probabilities {:?} are not a distribution over the {} classes",
            c.id, c.probabilities, task
        )));
    }
    c.label = argmax_label(task, &c.probabilities)
        .ok_or_else(|| BackendError::InvalidResponse(format!("item `{}`: classes do not match task {task}", c.id)))?
        .to_string();
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_class_on_ties() {
        let p = BTreeMap::from([("positive".to_string(), 0.5), ("negative".to_string(), 0.5)]);
        assert_eq!(argmax_label(Task::Sentiment, &p), Some("positive"));
        let p = BTreeMap::from([("hate".to_string(), 0.3), ("no_hate".to_string(), 0.7)]);
        assert_eq!(argmax_label(Task::Hate, &p), Some("no_hate"));
    }

    #[test]
    fn backoff_doubles() {
        let r = RetryPolicy {
            max_attempts: 3,
            backoff_ms: 10,
        };
        assert_eq!(r.delay(1), Duration::ZERO);
        assert_eq!(r.delay(2), Duration::from_millis(10));
        assert_eq!(r.delay(3), Duration::from_millis(20));
    }

    #[test]
    fn config_validation() {
        assert!(BackendConfig::new("mock:x.tsv").validate().is_ok());
        assert!(BackendConfig::new("ftp://x").validate().is_err());
        let mut c = BackendConfig::new("http://localhost:1");
        c.max_in_flight = 0;
        assert!(c.validate().is_err());
        c.max_in_flight = 1;
        c.timeout_secs = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn conserve_ids_reorders_and_rejects() {
        let sent = vec![TextItem::new("a", "x"), TextItem::new("b", "y")];
        let got = vec![
            Translation { id: "b".into(), translation: "2".into() },
            Translation { id: "a".into(), translation: "1".into() },
        ];
        let r = conserve_ids(&sent, &got, |t| &t.id).unwrap();
        assert_eq!(r[0].translation, "1");
        let bad = vec![got[0].clone(), got[0].clone()];
        assert!(conserve_ids(&sent, &bad, |t| &t.id).is_err());
    }
}
