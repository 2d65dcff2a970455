//! Training orchestration against a model service.
//!
//! The controller never runs a model. It prepares splits, submits a job,
//! polls it, feeds every reported validation metric through the early
//! stopping policy, tells the service when to stop and which checkpoint to
//! keep, and writes down everything needed to replay the run.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, Backend, BackendConfig, BackendError, EvalRecord, JobKind, JobState, TrainingJob};
use crate::corpus::{self, Corpus, CorpusError, CorpusKind, LabeledExample, ParallelPair, Records, SplitSpec, Task};
use crate::textprep::{PipelineSpec, PrepError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("metric value {0} is not finite")]
    NonFinite(f64),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pipeline(#[from] PrepError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Which side of the run this error belongs to.
    pub fn stage(&self) -> FailureStage {
        match self {
            TrainError::Backend(_) => FailureStage::Backend,
            _ => FailureStage::Validation,
        }
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

// -- early stopping ---------------------------------------------------------------

fn default_patience() -> u32 {
    5
}
fn default_min_delta() -> f64 {
    1e-4
}

/// Stop after `patience` consecutive evaluations that fail to beat the
/// best value so far by more than `min_delta`. Higher is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopPolicy {
    #[serde(default = "default_patience")]
    pub patience: u32,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
}

impl Default for EarlyStopPolicy {
    fn default() -> Self {
        EarlyStopPolicy {
            patience: default_patience(),
            min_delta: default_min_delta(),
        }
    }
}

impl EarlyStopPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(TrainError::Config("early_stop.patience must be at least 1".into()));
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return Err(TrainError::Config(format!(
                "early_stop.min_delta must be a nonnegative number, got {}",
                self.min_delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EarlyStopState {
    /// `None` until the first evaluation.
    pub best_value: Option<f64>,
    /// 1-based; 0 before any evaluation.
    pub best_eval_index: usize,
    pub staleness: u32,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Continue,
    Stop,
}

/// Folds one validation value into the state.
pub fn early_stop_update(state: &EarlyStopState, policy: &EarlyStopPolicy, value: f64) -> Result<(EarlyStopState, Decision)> {
    if !value.is_finite() {
        return Err(TrainError::NonFinite(value));
    }
    let mut next = *state;
    next.evals += 1;
    let improved = state.best_value.is_none_or(|best| value > best + policy.min_delta);
    if improved {
        next.best_value = Some(value);
        next.best_eval_index = next.evals;
        next.staleness = 0;
    } else {
        next.staleness = (state.staleness + 1).min(policy.patience);
    }
    let decision = if next.staleness >= policy.patience {
        Decision::Stop
    } else {
        Decision::Continue
    };
    Ok((next, decision))
}

/// 1-based index of the first maximum.
pub fn first_argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i + 1)
}

// -- configuration ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentTask {
    Nmt,
    Sentiment,
    Hate,
}

impl ExperimentTask {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentTask::Nmt => "nmt",
            ExperimentTask::Sentiment => "sentiment",
            ExperimentTask::Hate => "hate",
        }
    }

    pub fn classifier_task(self) -> Option<Task> {
        match self {
            ExperimentTask::Nmt => None,
            ExperimentTask::Sentiment => Some(Task::Sentiment),
            ExperimentTask::Hate => Some(Task::Hate),
        }
    }

    /// Validation metric the service reports for this kind of model.
    pub fn monitored_metric(self) -> &'static str {
        match self {
            ExperimentTask::Nmt => "combined_f",
            _ => "macro_f1",
        }
    }

    pub fn default_pipeline(self) -> &'static str {
        match self {
            ExperimentTask::Nmt => "nmt-clean",
            _ => "osb-clean",
        }
    }
}

impl FromStr for ExperimentTask {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nmt" => Ok(ExperimentTask::Nmt),
            "sentiment" => Ok(ExperimentTask::Sentiment),
            "hate" => Ok(ExperimentTask::Hate),
            other => Err(format!("unknown task `{other}` (expected nmt, sentiment or hate)")),
        }
    }
}

impl fmt::Display for ExperimentTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which corpus to split, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub corpus: String,
    pub ratios: Vec<(String, f64)>,
    #[serde(default)]
    pub stratified: bool,
}

fn default_poll_interval() -> u64 {
    0
}
fn default_max_polls() -> u64 {
    100_000
}

/// One training run, read from a TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: ExperimentTask,
    /// Corpus name to file path. Relative paths resolve against the config
    /// file's directory.
    pub corpora: BTreeMap<String, PathBuf>,
    pub split: SplitConfig,
    pub eval_every: u64,
    #[serde(default)]
    pub early_stop: EarlyStopPolicy,
    pub backend: BackendConfig,
    pub seed: u64,
    /// Preset name or pipeline file; the task's default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<String>,
    #[serde(default = "default_poll_interval")]
    pub poll_interval_ms: u64,
    #[serde(default = "default_max_polls")]
    pub max_polls: u64,
    /// Passed to the service untouched.
    #[serde(default)]
    pub hyperparams: BTreeMap<String, serde_json::Value>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative corpus paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in self.corpora.values_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(rest) = self.backend.endpoint.strip_prefix("mock:") {
            if Path::new(rest).is_relative() {
                self.backend.endpoint = format!("mock:{}", base.join(rest).display());
            }
        }
        if let Some(p) = &self.pipeline {
            if crate::textprep::presets::by_name(p).is_none() && Path::new(p).is_relative() {
                self.pipeline = Some(base.join(p).display().to_string());
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_every < 1 {
            return Err(TrainError::Config("eval_every must be at least 1".into()));
        }
        if self.max_polls < 1 {
            return Err(TrainError::Config("max_polls must be at least 1".into()));
        }
        self.early_stop.validate()?;
        self.backend.validate()?;
        if !self.corpora.contains_key(&self.split.corpus) {
            return Err(TrainError::Config(format!(
                "split.corpus `{}` is not one of the configured corpora",
                self.split.corpus
            )));
        }
        self.split_spec().validate()?;
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            ratios: self.split.ratios.clone(),
            seed: self.seed,
            stratified: self.split.stratified,
        }
    }

    pub fn pipeline_name(&self) -> &str {
        self.pipeline.as_deref().unwrap_or(self.task.default_pipeline())
    }

    /// SHA-256 over the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        crate::content_hash(self)
    }
}

// -- manifest ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureStage {
    Validation,
    Backend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Completed,
    Failed { stage: FailureStage, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub name: String,
    pub size: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_at: String,
    pub finished_at: String,
}

/// Everything needed to audit and replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub task: ExperimentTask,
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub backend: String,
    pub pipeline: Vec<String>,
    pub monitored_metric: String,
    pub early_stop: EarlyStopPolicy,
    pub splits: Vec<SplitRecord>,
    pub job_id: Option<String>,
    /// Every evaluation the service reported, oldest first.
    pub metric_log: Vec<EvalRecord>,
    pub best_eval_index: Option<usize>,
    pub selected_checkpoint: Option<String>,
    pub model_id: Option<String>,
    pub stopped_early: bool,
    pub outcome: Outcome,
    pub timestamps: Timestamps,
}

impl RunManifest {
    pub fn is_completed(&self) -> bool {
        self.outcome == Outcome::Completed
    }

    pub fn split_size(&self, name: &str) -> Option<usize> {
        self.splits.iter().find(|s| s.name == name).map(|s| s.size)
    }

    /// The manifest with timestamps blanked, for comparing runs.
    pub fn without_timestamps(&self) -> RunManifest {
        RunManifest {
            timestamps: Timestamps {
                started_at: String::new(),
                finished_at: String::new(),
            },
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        }
        fs::write(path, self.to_json() + "\n").map_err(|e| TrainError::io(path, e))
    }
}

// -- running ----------------------------------------------------------------------

// Loads, validates, cleans and splits the corpora; writes the split files.
fn prepare(cfg: &ExperimentConfig, pipeline: &PipelineSpec, work_dir: &Path) -> Result<(Vec<SplitRecord>, BTreeMap<String, String>)> {
    let compiled = pipeline.compile()?;
    let mut job_corpora = BTreeMap::new();
    let mut splits = Vec::new();
    for (name, path) in &cfg.corpora {
        let kind = match cfg.task {
            ExperimentTask::Nmt => CorpusKind::Parallel,
            _ => CorpusKind::Labeled,
        };
        let loaded = corpus::load_corpus(path, kind)?;
        if let Some(task) = cfg.task.classifier_task() {
            if let Some(e) = loaded.as_labeled()?.iter().find(|e| e.task != task) {
                return Err(TrainError::Config(format!(
                    "corpus `{name}` record `{}` is a {} example, expected {task}",
                    e.id(),
                    e.task
                )));
            }
        }
        let cleaned = clean(&loaded, &compiled)?;
        if *name == cfg.split.corpus {
            for (split, part) in corpus::split_corpus(&cleaned, &cfg.split_spec())? {
                let file = work_dir.join("splits").join(format!("{name}-{split}.jsonl"));
                if !part.is_empty() {
                    corpus::save_corpus(&part, &file)?;
                }
                job_corpora.insert(split.clone(), file.display().to_string());
                splits.push(SplitRecord {
                    name: split,
                    size: part.len(),
                    path: file,
                });
            }
        } else {
            let file = work_dir.join("splits").join(format!("{name}.jsonl"));
            corpus::save_corpus(&cleaned, &file)?;
            job_corpora.insert(name.clone(), file.display().to_string());
        }
    }
    Ok((splits, job_corpora))
}

fn clean(c: &Corpus, pipeline: &crate::textprep::CompiledPipeline) -> Result<Corpus> {
    let records = match c.records() {
        Records::Labeled(v) => Records::Labeled(
            v.iter()
                .map(|e| {
                    let mut e: LabeledExample = e.clone();
                    e.utterance.text = pipeline.apply(&e.utterance.text);
                    e
                })
                .collect(),
        ),
        Records::Parallel(v) => Records::Parallel(
            v.iter()
                .map(|p| {
                    let mut p: ParallelPair = p.clone();
                    p.source.text = pipeline.apply(&p.source.text);
                    p.target.text = pipeline.apply(&p.target.text);
                    p
                })
                .collect(),
        ),
    };
    Ok(Corpus::new(c.name(), records)?)
}

struct Progress {
    job_id: Option<String>,
    log: Vec<EvalRecord>,
    stopped_early: bool,
    model_id: Option<String>,
}

fn drive(cfg: &ExperimentConfig, backend: &dyn Backend, job: &TrainingJob, p: &mut Progress) -> Result<()> {
    let job_id = backend.submit_training_job(job)?;
    p.job_id = Some(job_id.clone());
    let mut state = EarlyStopState::default();
    let mut last_state = JobState::Queued;
    for _ in 0..cfg.max_polls {
        let status = backend.poll_job(&job_id)?;
        if status.state < last_state {
            return Err(BackendError::InvalidResponse(format!(
                "job {job_id} went from {last_state:?} back to {:?}",
                status.state
            ))
            .into());
        }
        last_state = status.state;
        if status.evals.len() < p.log.len() || status.evals[..p.log.len()] != p.log[..] {
            return Err(BackendError::InvalidResponse(format!("job {job_id} rewrote its evaluation history")).into());
        }
        for e in &status.evals[p.log.len()..] {
            if e.eval_index != p.log.len() + 1 {
                return Err(BackendError::InvalidResponse(format!(
                    "job {job_id} reported evaluation {} after {}",
                    e.eval_index,
                    p.log.len()
                ))
                .into());
            }
            p.log.push(e.clone());
            let (next, decision) = early_stop_update(&state, &cfg.early_stop, e.metric)?;
            state = next;
            if decision == Decision::Stop && status.state != JobState::Finished {
                let chosen = selected(&p.log).map(|e| e.checkpoint.clone());
                let fin = backend.stop_job(&job_id, chosen.as_deref())?;
                p.stopped_early = true;
                p.model_id = fin.model_id.or(chosen);
                return Ok(());
            }
        }
        match status.state {
            JobState::Finished => {
                p.model_id = selected(&p.log).map(|e| e.checkpoint.clone()).or(status.model_id);
                return Ok(());
            }
            JobState::Failed => {
                let reason = status.reason.unwrap_or_else(|| "no reason given".into());
                return Err(BackendError::Service {
                    kind: "job_failed".into(),
                    detail: format!("job {job_id} failed: {reason}"),
                }
                .into());
            }
            _ => {}
        }
        if cfg.poll_interval_ms > 0 {
            std::thread::sleep(Duration::from_millis(cfg.poll_interval_ms));
        }
    }
    Err(BackendError::Timeout(Duration::from_millis(cfg.poll_interval_ms * cfg.max_polls)).into())
}

fn selected(log: &[EvalRecord]) -> Option<&EvalRecord> {
    let values: Vec<f64> = log.iter().map(|e| e.metric).collect();
    first_argmax(&values).map(|i| &log[i - 1])
}

/// Runs one experiment against `backend`, writing split files under
/// `work_dir`. Failures are reported in the manifest, not as errors.
pub fn run_experiment_with(cfg: &ExperimentConfig, backend: &dyn Backend, work_dir: &Path) -> RunManifest {
    let started_at = crate::timestamp();
    let mut p = Progress {
        job_id: None,
        log: Vec::new(),
        stopped_early: false,
        model_id: None,
    };
    let mut splits = Vec::new();
    let mut steps = Vec::new();
    let result = (|| -> Result<()> {
        cfg.validate()?;
        let pipeline = PipelineSpec::load(cfg.pipeline_name())?;
        steps = pipeline.step_ids().iter().map(|s| s.to_string()).collect();
        let (s, corpora) = prepare(cfg, &pipeline, work_dir)?;
        splits = s;
        let job = TrainingJob {
            name: cfg.name.clone(),
            kind: match cfg.task {
                ExperimentTask::Nmt => JobKind::Nmt,
                _ => JobKind::Classifier,
            },
            task: cfg.task.classifier_task(),
            corpora,
            pipeline,
            eval_every: cfg.eval_every,
            monitored_metric: cfg.task.monitored_metric().into(),
            seed: cfg.seed,
            hyperparams: cfg.hyperparams.clone(),
        };
        drive(cfg, backend, &job, &mut p)?;
        if p.log.is_empty() {
            return Err(BackendError::InvalidResponse("job finished without any evaluation".into()).into());
        }
        Ok(())
    })();
    let best = selected(&p.log);
    RunManifest {
        name: cfg.name.clone(),
        task: cfg.task,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: cfg.clone(),
        backend: backend.describe(),
        pipeline: steps,
        monitored_metric: cfg.task.monitored_metric().into(),
        early_stop: cfg.early_stop,
        splits,
        job_id: p.job_id.clone(),
        best_eval_index: best.map(|e| e.eval_index),
        selected_checkpoint: best.map(|e| e.checkpoint.clone()),
        model_id: if result.is_ok() { p.model_id.clone() } else { None },
        metric_log: p.log.clone(),
        stopped_early: p.stopped_early,
        outcome: match result {
            Ok(()) => Outcome::Completed,
            Err(e) => Outcome::Failed {
                stage: e.stage(),
                error: e.to_string(),
            },
        },
        timestamps: Timestamps {
            started_at,
            finished_at: crate::timestamp(),
        },
    }
}

/// Connects to the configured backend and runs the experiment.
pub fn run_experiment(cfg: &ExperimentConfig, work_dir: &Path) -> RunManifest {
    match backend::connect(&cfg.backend) {
        Ok(b) => run_experiment_with(cfg, &b, work_dir),
        Err(e) => {
            let unreachable = Unreachable(cfg.backend.endpoint.clone(), e);
            run_experiment_with(cfg, &unreachable, work_dir)
        }
    }
}

// Stands in for a backend that could not be opened, so the failure lands
// in the manifest like any other backend error.
struct Unreachable(String, BackendError);

impl Backend for Unreachable {
    fn translate(&self, _: &backend::TranslateRequest) -> backend::Result<backend::TranslateResponse> {
        Err(self.1.clone())
    }
    fn classify(&self, _: &backend::ClassifyRequest) -> backend::Result<backend::ClassifyResponse> {
        Err(self.1.clone())
    }
    fn submit_training_job(&self, _: &TrainingJob) -> backend::Result<String> {
        Err(self.1.clone())
    }
    fn poll_job(&self, _: &str) -> backend::Result<backend::JobStatus> {
        Err(self.1.clone())
    }
    fn stop_job(&self, _: &str, _: Option<&str>) -> backend::Result<backend::JobStatus> {
        Err(self.1.clone())
    }
    fn describe(&self) -> String {
        self.0.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(values: &[f64], policy: EarlyStopPolicy) -> (EarlyStopState, Option<usize>) {
        let mut st = EarlyStopState::default();
        for (i, &v) in values.iter().enumerate() {
            let (next, d) = early_stop_update(&st, &policy, v).unwrap();
            st = next;
            if d == Decision::Stop {
                return (st, Some(i + 1));
            }
        }
        (st, None)
    }

    #[test]
    fn stops_after_patience_non_improving_evals() {
        let policy = EarlyStopPolicy {
            patience: 2,
            min_delta: 0.0,
        };
        let (st, stop) = run(&[0.60, 0.62, 0.61, 0.615], policy);
        assert_eq!(stop, Some(4));
        assert_eq!(st.best_eval_index, 2);
    }

    #[test]
    fn increasing_values_never_stop() {
        let values: Vec<f64> = (0..50).map(|i| i as f64 / 100.0).collect();
        let policy = EarlyStopPolicy {
            patience: 1,
            min_delta: 0.0,
        };
        assert_eq!(run(&values, policy).1, None);
    }

    #[test]
    fn gains_below_min_delta_do_not_count() {
        let policy = EarlyStopPolicy {
            patience: 3,
            min_delta: 0.001,
        };
        let (st, _) = run(&[0.5, 0.5004], policy);
        assert_eq!((st.best_eval_index, st.staleness), (1, 1));
    }

    #[test]
    fn rejects_non_finite_values_and_zero_patience() {
        let st = EarlyStopState::default();
        assert!(early_stop_update(&st, &EarlyStopPolicy::default(), f64::NAN).is_err());
        let bad = EarlyStopPolicy {
            patience: 0,
            min_delta: 0.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn first_argmax_prefers_earliest() {
        assert_eq!(first_argmax(&[0.1, 0.3, 0.3, 0.2]), Some(2));
        assert_eq!(first_argmax(&[]), None);
    }
}
