use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Deserialize;

use super::*;
use crate::locrules::{self, BorrowLexicon, Segment};

/// Deterministic in-process backend.
///
/// Translation is whitespace tokenization plus case-insensitive lexicon
/// lookup; unknown tokens and placeholders pass through. Classification
/// applies keyword rules. Training replays a scripted metric sequence, one
/// evaluation per poll.
///
/// Built from `mock:<file>.tsv` (one lexicon, every language pair) or
/// `mock:<file>.toml`:
///
/// ```toml
/// fail_tokens = ["xxboomxx"]       # translate requests containing these fail
///
/// [[translate]]
/// src = "fr"
/// tgt = "ar-lev"
/// lexicon = "fr-ar-lev.tsv"        # relative to this file; optional
/// entries = { bonjour = "مرحبا" }  # optional, added to the lexicon
/// output = "lexicon"               # or "empty"
/// model_id = "mock-fr-ar-lev"      # optional
///
/// [[classifier]]
/// model = "lev-sentiment"
/// task = "sentiment"
/// default = "positive"
/// rules = [{ keyword = "محزن", label = "negative" }]
///
/// [[training]]
/// name = "fr-lev-sentiment"        # matched against the job name; optional
/// task = "sentiment"               # optional
/// metrics = [0.61, 0.66, 0.64]
/// model = "lev-sentiment"          # what the job's checkpoints serve
/// ```
pub struct MockBackend {
    spec: MockSpec,
    lexicons: Vec<BorrowLexicon>,
    origin: String,
    state: Mutex<TrainingState>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MockSpec {
    #[serde(default)]
    fail_tokens: Vec<String>,
    #[serde(default)]
    translate: Vec<TranslateSpec>,
    #[serde(default)]
    classifier: Vec<ClassifierSpec>,
    #[serde(default)]
    training: Vec<TrainingSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TranslateSpec {
    /// `None` matches any language (lexicon-only mocks).
    src: Option<LangTag>,
    tgt: Option<LangTag>,
    #[serde(default)]
    lexicon: Option<PathBuf>,
    #[serde(default)]
    entries: BTreeMap<String, String>,
    #[serde(default)]
    output: OutputMode,
    #[serde(default)]
    model_id: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OutputMode {
    #[default]
    Lexicon,
    Empty,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierSpec {
    model: String,
    task: Task,
    default: String,
    #[serde(default)]
    rules: Vec<Rule>,
    #[serde(default = "default_confidence")]
    confidence: f64,
}

fn default_confidence() -> f64 {
    0.9
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Rule {
    keyword: String,
    label: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingSpec {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    task: Option<Task>,
    metrics: Vec<f64>,
    model: String,
    #[serde(default)]
    fail_reason: Option<String>,
}

#[derive(Default)]
struct TrainingState {
    next_id: u64,
    jobs: BTreeMap<String, MockJob>,
    /// checkpoint id to the model it serves
    checkpoints: HashMap<String, String>,
}

struct MockJob {
    script: usize,
    eval_every: u64,
    polls: usize,
    stopped: Option<(usize, Option<String>)>,
    missing_corpus: Option<String>,
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> BackendError {
    BackendError::Config(format!("{}: {e}", path.display()))
}

impl MockBackend {
    /// Loads `<file>.tsv` or `<file>.toml`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => {
                let lex = BorrowLexicon::from_tsv(&text).map_err(|e| config_err(path, e))?;
                Ok(Self::with_lexicon(lex).origin(path))
            }
            Some("toml") => {
                let base = path.parent().unwrap_or(Path::new("."));
                Self::from_toml(&text, base).map(|m| m.origin(path))
            }
            _ => Err(config_err(path, "mock backend needs a .tsv or .toml file")),
        }
    }

    /// Parses a TOML mock description; lexicon paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let spec: MockSpec = toml::from_str(text).map_err(|e| BackendError::Config(e.to_string()))?;
        let mut lexicons = Vec::with_capacity(spec.translate.len());
        for t in &spec.translate {
            let mut lex = match &t.lexicon {
                Some(p) => {
                    let p = base.join(p);
                    BorrowLexicon::load(&p).map_err(|e| config_err(&p, e))?
                }
                None => BorrowLexicon::new(),
            };
            for (k, v) in &t.entries {
                lex.insert(k, v).map_err(BackendError::Config)?;
            }
            lexicons.push(lex);
        }
        for c in &spec.classifier {
            let classes = task_classes(c.task);
            for l in std::iter::once(&c.default).chain(c.rules.iter().map(|r| &r.label)) {
                if !classes.contains(&l.as_str()) {
                    return Err(BackendError::Config(format!("label `{l}` is not a {} class", c.task)));
                }
            }
            if !(0.5..=1.0).contains(&c.confidence) {
                return Err(BackendError::Config(format!("confidence {} outside [0.5, 1]", c.confidence)));
            }
        }
        Ok(MockBackend {
            spec,
            lexicons,
            origin: "inline".into(),
            state: Mutex::new(TrainingState::default()),
        })
    }

    /// A translator for every language pair backed by one lexicon.
    pub fn with_lexicon(lexicon: BorrowLexicon) -> Self {
        MockBackend {
            spec: MockSpec {
                translate: vec![TranslateSpec {
                    src: None,
                    tgt: None,
                    lexicon: None,
                    entries: BTreeMap::new(),
                    output: OutputMode::Lexicon,
                    model_id: None,
                }],
                ..Default::default()
            },
            lexicons: vec![lexicon],
            origin: "inline".into(),
            state: Mutex::new(TrainingState::default()),
        }
    }

    fn origin(mut self, path: &Path) -> Self {
        self.origin = path.display().to_string();
        self
    }

    fn resolve_model(&self, id: &str) -> String {
        let st = self.state.lock().expect("mock state");
        st.checkpoints.get(id).cloned().unwrap_or_else(|| id.to_string())
    }

    fn translate_text(lex: &BorrowLexicon, text: &str) -> String {
        text.split_whitespace()
            .map(|tok| {
                locrules::segments(tok)
                    .into_iter()
                    .map(|s| match s {
                        Segment::Text(t) => lex.get(t).unwrap_or(t).to_string(),
                        Segment::Placeholder(n) => locrules::placeholder(n),
                        Segment::Stray(t) => t.to_string(),
                    })
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn tokens(text: &str) -> impl Iterator<Item = &str> {
        text.split_whitespace()
            .map(|t| t.trim_matches(|c: char| !crate::unicode::is_word_char(c)))
            .filter(|t| !t.is_empty())
    }

    fn poll_locked(st: &mut TrainingState, spec: &MockSpec, job_id: &str, advance: bool) -> Result<JobStatus> {
        let job = st
            .jobs
            .get_mut(job_id)
            .ok_or_else(|| BackendError::UnknownJob(job_id.to_string()))?;
        let script = &spec.training[job.script];
        if advance {
            job.polls += 1;
        }
        let mut status = JobStatus {
            job_id: job_id.to_string(),
            state: JobState::Queued,
            step: 0,
            latest_metric: None,
            evals: Vec::new(),
            model_id: None,
            reason: None,
        };
        if job.polls <= 1 && job.stopped.is_none() {
            return Ok(status);
        }
        if let Some(reason) = job.missing_corpus.clone().or_else(|| script.fail_reason.clone()) {
            status.state = JobState::Failed;
            status.reason = Some(reason);
            return Ok(status);
        }
        let m = script.metrics.len();
        let revealed = match &job.stopped {
            Some((n, _)) => *n,
            None => (job.polls - 1).min(m),
        };
        status.evals = (1..=revealed)
            .map(|k| EvalRecord {
                eval_index: k,
                step: k as u64 * job.eval_every,
                metric: script.metrics[k - 1],
                checkpoint: format!("{job_id}/ckpt-{k}"),
            })
            .collect();
        status.step = revealed as u64 * job.eval_every;
        status.latest_metric = status.evals.last().map(|e| e.metric);
        let finished = job.stopped.is_some() || job.polls > m + 1;
        if finished {
            status.state = JobState::Finished;
            let chosen = match &job.stopped {
                Some((_, Some(c))) => Some(c.clone()),
                _ => best_checkpoint(&status.evals),
            };
            status.model_id = chosen;
        } else {
            status.state = JobState::Running;
        }
        let model = script.model.clone();
        for e in &status.evals {
            st.checkpoints.insert(e.checkpoint.clone(), model.clone());
        }
        Ok(status)
    }
}

fn best_checkpoint(evals: &[EvalRecord]) -> Option<String> {
    let mut best: Option<&EvalRecord> = None;
    for e in evals {
        if best.is_none_or(|b| e.metric > b.metric) {
            best = Some(e);
        }
    }
    best.map(|e| e.checkpoint.clone())
}

fn lang_matches(want: &Option<LangTag>, got: &LangTag) -> bool {
    want.as_ref().is_none_or(|w| w == got)
}

impl Backend for MockBackend {
    fn translate(&self, req: &TranslateRequest) -> Result<TranslateResponse> {
        let wanted_model = req.model_id.as_deref().map(|m| self.resolve_model(m));
        let mut pair_known = false;
        let mut chosen = None;
        for (i, t) in self.spec.translate.iter().enumerate() {
            if lang_matches(&t.src, &req.src) && lang_matches(&t.tgt, &req.tgt) {
                pair_known = true;
                let name = t.model_id.clone().unwrap_or_else(|| format!("mock:{}->{}", req.src, req.tgt));
                if wanted_model.as_ref().is_none_or(|w| *w == name) {
                    chosen = Some((i, name));
                    break;
                }
            }
        }
        let (i, model_id) = match chosen {
            Some(c) => c,
            None if pair_known => return Err(BackendError::UnknownModel(req.model_id.clone().unwrap_or_default())),
            None => {
                return Err(BackendError::UnsupportedPair {
                    src: req.src.to_string(),
                    tgt: req.tgt.to_string(),
                })
            }
        };
        if let Some(item) = req
            .items
            .iter()
            .find(|it| self.spec.fail_tokens.iter().any(|f| it.text.contains(f.as_str())))
        {
            return Err(BackendError::Service {
                kind: "model_error".into(),
                detail: format!("cannot translate item `{}`", item.id),
            });
        }
        let spec = &self.spec.translate[i];
        let items = req
            .items
            .iter()
            .map(|it| Translation {
                id: it.id.clone(),
                translation: match spec.output {
                    OutputMode::Lexicon => Self::translate_text(&self.lexicons[i], &it.text),
                    OutputMode::Empty => String::new(),
                },
            })
            .collect();
        Ok(TranslateResponse { items, model_id })
    }

    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse> {
        let c = match &req.model_id {
            Some(m) => {
                let name = self.resolve_model(m);
                self.spec
                    .classifier
                    .iter()
                    .find(|c| c.model == name)
                    .ok_or_else(|| BackendError::UnknownModel(m.clone()))?
            }
            None => self
                .spec
                .classifier
                .iter()
                .find(|c| c.task == req.task)
                .ok_or_else(|| BackendError::UnknownModel(format!("<default {} classifier>", req.task)))?,
        };
        if c.task != req.task {
            return Err(BackendError::InvalidRequest(format!(
                "model `{}` classifies {}, not {}",
                c.model, c.task, req.task
            )));
        }
        let classes = task_classes(c.task);
        let items = req
            .items
            .iter()
            .map(|it| {
                let label = c
                    .rules
                    .iter()
                    .find(|r| Self::tokens(&it.text).any(|t| t == r.keyword))
                    .map(|r| r.label.clone())
                    .unwrap_or_else(|| c.default.clone());
                let probabilities = classes
                    .iter()
                    .map(|k| {
                        let p = if *k == label { c.confidence } else { 1.0 - c.confidence };
                        (k.to_string(), p)
                    })
                    .collect();
                Classification {
                    id: it.id.clone(),
                    label,
                    probabilities,
                }
            })
            .collect();
        Ok(ClassifyResponse {
            items,
            model_id: c.model.clone(),
        })
    }

    fn submit_training_job(&self, job: &TrainingJob) -> Result<String> {
        let script = self
            .spec
            .training
            .iter()
            .position(|t| t.name.as_deref() == Some(job.name.as_str()))
            .or_else(|| {
                self.spec
                    .training
                    .iter()
                    .position(|t| t.name.is_none() && t.task.is_some() && t.task == job.task)
            })
            .ok_or_else(|| BackendError::InvalidRequest(format!("no scripted training for job `{}`", job.name)))?;
        if job.eval_every == 0 {
            return Err(BackendError::InvalidRequest("eval_every must be positive".into()));
        }
        let missing_corpus = job
            .corpora
            .values()
            .find(|p| !Path::new(p).exists())
            .map(|p| format!("cannot read corpus {p}"));
        let mut st = self.state.lock().expect("mock state");
        st.next_id += 1;
        let id = format!("mock-job-{:04}", st.next_id);
        st.jobs.insert(
            id.clone(),
            MockJob {
                script,
                eval_every: job.eval_every,
                polls: 0,
                stopped: None,
                missing_corpus,
            },
        );
        Ok(id)
    }

    fn poll_job(&self, job_id: &str) -> Result<JobStatus> {
        let mut st = self.state.lock().expect("mock state");
        Self::poll_locked(&mut st, &self.spec, job_id, true)
    }

    fn stop_job(&self, job_id: &str, select_checkpoint: Option<&str>) -> Result<JobStatus> {
        let mut st = self.state.lock().expect("mock state");
        let current = Self::poll_locked(&mut st, &self.spec, job_id, false)?;
        if current.state.is_terminal() {
            return Ok(current);
        }
        if let Some(c) = select_checkpoint {
            if !current.evals.iter().any(|e| e.checkpoint == c) {
                return Err(BackendError::InvalidRequest(format!("unknown checkpoint `{c}`")));
            }
        }
        let job = st.jobs.get_mut(job_id).expect("checked above");
        job.stopped = Some((current.evals.len(), select_checkpoint.map(str::to_string)));
        Self::poll_locked(&mut st, &self.spec, job_id, false)
    }

    fn describe(&self) -> String {
        format!("mock:{}", self.origin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job(name: &str) -> TrainingJob {
        TrainingJob {
            name: name.into(),
            kind: JobKind::Classifier,
            task: Some(Task::Sentiment),
            corpora: BTreeMap::new(),
            pipeline: crate::textprep::presets::osb_clean(),
            eval_every: 100,
            monitored_metric: "macro_f1".into(),
            seed: 1,
            hyperparams: BTreeMap::new(),
        }
    }

    const SPEC: &str = r#"
[[translate]]
src = "fr"
tgt = "ar-lev"
entries = { bonjour = "مرحبا" }

[[classifier]]
model = "m"
task = "sentiment"
default = "positive"
rules = [{ keyword = "محزن", label = "negative" }]

[[training]]
name = "t"
metrics = [0.5, 0.7, 0.6]
model = "m"
"#;

    #[test]
    fn scripted_training_reveals_one_eval_per_poll() {
        let m = MockBackend::from_toml(SPEC, Path::new(".")).unwrap();
        let id = m.submit_training_job(&job("t")).unwrap();
        let states: Vec<(JobState, usize)> = (0..6)
            .map(|_| {
                let s = m.poll_job(&id).unwrap();
                (s.state, s.evals.len())
            })
            .collect();
        assert_eq!(
            states,
            vec![
                (JobState::Queued, 0),
                (JobState::Running, 1),
                (JobState::Running, 2),
                (JobState::Running, 3),
                (JobState::Finished, 3),
                (JobState::Finished, 3)
            ]
        );
        let s = m.poll_job(&id).unwrap();
        assert_eq!(s.model_id.as_deref(), Some("mock-job-0001/ckpt-2"));
        assert!(matches!(m.poll_job("nope"), Err(BackendError::UnknownJob(_))));
    }

    #[test]
    fn checkpoints_serve_the_scripted_model() {
        let m = MockBackend::from_toml(SPEC, Path::new(".")).unwrap();
        let id = m.submit_training_job(&job("t")).unwrap();
        m.poll_job(&id).unwrap();
        m.poll_job(&id).unwrap();
        let s = m.stop_job(&id, Some(&format!("{id}/ckpt-1"))).unwrap();
        assert_eq!(s.state, JobState::Finished);
        let req = ClassifyRequest {
            items: vec![TextItem::new("1", "محزن جدا")],
            task: Task::Sentiment,
            model_id: s.model_id.clone(),
        };
        assert_eq!(m.classify(&req).unwrap().items[0].label, "negative");
    }
}
