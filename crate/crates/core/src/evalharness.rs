//! The three evaluation scenarios, end to end.
//!
//! - `nmt_eval`: translate a parallel test set, score BLEU / ROUGE / F.
//! - `localized_sentiment`: localize a labeled corpus, train a classifier
//!   on it, evaluate on a native external corpus.
//! - `crossdialect_hate`: the same with two target dialects evaluated on one
//!   external corpus, plus the set of messages the two models disagree on.
//!
//! External corpora are never localized; they are already in the target
//! dialect.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, Backend, BackendConfig, BackendError, ClassifyRequest, TextItem};
use crate::corpus::{self, Corpus, CorpusError, CorpusKind, LangTag, LabeledExample, Records, Task};
use crate::exec::{self, Execution};
use crate::locrules::{BorrowLexicon, LocError, LocalizeOptions, Localizer};
use crate::metrics::{self, ClassReport, MetricError, RougeVariant, Smoothing, TranslationScores, Violation};
use crate::textprep::{self, PrepError};
use crate::trainctl::{self, EarlyStopPolicy, ExperimentConfig, ExperimentTask, RunManifest, SplitConfig};

/// (record id, predicted label) pairs.
type Predictions = Vec<(String, String)>;

/// Tolerance every embedded class report is validated at.
pub const REPORT_TOLERANCE: f64 = 0.005;
pub const DEFAULT_TOP_K: usize = 50;

pub const TABLE2_LABEL_NOTE: &str = "The published results table labels the sentiment model \
\"Fr->Ar-Gulf\", while the experiment description trains it on French localized to Levantine. \
This scenario follows the description: French -> Levantine.";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{stage}: {source}")]
    Corpus {
        stage: String,
        #[source]
        source: CorpusError,
    },
    #[error("localizing {stage}: {source}")]
    Localize {
        stage: String,
        #[source]
        source: Box<LocError>,
    },
    #[error("{stage}: {source}")]
    Backend {
        stage: String,
        #[source]
        source: BackendError,
    },
    #[error("training {name} failed ({stage:?}): {error}")]
    Training {
        name: String,
        stage: trainctl::FailureStage,
        error: String,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Pipeline(#[from] PrepError),
    #[error("report for {model} is inconsistent: {detail}")]
    Inconsistent { model: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Whether the failure came from the model service rather than inputs.
    pub fn is_backend(&self) -> bool {
        match self {
            HarnessError::Backend { .. } => true,
            HarnessError::Localize { source, .. } => matches!(**source, LocError::Backend { .. } | LocError::FailureRate { .. }),
            HarnessError::Training { stage, .. } => *stage == trainctl::FailureStage::Backend,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn corpus_err(stage: &str) -> impl FnOnce(CorpusError) -> HarnessError + '_ {
    move |source| HarnessError::Corpus {
        stage: stage.to_string(),
        source,
    }
}

fn backend_err(stage: &str) -> impl FnOnce(BackendError) -> HarnessError + '_ {
    move |source| HarnessError::Backend {
        stage: stage.to_string(),
        source,
    }
}

// -- scenario ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    NmtEval,
    LocalizedSentiment,
    CrossdialectHate,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::NmtEval => "nmt_eval",
            ScenarioKind::LocalizedSentiment => "localized_sentiment",
            ScenarioKind::CrossdialectHate => "crossdialect_hate",
        }
    }

    pub fn required_inputs(self) -> &'static [&'static str] {
        match self {
            ScenarioKind::NmtEval => &["test"],
            _ => &["source", "external"],
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = String;
    /// Accepts the full names and the CLI short forms `nmt`, `sentiment`, `hate`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nmt_eval" | "nmt" => Ok(ScenarioKind::NmtEval),
            "localized_sentiment" | "sentiment" => Ok(ScenarioKind::LocalizedSentiment),
            "crossdialect_hate" | "hate" => Ok(ScenarioKind::CrossdialectHate),
            other => Err(format!("unknown scenario kind `{other}` (expected nmt, sentiment or hate)")),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_eval_every() -> u64 {
    100
}

fn default_split() -> Vec<(String, f64)> {
    vec![("train".into(), 0.8), ("validation".into(), 0.2)]
}

fn default_max_polls() -> u64 {
    10_000
}

/// Training settings shared by the classifiers a scenario trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingTemplate {
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_split")]
    pub split: Vec<(String, f64)>,
    #[serde(default)]
    pub stratified: bool,
    #[serde(default)]
    pub early_stop: EarlyStopPolicy,
    #[serde(default)]
    pub poll_interval_ms: u64,
    #[serde(default = "default_max_polls")]
    pub max_polls: u64,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, serde_json::Value>,
}

impl Default for TrainingTemplate {
    fn default() -> Self {
        TrainingTemplate {
            eval_every: default_eval_every(),
            split: default_split(),
            stratified: false,
            early_stop: EarlyStopPolicy::default(),
            poll_interval_ms: 0,
            max_polls: default_max_polls(),
            hyperparams: BTreeMap::new(),
        }
    }
}

/// A scenario document (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Input name to corpus path; see [`ScenarioKind::required_inputs`].
    pub inputs: BTreeMap<String, PathBuf>,
    /// Target dialects. One for `localized_sentiment`, two for
    /// `crossdialect_hate`; `nmt_eval` reads directions from the corpus.
    #[serde(default)]
    pub targets: Vec<LangTag>,
    pub backend: BackendConfig,
    /// Separate translation service; `backend` is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation_backend: Option<BackendConfig>,
    pub output_dir: PathBuf,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Extra borrowed-word lexicon files, on top of the shipped ones.
    #[serde(default)]
    pub lexicons: Vec<PathBuf>,
    #[serde(default)]
    pub localize: Option<LocalizeOptions>,
    #[serde(default)]
    pub training: TrainingTemplate,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Reads a scenario file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut s = Self::from_toml(&text)?;
        s.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(s)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.inputs.values_mut().for_each(fix);
        self.lexicons.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
        for cfg in std::iter::once(&mut self.backend).chain(self.translation_backend.as_mut()) {
            if let Some(rest) = cfg.endpoint.strip_prefix("mock:") {
                if Path::new(rest).is_relative() {
                    cfg.endpoint = format!("mock:{}", base.join(rest).display());
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        for key in self.kind.required_inputs() {
            if !self.inputs.contains_key(*key) {
                return Err(HarnessError::Config(format!("{} scenario needs input `{key}`", self.kind)));
            }
        }
        let want = match self.kind {
            ScenarioKind::NmtEval => None,
            ScenarioKind::LocalizedSentiment => Some(1),
            ScenarioKind::CrossdialectHate => Some(2),
        };
        if let Some(n) = want {
            if self.targets.len() != n {
                return Err(HarnessError::Config(format!(
                    "{} scenario needs {n} target(s), got {}",
                    self.kind,
                    self.targets.len()
                )));
            }
        }
        if self.top_k < 1 {
            return Err(HarnessError::Config("top_k must be at least 1".into()));
        }
        if self.training.eval_every < 1 {
            return Err(HarnessError::Config("training.eval_every must be at least 1".into()));
        }
        self.backend
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(t) = &self.translation_backend {
            t.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn input(&self, key: &str) -> &Path {
        &self.inputs[key]
    }

    pub fn hash(&self) -> String {
        crate::content_hash(self)
    }
}

// -- reports ----------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDescriptor {
    pub kind: ScenarioKind,
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub backend: String,
}

/// One row of the translation results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRow {
    pub direction: String,
    pub model_id: String,
    pub scores: TranslationScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    /// Target dialect the classifier was trained on.
    pub model: String,
    pub model_id: String,
    pub report: ClassReport,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub manifest: PathBuf,
    pub config_hash: String,
    pub best_eval_index: Option<usize>,
    pub model_id: Option<String>,
    pub evaluations: usize,
    pub stopped_early: bool,
}

impl RunSummary {
    fn of(m: &RunManifest, path: &Path) -> Self {
        RunSummary {
            name: m.name.clone(),
            manifest: path.to_path_buf(),
            config_hash: m.config_hash.clone(),
            best_eval_index: m.best_eval_index,
            model_id: m.model_id.clone(),
            evaluations: m.metric_log.len(),
            stopped_early: m.stopped_early,
        }
    }
}

pub type WordCounts = BTreeMap<String, Vec<(String, u64)>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: ScenarioDescriptor,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub translation: Vec<TranslationRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classification: Vec<ModelReport>,
    /// Model name to class to top-k (token, count), over the external
    /// corpus grouped by predicted label.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub word_frequencies: BTreeMap<String, WordCounts>,
    /// Ids labeled hate by exactly one of the two models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disagreements: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<RunSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub localized: Vec<PathBuf>,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.classification.iter().find(|m| m.model == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let mut s = format!(
            "scenario {} ({})\nseed {}  config {}\nbackend {}\n",
            self.scenario.name,
            self.scenario.kind,
            self.scenario.seed,
            &self.scenario.config_hash[..12.min(self.scenario.config_hash.len())],
            self.scenario.backend
        );
        if !self.translation.is_empty() {
            s += &format!("\n{:<16} {:>8} {:>8} {:>8} {:>6}\n", "model", "BLEU", "ROUGE", "F", "pairs");
            for r in &self.translation {
                s += &format!(
                    "{:<16} {:>8.2} {:>8.2} {:>8.2} {:>6}\n",
                    r.direction, r.scores.bleu.value, r.scores.rouge.value, r.scores.combined.value, r.scores.pairs
                );
            }
            if let Some(r) = self.translation.first() {
                s += &format!(
                    "metrics: {}, {}, {}\n",
                    r.scores.variants.bleu, r.scores.variants.rouge, r.scores.variants.combined
                );
            }
        }
        for m in &self.classification {
            s += &format!("\n{} ({})\n{}", m.model, m.model_id, m.report.render_table());
        }
        if let Some(d) = &self.disagreements {
            s += &format!("\ndisagreements ({}): {}\n", d.len(), d.join(" "));
        }
        for (model, classes) in &self.word_frequencies {
            for (class, words) in classes {
                let head: Vec<String> = words.iter().take(10).map(|(w, c)| format!("{w}:{c}")).collect();
                s += &format!("\ntop words {model} / {class}: {}", head.join(" "));
            }
        }
        if !self.word_frequencies.is_empty() {
            s.push('\n');
        }
        for (k, v) in &self.metadata {
            s += &format!("\n{k}: {v}");
        }
        s.push('\n');
        s
    }

    /// Writes `report.json`, `report.txt` and `index.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let json = dir.join("report.json");
        let txt = dir.join("report.txt");
        fs::write(&json, self.to_json() + "\n").map_err(|e| HarnessError::io(&json, e))?;
        fs::write(&txt, self.render_text()).map_err(|e| HarnessError::io(&txt, e))?;
        let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
        let index = serde_json::json!({
            "scenario": self.scenario,
            "report": "report.json",
            "table": "report.txt",
            "runs": self.runs.iter().map(|r| rel(&r.manifest)).collect::<Vec<_>>(),
            "localized": self.localized.iter().map(|p| rel(p)).collect::<Vec<_>>(),
        });
        let idx = dir.join("index.json");
        fs::write(&idx, serde_json::to_string_pretty(&index).expect("index serializes") + "\n")
            .map_err(|e| HarnessError::io(&idx, e))?;
        Ok(idx)
    }
}

// -- word frequencies -------------------------------------------------------------

/// Per-class top-`k` tokens by count, ties broken lexicographically.
///
/// Texts are split on whitespace as they are; clean them with `osb-clean`
/// first. Tokens in `stopwords` are skipped.
pub fn word_frequencies<S: AsRef<str>>(corpus: &Corpus, k: usize, stopwords: &[S]) -> Result<WordCounts> {
    word_frequencies_with(corpus, k, stopwords, Execution::default())
}

pub fn word_frequencies_with<S: AsRef<str>>(corpus: &Corpus, k: usize, stopwords: &[S], exec: Execution) -> Result<WordCounts> {
    if k < 1 {
        return Err(HarnessError::Config("k must be at least 1".into()));
    }
    let examples = corpus.as_labeled().map_err(corpus_err("word frequencies"))?;
    let stop: HashSet<&str> = stopwords.iter().map(|s| s.as_ref()).collect();
    let counts = exec::map_reduce(
        exec,
        examples,
        |e| {
            let mut m: HashMap<(String, String), u64> = HashMap::new();
            for tok in e.utterance.text.split_whitespace().filter(|t| !stop.contains(t)) {
                *m.entry((e.label.as_str().to_string(), tok.to_string())).or_default() += 1;
            }
            m
        },
        HashMap::new,
        |mut a, b| {
            for (key, n) in b {
                *a.entry(key).or_default() += n;
            }
            a
        },
    );
    let mut by_class: BTreeMap<String, Vec<(String, u64)>> = BTreeMap::new();
    for ((class, tok), n) in counts {
        by_class.entry(class).or_default().push((tok, n));
    }
    for list in by_class.values_mut() {
        list.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        list.truncate(k);
    }
    Ok(by_class)
}

/// Ids one model labels `positive_class` and the other does not.
pub fn disagreements(a: &[(String, String)], b: &[(String, String)], positive_class: &str) -> Vec<String> {
    let flagged = |preds: &[(String, String)]| -> BTreeSet<String> {
        preds
            .iter()
            .filter(|(_, l)| l == positive_class)
            .map(|(id, _)| id.clone())
            .collect()
    };
    let ids_a: BTreeSet<&String> = a.iter().map(|(id, _)| id).collect();
    let ids_b: BTreeSet<&String> = b.iter().map(|(id, _)| id).collect();
    let (fa, fb) = (flagged(a), flagged(b));
    fa.symmetric_difference(&fb)
        .filter(|id| ids_a.contains(id) && ids_b.contains(id))
        .cloned()
        .collect()
}

// -- running ----------------------------------------------------------------------

struct Context<'a> {
    scenario: &'a Scenario,
    backend: &'a dyn Backend,
    translator: &'a dyn Backend,
    exec: Execution,
}

fn lexicon_for(scenario: &Scenario, tgt: &LangTag) -> Result<BorrowLexicon> {
    let mut lex = BorrowLexicon::builtin_for(tgt);
    for p in &scenario.lexicons {
        let extra = BorrowLexicon::load(p).map_err(|source| HarnessError::Localize {
            stage: format!("lexicon {}", p.display()),
            source: Box::new(source),
        })?;
        lex.extend(&extra);
    }
    Ok(lex)
}

fn load(path: &Path, kind: CorpusKind, stage: &str) -> Result<Corpus> {
    corpus::load_corpus(path, kind).map_err(corpus_err(stage))
}

fn require_lang(c: &Corpus, lang: &LangTag, what: &str) -> Result<()> {
    if let Some(e) = c.as_labeled().map_err(corpus_err(what))?.iter().find(|e| &e.utterance.lang != lang) {
        return Err(HarnessError::Precondition(format!(
            "{what} must be written in {lang}; record `{}` is tagged {}",
            e.id(),
            e.utterance.lang
        )));
    }
    Ok(())
}

fn require_task(c: &Corpus, task: Task, what: &str) -> Result<()> {
    if let Some(e) = c.as_labeled().map_err(corpus_err(what))?.iter().find(|e| e.task != task) {
        return Err(HarnessError::Precondition(format!(
            "{what} must hold {task} labels; record `{}` is a {} example",
            e.id(),
            e.task
        )));
    }
    Ok(())
}

fn single_lang(c: &Corpus, what: &str) -> Result<LangTag> {
    let examples = c.as_labeled().map_err(corpus_err(what))?;
    let lang = examples[0].utterance.lang.clone();
    require_lang(c, &lang, what)?;
    Ok(lang)
}

impl Context<'_> {
    fn localize(&self, source: &Corpus, src: &LangTag, tgt: &LangTag) -> Result<(Corpus, PathBuf)> {
        let s = self.scenario;
        let opts = s.localize.clone().unwrap_or_default();
        let localizer = Localizer::new(lexicon_for(s, tgt)?, opts);
        let stage = format!("{} -> {tgt}", source.name());
        let out = localizer
            .localize_corpus(source, src, tgt, self.translator)
            .map_err(|source| HarnessError::Localize {
                stage: stage.clone(),
                source: Box::new(source),
            })?;
        let path = s.output_dir.join("localized").join(format!("{}.jsonl", out.corpus.name()));
        corpus::save_corpus(&out.corpus, &path).map_err(corpus_err(&stage))?;
        Ok((out.corpus, path))
    }

    fn train(&self, task: ExperimentTask, tgt: &LangTag, data: &Path) -> Result<(RunManifest, PathBuf)> {
        let s = self.scenario;
        let t = &s.training;
        let name = format!("{}-{tgt}", s.name);
        let cfg = ExperimentConfig {
            name: name.clone(),
            task,
            corpora: BTreeMap::from([("localized".to_string(), data.to_path_buf())]),
            split: SplitConfig {
                corpus: "localized".into(),
                ratios: t.split.clone(),
                stratified: t.stratified,
            },
            eval_every: t.eval_every,
            early_stop: t.early_stop,
            backend: s.backend.clone(),
            seed: s.seed,
            pipeline: None,
            poll_interval_ms: t.poll_interval_ms,
            max_polls: t.max_polls,
            hyperparams: t.hyperparams.clone(),
        };
        let dir = s.output_dir.join("runs").join(&name);
        let manifest = trainctl::run_experiment_with(&cfg, self.backend, &dir);
        let path = dir.join("manifest.json");
        manifest.save(&path).map_err(|e| HarnessError::Training {
            name: name.clone(),
            stage: trainctl::FailureStage::Validation,
            error: e.to_string(),
        })?;
        if let trainctl::Outcome::Failed { stage, error } = &manifest.outcome {
            return Err(HarnessError::Training {
                name,
                stage: *stage,
                error: error.clone(),
            });
        }
        Ok((manifest, path))
    }

    // Classifies the external corpus (cleaned with osb-clean) and returns
    // (id, predicted label) in corpus order.
    fn classify(&self, task: Task, model_id: &str, external: &[LabeledExample], stage: &str) -> Result<Vec<(String, String)>> {
        let clean = textprep::presets::osb_clean().compile()?;
        let texts: Vec<&str> = external.iter().map(|e| e.utterance.text.as_str()).collect();
        let cleaned = clean.apply_all(&texts, self.exec);
        let req = ClassifyRequest {
            items: external
                .iter()
                .zip(cleaned)
                .map(|(e, t)| TextItem::new(e.id(), t))
                .collect(),
            task,
            model_id: Some(model_id.to_string()),
        };
        let resp = self.backend.classify(&req).map_err(backend_err(stage))?;
        let items = backend::conserve_ids(&req.items, &resp.items, |c| &c.id).map_err(backend_err(stage))?;
        Ok(items.into_iter().map(|c| (c.id, c.label)).collect())
    }

    fn evaluate(
        &self,
        task: Task,
        model: &str,
        model_id: &str,
        external: &Corpus,
    ) -> Result<(ModelReport, WordCounts, Predictions)> {
        let examples = external.as_labeled().map_err(corpus_err("external corpus"))?;
        let preds = self.classify(task, model_id, examples, &format!("classifying external corpus with {model}"))?;
        let truth: Vec<&str> = examples.iter().map(|e| e.label.as_str()).collect();
        let predicted: Vec<&str> = preds.iter().map(|(_, l)| l.as_str()).collect();
        let classes = backend::task_classes(task);
        let report = metrics::classification_report(&truth, &predicted, &classes)?;
        let violations = metrics::validate_report_consistency(&report, REPORT_TOLERANCE);
        if !violations.is_empty() {
            return Err(HarnessError::Inconsistent {
                model: model.to_string(),
                detail: violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
            });
        }
        let freqs = match predicted_corpus(external, &preds)? {
            Some(c) => word_frequencies_with(&c, self.scenario.top_k, &[] as &[&str], self.exec)?,
            None => WordCounts::new(),
        };
        Ok((
            ModelReport {
                model: model.to_string(),
                model_id: model_id.to_string(),
                report,
                violations,
            },
            freqs,
            preds,
        ))
    }

    fn descriptor(&self) -> ScenarioDescriptor {
        ScenarioDescriptor {
            kind: self.scenario.kind,
            name: self.scenario.name.clone(),
            seed: self.scenario.seed,
            config_hash: self.scenario.hash(),
            backend: self.backend.describe(),
        }
    }
}

// External corpus, cleaned with osb-clean, relabeled with predictions.
// Messages that clean down to nothing carry no words and are left out.
fn predicted_corpus(external: &Corpus, preds: &[(String, String)]) -> Result<Option<Corpus>> {
    let clean = textprep::presets::osb_clean().compile()?;
    let examples = external.as_labeled().map_err(corpus_err("external corpus"))?;
    let relabeled = examples
        .iter()
        .zip(preds)
        .filter(|(e, _)| !clean.apply(&e.utterance.text).trim().is_empty())
        .map(|(e, (_, label))| {
            let mut e = e.clone();
            e.utterance.text = clean.apply(&e.utterance.text);
            e.label = label
                .parse()
                .map_err(|m: String| HarnessError::Backend {
                    stage: "classifying external corpus".into(),
                    source: BackendError::InvalidResponse(m),
                })?;
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    if relabeled.is_empty() {
        return Ok(None);
    }
    Corpus::new(&format!("{}-predicted", external.name()), Records::Labeled(relabeled))
        .map(Some)
        .map_err(corpus_err("external corpus"))
}

/// Scenario (1): translation quality per language direction.
pub fn run_nmt_eval(scenario: &Scenario, translator: &dyn Backend) -> Result<EvalReport> {
    let ctx = Context {
        scenario,
        backend: translator,
        translator,
        exec: Execution::default(),
    };
    let test = load(scenario.input("test"), CorpusKind::Parallel, "test corpus")?;
    let pairs = test.as_parallel().map_err(corpus_err("test corpus"))?;
    let mut directions: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        directions
            .entry((p.source.lang.to_string(), p.target.lang.to_string()))
            .or_default()
            .push(i);
    }
    let clean = textprep::presets::nmt_clean().compile()?;
    let mut rows = Vec::new();
    for ((src, tgt), idx) in directions {
        let (src_tag, tgt_tag): (LangTag, LangTag) = (
            src.parse().map_err(corpus_err("test corpus"))?,
            tgt.parse().map_err(corpus_err("test corpus"))?,
        );
        let localizer = Localizer::new(
            lexicon_for(scenario, &tgt_tag)?,
            scenario.localize.clone().unwrap_or_default(),
        );
        let sources: Vec<&str> = idx.iter().map(|&i| pairs[i].source.text.as_str()).collect();
        let stage = format!("{src} -> {tgt}");
        let hyps = localizer
            .localize_texts(&sources, &src_tag, &tgt_tag, ctx.translator)
            .into_iter()
            .zip(&idx)
            .map(|(r, &i)| {
                r.map_err(|source| HarnessError::Localize {
                    stage: format!("{stage}, pair {}", pairs[i].pair_id),
                    source: Box::new(LocError::Backend {
                        context: pairs[i].pair_id.clone(),
                        src: src_tag.clone(),
                        tgt: tgt_tag.clone(),
                        source: Box::new(source),
                    }),
                })
            })
            .collect::<Result<Vec<String>>>()?;
        let refs: Vec<String> = idx.iter().map(|&i| pairs[i].target.text.clone()).collect();
        let scores = metrics::score_translations(&hyps, &refs, &clean, Smoothing::default(), RougeVariant::default(), ctx.exec)?;
        rows.push(TranslationRow {
            direction: stage,
            model_id: translator.describe(),
            scores,
        });
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("tokenization".into(), "nmt-clean".into());
    Ok(EvalReport {
        scenario: ctx.descriptor(),
        translation: rows,
        classification: Vec::new(),
        word_frequencies: BTreeMap::new(),
        disagreements: None,
        runs: Vec::new(),
        localized: Vec::new(),
        metadata,
    })
}

/// Scenario (2): localize, train, evaluate on the native external corpus.
pub fn run_localized_sentiment(scenario: &Scenario, backend: &dyn Backend, translator: &dyn Backend) -> Result<EvalReport> {
    let ctx = Context {
        scenario,
        backend,
        translator,
        exec: Execution::default(),
    };
    let tgt = &scenario.targets[0];
    let source = load(scenario.input("source"), CorpusKind::Labeled, "source corpus")?;
    let external = load(scenario.input("external"), CorpusKind::Labeled, "external corpus")?;
    require_task(&source, Task::Sentiment, "source corpus")?;
    require_task(&external, Task::Sentiment, "external corpus")?;
    require_lang(&external, tgt, "external corpus")?;
    let src = single_lang(&source, "source corpus")?;

    let (_, localized_path) = ctx.localize(&source, &src, tgt)?;
    let (run, manifest_path) = ctx.train(ExperimentTask::Sentiment, tgt, &localized_path)?;
    let model_id = run.model_id.clone().expect("completed runs carry a model");
    let (report, freqs, _) = ctx.evaluate(Task::Sentiment, &tgt.to_string(), &model_id, &external)?;

    let mut metadata = BTreeMap::new();
    metadata.insert("direction".into(), format!("{src} -> {tgt}"));
    metadata.insert("table_label_note".into(), TABLE2_LABEL_NOTE.into());
    metadata.insert("external_corpus".into(), external.name().to_string());
    Ok(EvalReport {
        scenario: ctx.descriptor(),
        translation: Vec::new(),
        word_frequencies: BTreeMap::from([(report.model.clone(), freqs)]),
        classification: vec![report],
        disagreements: None,
        runs: vec![RunSummary::of(&run, &manifest_path)],
        localized: vec![localized_path],
        metadata,
    })
}

/// Scenario (3): two dialect classifiers on one native external corpus.
pub fn run_crossdialect_hate(scenario: &Scenario, backend: &dyn Backend, translator: &dyn Backend) -> Result<EvalReport> {
    let ctx = Context {
        scenario,
        backend,
        translator,
        exec: Execution::default(),
    };
    let source = load(scenario.input("source"), CorpusKind::Labeled, "source corpus")?;
    let external = load(scenario.input("external"), CorpusKind::Labeled, "external corpus")?;
    require_task(&source, Task::Hate, "source corpus")?;
    require_task(&external, Task::Hate, "external corpus")?;
    let external_lang = single_lang(&external, "external corpus")?;
    if !scenario.targets.contains(&external_lang) {
        return Err(HarnessError::Precondition(format!(
            "external corpus is in {external_lang}, which is not one of the targets"
        )));
    }
    let src = single_lang(&source, "source corpus")?;

    let mut reports = Vec::new();
    let mut freqs = BTreeMap::new();
    let mut runs = Vec::new();
    let mut localized = Vec::new();
    let mut predictions = Vec::new();
    for tgt in &scenario.targets {
        let (_, path) = ctx.localize(&source, &src, tgt)?;
        let (run, manifest_path) = ctx.train(ExperimentTask::Hate, tgt, &path)?;
        let model_id = run.model_id.clone().expect("completed runs carry a model");
        let (report, f, preds) = ctx.evaluate(Task::Hate, &tgt.to_string(), &model_id, &external)?;
        freqs.insert(report.model.clone(), f);
        reports.push(report);
        runs.push(RunSummary::of(&run, &manifest_path));
        localized.push(path);
        predictions.push(preds);
    }
    let disagree = disagreements(&predictions[0], &predictions[1], "hate");

    let mut metadata = BTreeMap::new();
    metadata.insert("source".into(), src.to_string());
    metadata.insert("external_corpus".into(), format!("{} ({external_lang})", external.name()));
    Ok(EvalReport {
        scenario: ctx.descriptor(),
        translation: Vec::new(),
        classification: reports,
        word_frequencies: freqs,
        disagreements: Some(disagree),
        runs,
        localized,
        metadata,
    })
}

/// Runs a scenario against the backends it names and writes its report.
pub fn run_scenario(scenario: &Scenario) -> Result<EvalReport> {
    scenario.validate()?;
    let stage = |what: &str| format!("connecting to {what}");
    let backend = backend::connect(&scenario.backend).map_err(backend_err(&stage("backend")))?;
    let translator = match &scenario.translation_backend {
        Some(cfg) => Some(backend::connect(cfg).map_err(backend_err(&stage("translation backend")))?),
        None => None,
    };
    let translator: &dyn Backend = translator.as_deref().unwrap_or(&*backend);
    let report = run_scenario_with(scenario, &*backend, translator)?;
    report.write(&scenario.output_dir)?;
    Ok(report)
}

pub fn run_scenario_with(scenario: &Scenario, backend: &dyn Backend, translator: &dyn Backend) -> Result<EvalReport> {
    match scenario.kind {
        ScenarioKind::NmtEval => run_nmt_eval(scenario, translator),
        ScenarioKind::LocalizedSentiment => run_localized_sentiment(scenario, backend, translator),
        ScenarioKind::CrossdialectHate => run_crossdialect_hate(scenario, backend, translator),
    }
}
