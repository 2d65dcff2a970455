use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde_json::{json, Value};

use locmt_core::backend::{self, BackendConfig, BackendError};
use locmt_core::corpus::{self, Corpus, CorpusError, CorpusKind, Label, Records, SplitSpec};
use locmt_core::evalharness::{self, HarnessError, Scenario, ScenarioKind};
use locmt_core::exec::Execution;
use locmt_core::locrules::{BorrowLexicon, LocError, LocalizeOptions, Localizer};
use locmt_core::metrics::{self, RougeVariant, Smoothing};
use locmt_core::textprep::{CompiledPipeline, PipelineSpec, PrepError};
use locmt_core::trainctl::{self, ExperimentConfig, FailureStage, Outcome, TrainError};

use crate::manifest::Invocation;
use crate::{Cli, Command, Format, ScenarioCommand};

/// Command failure, split by exit code.
#[derive(Debug, Clone)]
pub enum CliError {
    Invalid(String),
    Backend(String),
}

impl std::error::Error for CliError {}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Backend(m) => f.write_str(m),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Backend(_) => 2,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<PrepError> for CliError {
    fn from(e: PrepError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<metrics::MetricError> for CliError {
    fn from(e: metrics::MetricError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<LocError> for CliError {
    fn from(e: LocError) -> Self {
        match e {
            LocError::Backend { .. } | LocError::FailureRate { .. } => CliError::Backend(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e.stage() {
            FailureStage::Backend => CliError::Backend(e.to_string()),
            FailureStage::Validation => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        if e.is_backend() {
            CliError::Backend(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Invalid(format!("{}: {e}", path.display()))
}

/// What a command printed and what goes into its manifest.
struct Output {
    text: String,
    json: Value,
}

type CmdResult = Result<Output, CliError>;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let started_at = locmt_core::timestamp();
    let mut manifest_dir = g.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let (command, config, seed, outcome): (&'static str, Value, Option<u64>, CmdResult) = match &cli.command {
        Command::Preprocess(a) => {
            let config = json!({"pipeline": a.pipeline, "in": a.input, "out": a.output});
            ("preprocess", config, None, preprocess(a))
        }
        Command::Localize(a) => {
            let config = json!({
                "src": a.src, "tgt": a.tgt, "in": a.input, "out": a.output,
                "backend": g.backend, "lexicons": a.lexicon,
                "keep_hashtags": a.keep_hashtags, "max_failure_rate": a.max_failure_rate,
            });
            ("localize", config, None, localize(a, g.backend.as_deref()))
        }
        Command::Split(a) => {
            let seed = g.seed.unwrap_or(0);
            let out_dir = a.out_dir.clone().or_else(|| g.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
            let config = json!({
                "in": a.input, "ratios": a.ratio, "stratified": a.stratified, "out_dir": out_dir,
            });
            ("split", config, Some(seed), split(a, seed, &out_dir))
        }
        Command::Score(a) => {
            let config = json!({
                "task": a.task.as_str(), "hyp": a.hyp, "ref": a.reference,
                "variants": a.variant, "pipeline": a.pipeline,
            });
            ("score", config, None, score(a))
        }
        Command::Train => match train_config(cli) {
            Ok(cfg) => {
                let work_dir = g.output_dir.clone().unwrap_or_else(|| PathBuf::from(".")).join(&cfg.name);
                let config = serde_json::to_value(&cfg).expect("config serializes");
                ("train", config, Some(cfg.seed), train(&cfg, &work_dir))
            }
            Err(e) => ("train", raw_config(cli), g.seed, Err(e)),
        },
        Command::Scenario(ScenarioCommand::Run(a)) => match scenario_config(cli, a) {
            Ok(s) => {
                if g.output_dir.is_none() {
                    manifest_dir = s.output_dir.clone();
                }
                let config = serde_json::to_value(&s).expect("scenario serializes");
                ("scenario-run", config, Some(s.seed), scenario(&s))
            }
            Err(e) => ("scenario-run", raw_config(cli), g.seed, Err(e)),
        },
    };
    if g.verbose > 0 {
        eprintln!("{command}: {}", if outcome.is_ok() { "done" } else { "failed" });
    }

    let recorded = outcome.as_ref().map(|o| o.json.clone()).map_err(Clone::clone);
    let inv = Invocation {
        command,
        config,
        seed,
        started_at,
    };
    let written = inv.write(&manifest_dir, &recorded);
    let out = outcome?;
    let path = written.map_err(|e| io_err(&manifest_dir, e))?;
    match g.format {
        Format::Text => {
            print!("{}", out.text);
            if g.verbose > 0 {
                eprintln!("manifest: {}", path.display());
            }
        }
        Format::Json => {
            let doc = json!({"result": out.json, "manifest": path});
            println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
        }
    }
    Ok(())
}

fn raw_config(cli: &Cli) -> Value {
    json!({"config": cli.global.config, "backend": cli.global.backend, "output_dir": cli.global.output_dir})
}

fn required_config(cli: &Cli) -> Result<&Path, CliError> {
    cli.global
        .config
        .as_deref()
        .ok_or_else(|| CliError::Invalid("--config <file> is required".into()))
}

// -- preprocess -------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Preset name (`nmt-clean`, `osb-clean`) or pipeline file.
    #[arg(long)]
    pub pipeline: String,
    /// `.jsonl` corpus or plain-text file.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

/// Parallel files carry `pair_id`; everything else is read as labeled.
fn detect_kind(path: &Path) -> Result<CorpusKind, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let v: Value = serde_json::from_str(first).unwrap_or(Value::Null);
    Ok(if v.get("pair_id").is_some() {
        CorpusKind::Parallel
    } else {
        CorpusKind::Labeled
    })
}

fn load_any(path: &Path) -> Result<Corpus, CliError> {
    Ok(corpus::load_corpus(path, detect_kind(path)?)?)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Cleans every text; records left empty are dropped and their ids returned.
fn clean_corpus(c: &Corpus, p: &CompiledPipeline) -> Result<(Corpus, Vec<String>), CliError> {
    let mut dropped = Vec::new();
    let records = match c.records() {
        Records::Labeled(v) => Records::Labeled(
            v.iter()
                .filter_map(|e| {
                    let mut e = e.clone();
                    e.utterance.text = p.apply(&e.utterance.text);
                    if e.utterance.text.is_empty() {
                        dropped.push(e.utterance.id);
                        return None;
                    }
                    Some(e)
                })
                .collect(),
        ),
        Records::Parallel(v) => Records::Parallel(
            v.iter()
                .filter_map(|pair| {
                    let mut pair = pair.clone();
                    pair.source.text = p.apply(&pair.source.text);
                    pair.target.text = p.apply(&pair.target.text);
                    if pair.source.text.is_empty() || pair.target.text.is_empty() {
                        dropped.push(pair.pair_id);
                        return None;
                    }
                    Some(pair)
                })
                .collect(),
        ),
    };
    Ok((Corpus::new(c.name(), records)?, dropped))
}

fn preprocess(a: &PreprocessArgs) -> CmdResult {
    let spec = PipelineSpec::load(&a.pipeline)?;
    let compiled = spec.compile()?;
    let steps: Vec<String> = spec.step_ids().iter().map(|s| s.to_string()).collect();
    if is_jsonl(&a.input) {
        let c = load_any(&a.input)?;
        let (cleaned, dropped) = clean_corpus(&c, &compiled)?;
        corpus::save_corpus(&cleaned, &a.output)?;
        Ok(Output {
            text: format!(
                "{} records cleaned ({} dropped as empty) -> {}\n",
                cleaned.len(),
                dropped.len(),
                a.output.display()
            ),
            json: json!({"steps": steps, "records": cleaned.len(), "dropped": dropped, "out": a.output}),
        })
    } else {
        let text = fs::read_to_string(&a.input).map_err(|e| io_err(&a.input, e))?;
        let lines: Vec<&str> = text.lines().collect();
        let cleaned = compiled.apply_all(&lines, Execution::default());
        let mut out = cleaned.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        write_text(&a.output, &out)?;
        Ok(Output {
            text: format!("{} lines cleaned -> {}\n", cleaned.len(), a.output.display()),
            json: json!({"steps": steps, "lines": cleaned.len(), "out": a.output}),
        })
    }
}

// -- localize ---------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub src: String,
    /// Target dialect, e.g. `ar-lev` or `ar-glf`.
    #[arg(long)]
    pub tgt: String,
    /// Labeled `.jsonl` corpus.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
    /// Extra borrowed-word lexicon (`source<TAB>target` lines); repeatable.
    #[arg(long)]
    pub lexicon: Vec<PathBuf>,
    /// Keep hashtag bodies verbatim instead of translating them.
    #[arg(long)]
    pub keep_hashtags: bool,
    /// Largest tolerated fraction of records the service fails on.
    #[arg(long, default_value_t = 0.0)]
    pub max_failure_rate: f64,
}

fn connect(endpoint: Option<&str>) -> Result<Box<dyn backend::Backend>, CliError> {
    let endpoint = endpoint.ok_or_else(|| {
        CliError::Invalid(format!("no backend: pass --backend or set {}", backend::ENDPOINT_ENV))
    })?;
    Ok(backend::connect(&BackendConfig::new(endpoint))?)
}

fn lang(s: &str) -> Result<locmt_core::corpus::LangTag, CliError> {
    s.parse().map_err(|e: CorpusError| CliError::Invalid(e.to_string()))
}

fn localize(a: &LocalizeArgs, endpoint: Option<&str>) -> CmdResult {
    let (src, tgt) = (lang(&a.src)?, lang(&a.tgt)?);
    let input = corpus::load_corpus(&a.input, CorpusKind::Labeled)?;
    let mut lexicon = BorrowLexicon::builtin_for(&tgt);
    for p in &a.lexicon {
        lexicon.extend(&BorrowLexicon::load(p)?);
    }
    let options = LocalizeOptions {
        translate_hashtags: !a.keep_hashtags,
        max_failure_rate: a.max_failure_rate,
        ..LocalizeOptions::default()
    };
    let backend = connect(endpoint)?;
    let out = Localizer::new(lexicon, options).localize_corpus(&input, &src, &tgt, &*backend)?;
    corpus::save_corpus(&out.corpus, &a.output)?;
    let mut text = format!("{} records localized {src} -> {tgt} -> {}\n", out.corpus.len(), a.output.display());
    for f in &out.failures {
        let _ = writeln!(text, "  failed {}: {}", f.id, f.reason);
    }
    Ok(Output {
        text,
        json: json!({"records": out.corpus.len(), "failures": out.failures, "out": a.output}),
    })
}

// -- split ------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// `name=fraction`, repeatable, e.g. `--ratio train=0.8 --ratio valid=0.2`.
    #[arg(long, required = true)]
    pub ratio: Vec<String>,
    /// Apportion each class separately (labeled corpora).
    #[arg(long)]
    pub stratified: bool,
    /// Directory for the split files; defaults to --output-dir, then `.`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn parse_ratios(raw: &[String]) -> Result<Vec<(String, f64)>, CliError> {
    raw.iter()
        .map(|r| {
            let (name, frac) = r
                .split_once('=')
                .ok_or_else(|| CliError::Invalid(format!("ratio `{r}` is not name=fraction")))?;
            let frac: f64 = frac
                .trim()
                .parse()
                .map_err(|_| CliError::Invalid(format!("ratio `{r}`: bad fraction")))?;
            Ok((name.trim().to_string(), frac))
        })
        .collect()
}

fn split(a: &SplitArgs, seed: u64, out_dir: &Path) -> CmdResult {
    let spec = SplitSpec {
        ratios: parse_ratios(&a.ratio)?,
        seed,
        stratified: a.stratified,
    };
    let c = load_any(&a.input)?;
    let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus");
    let mut text = String::new();
    let mut parts = Vec::new();
    for (name, part) in corpus::split_corpus(&c, &spec)? {
        let path = out_dir.join(format!("{stem}-{name}.jsonl"));
        if !part.is_empty() {
            corpus::save_corpus(&part, &path)?;
        }
        let _ = writeln!(text, "{name}\t{}\t{}", part.len(), path.display());
        parts.push(json!({"name": name, "size": part.len(), "path": path, "counts": part.manifest().counts}));
    }
    Ok(Output {
        text,
        json: json!({"seed": seed, "splits": parts}),
    })
}

// -- score ------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreTask {
    Mt,
    Classify,
}

impl ScoreTask {
    fn as_str(self) -> &'static str {
        match self {
            ScoreTask::Mt => "mt",
            ScoreTask::Classify => "classify",
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_enum)]
    pub task: ScoreTask,
    /// Hypotheses: one per line, or a labeled `.jsonl` corpus for classify.
    #[arg(long)]
    pub hyp: PathBuf,
    /// References, same shape as --hyp.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Metric variant, repeatable: `rouge1`, `rougeL`, `bleu-unsmoothed`,
    /// `bleu-add-epsilon=<eps>`.
    #[arg(long)]
    pub variant: Vec<String>,
    /// Cleaning applied before tokenization (mt only).
    #[arg(long, default_value = "nmt-clean")]
    pub pipeline: String,
}

fn parse_variants(raw: &[String]) -> Result<(Smoothing, RougeVariant), CliError> {
    let mut smoothing = Smoothing::default();
    let mut rouge = RougeVariant::default();
    for v in raw {
        if v == "bleu-unsmoothed" {
            smoothing = Smoothing::None;
        } else if let Some(eps) = v.strip_prefix("bleu-add-epsilon") {
            let epsilon: f64 = match eps.strip_prefix('=') {
                Some(e) => e.parse().map_err(|_| CliError::Invalid(format!("variant `{v}`: bad epsilon")))?,
                None => 0.1,
            };
            if epsilon.is_nan() || epsilon <= 0.0 {
                return Err(CliError::Invalid(format!("variant `{v}`: epsilon must be positive")));
            }
            smoothing = Smoothing::AddEpsilon { epsilon };
        } else {
            rouge = v.parse().map_err(CliError::Invalid)?;
        }
    }
    Ok((smoothing, rouge))
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn score(a: &ScoreArgs) -> CmdResult {
    match a.task {
        ScoreTask::Mt => {
            let (smoothing, rouge) = parse_variants(&a.variant)?;
            let pipeline = PipelineSpec::load(&a.pipeline)?.compile()?;
            let hyps = read_lines(&a.hyp)?;
            let refs = read_lines(&a.reference)?;
            let s = metrics::score_translations(&hyps, &refs, &pipeline, smoothing, rouge, Execution::default())?;
            let text = format!(
                "pairs: {}\nBLEU: {:.2}\nROUGE: {:.2}\ncombined F: {:.2}\nvariants: {}, {}, {}\n",
                s.pairs, s.bleu.value, s.rouge.value, s.combined.value, s.variants.bleu, s.variants.rouge, s.variants.combined
            );
            Ok(Output {
                text,
                json: serde_json::to_value(&s).expect("scores serialize"),
            })
        }
        ScoreTask::Classify => {
            if !a.variant.is_empty() {
                return Err(CliError::Invalid("--variant applies to --task mt only".into()));
            }
            let (truth, predicted) = if is_jsonl(&a.reference) || is_jsonl(&a.hyp) {
                aligned_labels(&a.reference, &a.hyp)?
            } else {
                let t = read_lines(&a.reference)?;
                let p = read_lines(&a.hyp)?;
                (trimmed(t), trimmed(p))
            };
            let first = truth
                .first()
                .ok_or_else(|| CliError::Invalid("no reference labels".into()))?;
            let task = first
                .parse::<Label>()
                .map_err(|e| CliError::Invalid(format!("reference label: {e}")))?
                .task();
            let classes: Vec<&str> = task.labels().iter().map(|l| l.as_str()).collect();
            let r = metrics::classification_report(&truth, &predicted, &classes)?;
            let text = format!("{}macro F1: {:.2}\n", r.render_table(), r.macro_f1());
            Ok(Output {
                text,
                json: serde_json::to_value(&r).expect("report serializes"),
            })
        }
    }
}

fn trimmed(lines: Vec<String>) -> Vec<String> {
    let mut v: Vec<String> = lines.into_iter().map(|l| l.trim().to_string()).collect();
    while v.last().is_some_and(|l| l.is_empty()) {
        v.pop();
    }
    v
}

/// Labels of two labeled corpora joined on record id, in reference order.
fn aligned_labels(reference: &Path, hyp: &Path) -> Result<(Vec<String>, Vec<String>), CliError> {
    let r = corpus::load_corpus(reference, CorpusKind::Labeled)?;
    let h = corpus::load_corpus(hyp, CorpusKind::Labeled)?;
    let predicted: HashMap<&str, &str> = h.as_labeled()?.iter().map(|e| (e.id(), e.label.as_str())).collect();
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for e in r.as_labeled()? {
        let p = predicted
            .get(e.id())
            .ok_or_else(|| CliError::Invalid(format!("no prediction for `{}`", e.id())))?;
        truth.push(e.label.as_str().to_string());
        pred.push(p.to_string());
    }
    if predicted.len() != truth.len() {
        return Err(CliError::Invalid(format!(
            "{} predictions for {} references",
            predicted.len(),
            truth.len()
        )));
    }
    Ok((truth, pred))
}

// -- train ------------------------------------------------------------------------

fn train_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(required_config(cli)?)?;
    cfg.backend.override_endpoint(cli.global.backend.as_deref());
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(cfg: &ExperimentConfig, work_dir: &Path) -> CmdResult {
    let m = trainctl::run_experiment(cfg, work_dir);
    let path = work_dir.join("manifest.json");
    m.save(&path)?;
    if let Outcome::Failed { stage, error } = &m.outcome {
        let msg = format!("{} ({})", error, path.display());
        return Err(match stage {
            FailureStage::Backend => CliError::Backend(msg),
            FailureStage::Validation => CliError::Invalid(msg),
        });
    }
    let mut text = String::new();
    let _ = writeln!(text, "experiment: {} ({})", m.name, m.task);
    for s in &m.splits {
        let _ = writeln!(text, "split {}: {}", s.name, s.size);
    }
    let _ = writeln!(text, "evaluations: {}", m.metric_log.len());
    let _ = writeln!(text, "best evaluation: {}", m.best_eval_index.unwrap_or(0));
    let _ = writeln!(text, "stopped early: {}", m.stopped_early);
    let _ = writeln!(text, "model: {}", m.model_id.as_deref().unwrap_or("-"));
    let _ = writeln!(text, "run manifest: {}", path.display());
    Ok(Output {
        text,
        json: json!({
            "run_manifest": path,
            "best_eval_index": m.best_eval_index,
            "model_id": m.model_id,
            "stopped_early": m.stopped_early,
            "evaluations": m.metric_log.len(),
        }),
    })
}

// -- scenario ---------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Must match the kind in the scenario file.
    #[arg(long)]
    pub kind: String,
}

fn scenario_config(cli: &Cli, a: &ScenarioArgs) -> Result<Scenario, CliError> {
    let kind: ScenarioKind = a.kind.parse().map_err(CliError::Invalid)?;
    let mut s = Scenario::load(required_config(cli)?)?;
    if s.kind != kind {
        return Err(CliError::Invalid(format!(
            "--kind {kind} but the scenario file describes {}",
            s.kind
        )));
    }
    s.backend.override_endpoint(cli.global.backend.as_deref());
    if let Some(seed) = cli.global.seed {
        s.seed = seed;
    }
    if let Some(dir) = &cli.global.output_dir {
        s.output_dir = dir.clone();
    }
    s.validate()?;
    Ok(s)
}

fn scenario(s: &Scenario) -> CmdResult {
    let report = evalharness::run_scenario(s)?;
    Ok(Output {
        text: report.render_text(),
        json: serde_json::from_str(&report.to_json()).expect("report is JSON"),
    })
}
