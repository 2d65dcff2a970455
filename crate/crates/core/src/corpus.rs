//! Corpus data model, newline-delimited JSON storage, manifests and
//! deterministic seeded splits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::textprep::{self, PipelineSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty corpus")]
    Empty,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid language tag `{0}`")]
    InvalidLangTag(String),
    #[error("invalid record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("manifest {path} disagrees with records: {detail}")]
    ManifestMismatch { path: PathBuf, detail: String },
    #[error("expected a {expected} corpus, found {found}")]
    WrongKind { expected: CorpusKind, found: CorpusKind },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    Lev,
    Glf,
}

impl Dialect {
    pub fn code(self) -> &'static str {
        match self {
            Dialect::Lev => "lev",
            Dialect::Glf => "glf",
        }
    }
}

/// Language plus, for Arabic only, an optional dialect. Written `fr`,
/// `ar`, `ar-lev`, `ar-glf`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LangTag {
    language: String,
    dialect: Option<Dialect>,
}

impl LangTag {
    pub fn new(language: &str, dialect: Option<Dialect>) -> Result<Self> {
        let ok = language.len() == 2 && language.bytes().all(|b| b.is_ascii_lowercase());
        if !ok || (dialect.is_some() && language != "ar") {
            let shown = match dialect {
                Some(d) => format!("{language}-{}", d.code()),
                None => language.to_string(),
            };
            return Err(CorpusError::InvalidLangTag(shown));
        }
        Ok(LangTag {
            language: language.to_string(),
            dialect,
        })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn dialect(&self) -> Option<Dialect> {
        self.dialect
    }
}

impl FromStr for LangTag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        let (lang, dialect) = match s.split_once('-') {
            None => (s, None),
            Some((lang, "lev")) => (lang, Some(Dialect::Lev)),
            Some((lang, "glf")) => (lang, Some(Dialect::Glf)),
            Some(_) => return Err(CorpusError::InvalidLangTag(s.to_string())),
        };
        LangTag::new(lang, dialect).map_err(|_| CorpusError::InvalidLangTag(s.to_string()))
    }
}

impl fmt::Display for LangTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dialect {
            Some(d) => write!(f, "{}-{}", self.language, d.code()),
            None => f.write_str(&self.language),
        }
    }
}

impl Serialize for LangTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LangTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub lang: LangTag,
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPair {
    pub pair_id: String,
    pub source: Utterance,
    pub target: Utterance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sentiment,
    Hate,
}

impl Task {
    /// Labels legal for this task, in canonical order.
    pub fn labels(self) -> [Label; 2] {
        match self {
            Task::Sentiment => [Label::Positive, Label::Negative],
            Task::Hate => [Label::Hate, Label::NoHate],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Sentiment => "sentiment",
            Task::Hate => "hate",
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sentiment" => Ok(Task::Sentiment),
            "hate" => Ok(Task::Hate),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
    Hate,
    NoHate,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Hate => "hate",
            Label::NoHate => "no_hate",
        }
    }

    pub fn task(self) -> Task {
        match self {
            Label::Positive | Label::Negative => Task::Sentiment,
            Label::Hate | Label::NoHate => Task::Hate,
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            "hate" => Ok(Label::Hate),
            "no_hate" => Ok(Label::NoHate),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub utterance: Utterance,
    pub task: Task,
    pub label: Label,
}

impl LabeledExample {
    pub fn id(&self) -> &str {
        &self.utterance.id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Parallel,
    Labeled,
}

impl fmt::Display for CorpusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusKind::Parallel => "parallel",
            CorpusKind::Labeled => "labeled",
        })
    }
}

impl FromStr for CorpusKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "parallel" => Ok(CorpusKind::Parallel),
            "labeled" => Ok(CorpusKind::Labeled),
            other => Err(format!("unknown corpus kind `{other}`")),
        }
    }
}

/// Counts and provenance for a corpus. `counts` holds per-class counts for
/// labeled corpora and per-direction counts (`fr->ar-lev`) for parallel ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub name: String,
    pub kind: CorpusKind,
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Records skipped at load time because their label was not legal for
    /// their task (e.g. neutral tweets in a binary sentiment set).
    #[serde(default)]
    pub dropped: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_length: Option<f64>,
}

impl CorpusManifest {
    pub fn count(&self, key: &str) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn is_consistent(&self) -> bool {
        self.schema_version == SCHEMA_VERSION && self.counts.values().sum::<u64>() == self.total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Records {
    Parallel(Vec<ParallelPair>),
    Labeled(Vec<LabeledExample>),
}

impl Records {
    pub fn len(&self) -> usize {
        match self {
            Records::Parallel(v) => v.len(),
            Records::Labeled(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> CorpusKind {
        match self {
            Records::Parallel(_) => CorpusKind::Parallel,
            Records::Labeled(_) => CorpusKind::Labeled,
        }
    }

    fn id(&self, i: usize) -> &str {
        match self {
            Records::Parallel(v) => &v[i].pair_id,
            Records::Labeled(v) => &v[i].utterance.id,
        }
    }
}

/// A validated, immutable corpus with its manifest attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Records,
    manifest: CorpusManifest,
}

impl Corpus {
    pub fn new(name: &str, records: Records) -> Result<Self> {
        Self::with_provenance(name, records, None, 0)
    }

    fn with_provenance(name: &str, records: Records, seed: Option<u64>, dropped: u64) -> Result<Self> {
        validate(&records)?;
        let mut manifest = count_records(name, &records);
        manifest.seed = seed;
        manifest.dropped = dropped;
        Ok(Corpus { records, manifest })
    }

    pub fn labeled(name: &str, examples: Vec<LabeledExample>) -> Result<Self> {
        Self::new(name, Records::Labeled(examples))
    }

    pub fn parallel(name: &str, pairs: Vec<ParallelPair>) -> Result<Self> {
        Self::new(name, Records::Parallel(pairs))
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn kind(&self) -> CorpusKind {
        self.records.kind()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &Records {
        &self.records
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn ids(&self) -> Vec<&str> {
        (0..self.len()).map(|i| self.records.id(i)).collect()
    }

    pub fn as_labeled(&self) -> Result<&[LabeledExample]> {
        match &self.records {
            Records::Labeled(v) => Ok(v),
            Records::Parallel(_) => Err(CorpusError::WrongKind {
                expected: CorpusKind::Labeled,
                found: CorpusKind::Parallel,
            }),
        }
    }

    pub fn as_parallel(&self) -> Result<&[ParallelPair]> {
        match &self.records {
            Records::Parallel(v) => Ok(v),
            Records::Labeled(_) => Err(CorpusError::WrongKind {
                expected: CorpusKind::Parallel,
                found: CorpusKind::Labeled,
            }),
        }
    }

    /// Same records under a different name.
    pub fn renamed(&self, name: &str) -> Corpus {
        let mut c = self.clone();
        c.manifest.name = name.to_string();
        c
    }
}

fn validate(records: &Records) -> Result<()> {
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut seen = HashSet::with_capacity(records.len());
    for i in 0..records.len() {
        let id = records.id(i);
        if !seen.insert(id) {
            return Err(CorpusError::DuplicateId(id.to_string()));
        }
    }
    let invalid = |id: &str, reason: &str| CorpusError::InvalidRecord {
        id: id.to_string(),
        reason: reason.to_string(),
    };
    match records {
        Records::Parallel(pairs) => {
            for p in pairs {
                if p.source.text.trim().is_empty() || p.target.text.trim().is_empty() {
                    return Err(invalid(&p.pair_id, "empty text"));
                }
                if p.source.lang == p.target.lang {
                    return Err(invalid(&p.pair_id, "source and target share a language tag"));
                }
            }
        }
        Records::Labeled(examples) => {
            for e in examples {
                if e.utterance.text.trim().is_empty() {
                    return Err(invalid(e.id(), "empty text"));
                }
                if e.label.task() != e.task {
                    return Err(invalid(e.id(), "label not legal for task"));
                }
            }
        }
    }
    Ok(())
}

fn count_records(name: &str, records: &Records) -> CorpusManifest {
    let mut counts = BTreeMap::new();
    match records {
        Records::Parallel(pairs) => {
            for p in pairs {
                *counts
                    .entry(format!("{}->{}", p.source.lang, p.target.lang))
                    .or_insert(0) += 1;
            }
        }
        Records::Labeled(examples) => {
            for e in examples {
                *counts.entry(e.label.as_str().to_string()).or_insert(0) += 1;
            }
        }
    }
    CorpusManifest {
        name: name.to_string(),
        kind: records.kind(),
        total: records.len() as u64,
        counts,
        schema_version: SCHEMA_VERSION,
        seed: None,
        dropped: 0,
        token_count: None,
        mean_length: None,
    }
}

// On-disk record shapes.

#[derive(Debug, Serialize, Deserialize)]
struct ParallelRecord {
    pair_id: String,
    src_text: String,
    src_lang: LangTag,
    tgt_text: String,
    tgt_lang: LangTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabeledRecord {
    id: String,
    text: String,
    lang: LangTag,
    task: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

/// Path of the manifest sidecar for a corpus file: `<dir>/<stem>.manifest`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    path.with_file_name(format!("{stem}.manifest"))
}

fn corpus_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string())
}

/// Loads a newline-delimited corpus file. Blank lines are skipped; labeled
/// records whose label is not legal for their task are dropped and
/// counted in `manifest().dropped`.
pub fn load_corpus(path: &Path, kind: CorpusKind) -> Result<Corpus> {
    let content = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let name = corpus_name(path);

    let mut dropped = 0u64;
    let mut seen: HashMap<String, usize> = HashMap::new();
    let records = match kind {
        CorpusKind::Parallel => {
            let mut pairs = Vec::new();
            for (line_no, line) in numbered_lines(&content) {
                let rec: ParallelRecord = parse_line(line_no, line)?;
                check_duplicate(&mut seen, &rec.pair_id, line_no)?;
                pairs.push(parallel_from_record(rec, line_no)?);
            }
            Records::Parallel(pairs)
        }
        CorpusKind::Labeled => {
            let mut examples = Vec::new();
            for (line_no, line) in numbered_lines(&content) {
                let rec: LabeledRecord = parse_line(line_no, line)?;
                check_duplicate(&mut seen, &rec.id, line_no)?;
                match labeled_from_record(rec, line_no)? {
                    Some(e) => examples.push(e),
                    None => dropped += 1,
                }
            }
            Records::Labeled(examples)
        }
    };

    let sidecar = manifest_path(path);
    let (seed, dropped) = match fs::read_to_string(&sidecar) {
        Ok(text) => {
            let stored: CorpusManifest = serde_json::from_str(&text).map_err(|e| CorpusError::ManifestMismatch {
                path: sidecar.clone(),
                detail: e.to_string(),
            })?;
            let fresh = count_records(&name, &records);
            if stored.counts != fresh.counts || stored.total != fresh.total || stored.kind != fresh.kind {
                return Err(CorpusError::ManifestMismatch {
                    path: sidecar,
                    detail: format!("stored total {} vs recomputed {}", stored.total, fresh.total),
                });
            }
            (stored.seed, stored.dropped.max(dropped))
        }
        Err(_) => (None, dropped),
    };

    Corpus::with_provenance(&name, records, seed, dropped).map_err(|e| match e {
        CorpusError::InvalidRecord { id, reason } => {
            let line = seen.get(&id).copied().unwrap_or(0);
            CorpusError::Malformed {
                line,
                reason: format!("record `{id}`: {reason}"),
            }
        }
        other => other,
    })
}

fn numbered_lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_line<T: for<'de> Deserialize<'de>>(line: usize, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
        line,
        reason: e.to_string(),
    })
}

fn check_duplicate(seen: &mut HashMap<String, usize>, id: &str, line: usize) -> Result<()> {
    if seen.insert(id.to_string(), line).is_some() {
        return Err(CorpusError::DuplicateId(id.to_string()));
    }
    Ok(())
}

fn parallel_from_record(rec: ParallelRecord, line: usize) -> Result<ParallelPair> {
    if rec.src_lang == rec.tgt_lang {
        return Err(CorpusError::Malformed {
            line,
            reason: "source and target share a language tag".into(),
        });
    }
    Ok(ParallelPair {
        source: Utterance {
            id: format!("{}:src", rec.pair_id),
            text: rec.src_text,
            lang: rec.src_lang,
            source: rec.source.clone(),
        },
        target: Utterance {
            id: format!("{}:tgt", rec.pair_id),
            text: rec.tgt_text,
            lang: rec.tgt_lang,
            source: rec.source,
        },
        pair_id: rec.pair_id,
    })
}

fn labeled_from_record(rec: LabeledRecord, line: usize) -> Result<Option<LabeledExample>> {
    let task: Task = rec
        .task
        .parse()
        .map_err(|reason| CorpusError::Malformed { line, reason })?;
    let label = match rec.label.parse::<Label>() {
        Ok(l) if l.task() == task => l,
        _ => return Ok(None),
    };
    Ok(Some(LabeledExample {
        utterance: Utterance {
            id: rec.id,
            text: rec.text,
            lang: rec.lang,
            source: rec.source,
        },
        task,
        label,
    }))
}

/// Writes the corpus file and its `<stem>.manifest` sidecar.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write_err = |e: std::io::Error| CorpusError::io(path, e);

    match corpus.records() {
        Records::Parallel(pairs) => {
            for p in pairs {
                let rec = ParallelRecord {
                    pair_id: p.pair_id.clone(),
                    src_text: p.source.text.clone(),
                    src_lang: p.source.lang.clone(),
                    tgt_text: p.target.text.clone(),
                    tgt_lang: p.target.lang.clone(),
                    source: p.source.source.clone(),
                };
                serde_json::to_writer(&mut out, &rec).map_err(|e| write_err(e.into()))?;
                out.write_all(b"\n").map_err(write_err)?;
            }
        }
        Records::Labeled(examples) => {
            for e in examples {
                let rec = LabeledRecord {
                    id: e.utterance.id.clone(),
                    text: e.utterance.text.clone(),
                    lang: e.utterance.lang.clone(),
                    task: e.task.as_str().to_string(),
                    label: e.label.as_str().to_string(),
                    source: e.utterance.source.clone(),
                };
                serde_json::to_writer(&mut out, &rec).map_err(|e| write_err(e.into()))?;
                out.write_all(b"\n").map_err(write_err)?;
            }
        }
    }
    out.flush().map_err(write_err)?;

    let mut manifest = corpus.manifest().clone();
    manifest.name = corpus_name(path);
    let sidecar = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&sidecar, text + "\n").map_err(|e| CorpusError::io(&sidecar, e))
}

/// Named split fractions plus the seed that drives assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: Vec<(String, f64)>,
    pub seed: u64,
    /// Apportion each class separately. Off by default; labeled corpora only.
    #[serde(default)]
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(ratios: &[(&str, f64)], seed: u64) -> Self {
        SplitSpec {
            ratios: ratios.iter().map(|(n, f)| (n.to_string(), *f)).collect(),
            seed,
            stratified: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(CorpusError::InvalidSplit("no splits given".into()));
        }
        let mut names = HashSet::new();
        for (name, f) in &self.ratios {
            if !names.insert(name.as_str()) {
                return Err(CorpusError::InvalidSplit(format!("split `{name}` listed twice")));
            }
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(CorpusError::InvalidSplit(format!("fraction {f} for `{name}` outside (0, 1]")));
            }
        }
        let sum: f64 = self.ratios.iter().map(|(_, f)| f).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidSplit(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Position of a record id in the seeded shuffle, as a u64 key.
pub fn split_key(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// The key mapped onto [0, 1).
pub fn unit_interval(key: u64) -> f64 {
    (key >> 11) as f64 / (1u64 << 53) as f64
}

/// Integer sizes for `n` items under `fractions`, by largest remainder.
/// Every size is within one item of `n * fraction` and the sizes sum to `n`.
pub fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - sizes[a] as f64;
        let rb = exact[b] - sizes[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut remaining = n.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        sizes[i] += 1;
        remaining -= 1;
    }
    sizes
}

/// Splits `corpus` into disjoint parts named after the split spec.
///
/// Every record id is hashed with the seed; records are ranked by that key
/// and the ranking is cut at largest-remainder sizes. Assignment therefore
/// depends only on the seed and the set of ids, never on file order, and
/// sizes are exact to within one record. Records keep their input order
/// inside each split.
pub fn split_corpus(corpus: &Corpus, spec: &SplitSpec) -> Result<Vec<(String, Corpus)>> {
    spec.validate()?;
    let k = spec.ratios.len();
    if corpus.len() < k {
        return Err(CorpusError::InvalidSplit(format!(
            "{} records cannot fill {k} splits",
            corpus.len()
        )));
    }
    let fractions: Vec<f64> = spec.ratios.iter().map(|(_, f)| *f).collect();

    let groups: Vec<Vec<usize>> = if spec.stratified {
        let examples = corpus.as_labeled().map_err(|_| {
            CorpusError::InvalidSplit("stratified splitting needs a labeled corpus".into())
        })?;
        let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
        for (i, e) in examples.iter().enumerate() {
            by_class.entry(e.label).or_default().push(i);
        }
        by_class.into_values().collect()
    } else {
        vec![(0..corpus.len()).collect()]
    };

    let mut assignment = vec![0usize; corpus.len()];
    for group in groups {
        let mut ranked: Vec<(u64, &str, usize)> = group
            .iter()
            .map(|&i| {
                let id = corpus.records.id(i);
                (split_key(spec.seed, id), id, i)
            })
            .collect();
        ranked.sort_unstable();
        let sizes = apportion(ranked.len(), &fractions);
        let mut cursor = 0;
        for (split, size) in sizes.iter().enumerate() {
            for &(_, _, i) in &ranked[cursor..cursor + size] {
                assignment[i] = split;
            }
            cursor += size;
        }
    }

    let mut out = Vec::with_capacity(k);
    for (split, (split_name, _)) in spec.ratios.iter().enumerate() {
        let name = format!("{}-{}", corpus.name(), split_name);
        let pick = |i: &usize| assignment[*i] == split;
        let records = match &corpus.records {
            Records::Parallel(v) => Records::Parallel(
                (0..v.len()).filter(pick).map(|i| v[i].clone()).collect(),
            ),
            Records::Labeled(v) => Records::Labeled(
                (0..v.len()).filter(pick).map(|i| v[i].clone()).collect(),
            ),
        };
        // A tiny fraction may legitimately round to zero records.
        let part = if records.is_empty() {
            Corpus {
                manifest: {
                    let mut m = count_records(&name, &records);
                    m.seed = Some(spec.seed);
                    m
                },
                records,
            }
        } else {
            Corpus::with_provenance(&name, records, Some(spec.seed), 0)?
        };
        out.push((split_name.clone(), part));
    }
    Ok(out)
}

/// Counts plus token statistics over texts cleaned with the `osb-clean`
/// pipeline. Parallel corpora count tokens on both sides.
pub fn corpus_stats(corpus: &Corpus) -> CorpusManifest {
    corpus_stats_with(corpus, &textprep::presets::osb_clean(), Execution::default())
}

pub fn corpus_stats_with(corpus: &Corpus, pipeline: &PipelineSpec, exec: Execution) -> CorpusManifest {
    let compiled = pipeline.compile().expect("shipped pipeline compiles");
    let texts: Vec<&str> = match corpus.records() {
        Records::Parallel(v) => v
            .iter()
            .flat_map(|p| [p.source.text.as_str(), p.target.text.as_str()])
            .collect(),
        Records::Labeled(v) => v.iter().map(|e| e.utterance.text.as_str()).collect(),
    };
    let tokens = exec::map_reduce(
        exec,
        &texts,
        |t| compiled.apply(t).split_whitespace().count() as u64,
        || 0u64,
        |a, b| a + b,
    );
    let mut m = corpus.manifest().clone();
    m.token_count = Some(tokens);
    m.mean_length = Some(if texts.is_empty() {
        0.0
    } else {
        tokens as f64 / texts.len() as f64
    });
    m
}
