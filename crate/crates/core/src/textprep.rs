//! Text cleaning steps and the pipelines built from them.
//!
//! Every step is idempotent on its own, and so are the two shipped
//! pipelines. Steps that delete material also re-collapse whitespace so a
//! deletion never leaves a double space for a later pass to fix.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::unicode;

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("unknown step id `{0}`")]
    UnknownStep(String),
    #[error("step `{step}`: {detail}")]
    InvalidParam { step: StepId, detail: String },
    #[error("cannot read stopword list {path}: {source}")]
    StopwordList {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown pipeline preset `{0}`")]
    UnknownPreset(String),
    #[error("cannot read pipeline {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid pipeline document: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, PrepError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepId {
    CollapseWhitespace,
    StripEncodingArtifacts,
    StripUrls,
    Lowercase,
    StripDiacritics,
    NormalizeHamza,
    StripMentions,
    StripSpecialsNumbers,
    RemoveStopwords,
}

impl StepId {
    pub const ALL: [StepId; 9] = [
        StepId::CollapseWhitespace,
        StepId::StripEncodingArtifacts,
        StepId::StripUrls,
        StepId::Lowercase,
        StepId::StripDiacritics,
        StepId::NormalizeHamza,
        StepId::StripMentions,
        StepId::StripSpecialsNumbers,
        StepId::RemoveStopwords,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StepId::CollapseWhitespace => "collapse_whitespace",
            StepId::StripEncodingArtifacts => "strip_encoding_artifacts",
            StepId::StripUrls => "strip_urls",
            StepId::Lowercase => "lowercase",
            StepId::StripDiacritics => "strip_diacritics",
            StepId::NormalizeHamza => "normalize_hamza",
            StepId::StripMentions => "strip_mentions",
            StepId::StripSpecialsNumbers => "strip_specials_numbers",
            StepId::RemoveStopwords => "remove_stopwords",
        }
    }

    fn allowed_params(self) -> &'static [&'static str] {
        match self {
            StepId::StripDiacritics => &["ranges"],
            StepId::NormalizeHamza => &["include_waw_yeh"],
            StepId::RemoveStopwords => &["lists", "path", "words"],
            _ => &[],
        }
    }
}

impl FromStr for StepId {
    type Err = PrepError;

    fn from_str(s: &str) -> Result<Self> {
        StepId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| PrepError::UnknownStep(s.to_string()))
    }
}

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSpec {
    pub id: StepId,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

impl StepSpec {
    pub fn new(id: StepId) -> Self {
        StepSpec {
            id,
            params: BTreeMap::new(),
        }
    }

    /// Looks up the step by its string id.
    pub fn parse(id: &str, params: &[(&str, &str)]) -> Result<Self> {
        Ok(StepSpec {
            id: id.parse()?,
            params: params
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        })
    }

    pub fn with_param(mut self, key: &str, value: &str) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn compile(&self) -> Result<CompiledStep> {
        for key in self.params.keys() {
            if !self.id.allowed_params().contains(&key.as_str()) {
                return Err(PrepError::InvalidParam {
                    step: self.id,
                    detail: format!("unexpected parameter `{key}`"),
                });
            }
        }
        let step = match self.id {
            StepId::CollapseWhitespace => CompiledStep::CollapseWhitespace,
            StepId::StripEncodingArtifacts => CompiledStep::StripEncodingArtifacts,
            StepId::StripUrls => CompiledStep::StripUrls,
            StepId::Lowercase => CompiledStep::Lowercase,
            StepId::StripDiacritics => {
                let set = match self.params.get("ranges") {
                    Some(spec) => DiacriticSet::parse(spec).map_err(|detail| PrepError::InvalidParam {
                        step: self.id,
                        detail,
                    })?,
                    None => DiacriticSet::default(),
                };
                CompiledStep::StripDiacritics(set)
            }
            StepId::NormalizeHamza => {
                let include_waw_yeh = match self.params.get("include_waw_yeh").map(String::as_str) {
                    None | Some("false") => false,
                    Some("true") => true,
                    Some(other) => {
                        return Err(PrepError::InvalidParam {
                            step: self.id,
                            detail: format!("include_waw_yeh must be true or false, got `{other}`"),
                        })
                    }
                };
                CompiledStep::NormalizeHamza { include_waw_yeh }
            }
            StepId::StripMentions => CompiledStep::StripMentions,
            StepId::StripSpecialsNumbers => CompiledStep::StripSpecialsNumbers,
            StepId::RemoveStopwords => CompiledStep::RemoveStopwords(StopwordSet::from_params(&self.params)?),
        };
        Ok(step)
    }
}

/// An ordered, named list of steps. Serialized as TOML.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub name: String,
    pub steps: Vec<StepSpec>,
}

impl PipelineSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        // Step ids are checked by hand so the error names the bad id.
        let raw: toml::Value = toml::from_str(text).map_err(|e| PrepError::Parse(e.to_string()))?;
        if let Some(steps) = raw.get("steps").and_then(|s| s.as_array()) {
            for s in steps {
                if let Some(id) = s.get("id").and_then(|v| v.as_str()) {
                    id.parse::<StepId>()?;
                }
            }
        }
        let spec: PipelineSpec = raw.try_into().map_err(|e: toml::de::Error| PrepError::Parse(e.to_string()))?;
        spec.compile()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline serializes")
    }

    /// Resolves a preset name (`nmt-clean`, `osb-clean`) or a file path.
    pub fn load(preset_or_path: &str) -> Result<Self> {
        if let Some(spec) = presets::by_name(preset_or_path) {
            return Ok(spec);
        }
        let path = Path::new(preset_or_path);
        if !path.exists() {
            return Err(PrepError::UnknownPreset(preset_or_path.to_string()));
        }
        let text = fs::read_to_string(path).map_err(|source| PrepError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn step_ids(&self) -> Vec<StepId> {
        self.steps.iter().map(|s| s.id).collect()
    }

    pub fn compile(&self) -> Result<CompiledPipeline> {
        let steps = self.steps.iter().map(StepSpec::compile).collect::<Result<_>>()?;
        Ok(CompiledPipeline { steps })
    }
}

pub mod presets {
    use super::PipelineSpec;

    pub const NMT_CLEAN: &str = include_str!("../presets/pipelines/nmt-clean.toml");
    pub const OSB_CLEAN: &str = include_str!("../presets/pipelines/osb-clean.toml");

    pub fn nmt_clean() -> PipelineSpec {
        PipelineSpec::from_toml(NMT_CLEAN).expect("shipped preset parses")
    }

    pub fn osb_clean() -> PipelineSpec {
        PipelineSpec::from_toml(OSB_CLEAN).expect("shipped preset parses")
    }

    pub fn by_name(name: &str) -> Option<PipelineSpec> {
        match name {
            "nmt-clean" => Some(nmt_clean()),
            "osb-clean" => Some(osb_clean()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompiledPipeline {
    steps: Vec<CompiledStep>,
}

impl CompiledPipeline {
    pub fn apply(&self, text: &str) -> String {
        self.steps
            .iter()
            .fold(text.to_string(), |acc, step| step.apply(&acc))
    }

    /// Applies the pipeline to every text, preserving order.
    pub fn apply_all<S: AsRef<str> + Sync>(&self, texts: &[S], exec: Execution) -> Vec<String> {
        exec::map_collect(exec, texts, |t| self.apply(t.as_ref()))
    }
}

#[derive(Debug, Clone)]
pub enum CompiledStep {
    CollapseWhitespace,
    StripEncodingArtifacts,
    StripUrls,
    Lowercase,
    StripDiacritics(DiacriticSet),
    NormalizeHamza { include_waw_yeh: bool },
    StripMentions,
    StripSpecialsNumbers,
    RemoveStopwords(StopwordSet),
}

impl CompiledStep {
    pub fn apply(&self, text: &str) -> String {
        match self {
            CompiledStep::CollapseWhitespace => collapse_whitespace(text),
            CompiledStep::StripEncodingArtifacts => strip_encoding_artifacts(text),
            CompiledStep::StripUrls => strip_urls(text),
            CompiledStep::Lowercase => text.to_lowercase(),
            CompiledStep::StripDiacritics(set) => set.strip(text),
            CompiledStep::NormalizeHamza { include_waw_yeh } => hamza(text, *include_waw_yeh),
            CompiledStep::StripMentions => strip_mentions(text),
            CompiledStep::StripSpecialsNumbers => strip_specials_numbers(text),
            CompiledStep::RemoveStopwords(set) => set.remove(text),
        }
    }
}

/// Applies one step. Stopword lists are read on every call; compile the
/// step once when cleaning many texts.
pub fn apply_step(step: &StepSpec, text: &str) -> Result<String> {
    Ok(step.compile()?.apply(text))
}

/// Left-to-right composition of the pipeline's steps.
pub fn apply_pipeline(spec: &PipelineSpec, text: &str) -> Result<String> {
    Ok(spec.compile()?.apply(text))
}

pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes Arabic diacritics from the default set.
pub fn strip_diacritics(text: &str) -> String {
    DiacriticSet::default().strip(text)
}

/// Maps آ أ إ to bare alef. ؤ and ئ are left alone.
pub fn normalize_hamza(text: &str) -> String {
    hamza(text, false)
}

fn hamza(text: &str, include_waw_yeh: bool) -> String {
    text.chars()
        .map(|c| match c {
            '\u{0622}' | '\u{0623}' | '\u{0625}' => '\u{0627}',
            '\u{0624}' if include_waw_yeh => '\u{0648}',
            '\u{0626}' if include_waw_yeh => '\u{064A}',
            c => c,
        })
        .collect()
}

/// Set of code points removed by `strip_diacritics`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiacriticSet {
    ranges: Vec<(u32, u32)>,
}

impl Default for DiacriticSet {
    fn default() -> Self {
        DiacriticSet {
            ranges: unicode::DEFAULT_DIACRITICS.to_vec(),
        }
    }
}

impl DiacriticSet {
    /// Parses `064B-065F,0670` style hex ranges.
    pub fn parse(spec: &str) -> std::result::Result<Self, String> {
        let mut ranges = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (lo, hi) = part.split_once('-').unwrap_or((part, part));
            let parse = |s: &str| {
                u32::from_str_radix(s.trim().trim_start_matches("U+"), 16)
                    .map_err(|_| format!("bad code point `{s}`"))
            };
            let (lo, hi) = (parse(lo)?, parse(hi)?);
            if lo > hi {
                return Err(format!("empty range `{part}`"));
            }
            ranges.push((lo, hi));
        }
        if ranges.is_empty() {
            return Err("no ranges given".into());
        }
        Ok(DiacriticSet { ranges })
    }

    pub fn contains(&self, c: char) -> bool {
        let cp = c as u32;
        self.ranges.iter().any(|&(lo, hi)| lo <= cp && cp <= hi)
    }

    pub fn strip(&self, text: &str) -> String {
        text.chars().filter(|&c| !self.contains(c)).collect()
    }
}

// -- strip_encoding_artifacts ------------------------------------------------

static ENTITY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"&(#[0-9]{1,7}|#[xX][0-9a-fA-F]{1,6}|[A-Za-z][A-Za-z0-9]{1,31});").unwrap()
});

fn named_entity(name: &str) -> Option<char> {
    let c = match name.to_ascii_lowercase().as_str() {
        "amp" => '&',
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" => '\'',
        "nbsp" => '\u{00A0}',
        "hellip" => '…',
        "laquo" => '«',
        "raquo" => '»',
        "lsquo" => '‘',
        "rsquo" => '’',
        "ldquo" => '“',
        "rdquo" => '”',
        "ndash" => '–',
        "mdash" => '—',
        "euro" => '€',
        "copy" => '©',
        "reg" => '®',
        "trade" => '™',
        "deg" => '°',
        _ => return None,
    };
    Some(c)
}

fn decode_entity(body: &str) -> Option<char> {
    if let Some(num) = body.strip_prefix('#') {
        let cp = match num.strip_prefix(['x', 'X']) {
            Some(hex) => u32::from_str_radix(hex, 16).ok()?,
            None => num.parse().ok()?,
        };
        return char::from_u32(cp).filter(|&c| c != '\0');
    }
    named_entity(body)
}

fn is_zero_width(c: char) -> bool {
    matches!(c, '\u{200B}'..='\u{200F}' | '\u{2060}' | '\u{FEFF}')
}

fn is_artifact(c: char) -> bool {
    c == '\u{FFFD}' || is_zero_width(c) || (c.is_control() && !c.is_whitespace())
}

fn continues_emoji(c: char) -> bool {
    unicode::is_pictographic(c)
        || unicode::is_skin_tone(c)
        || c == unicode::VS16
        || ('\u{E0020}'..='\u{E007F}').contains(&c)
}

fn artifact_pass(text: &str) -> String {
    let decoded = ENTITY.replace_all(text, |caps: &regex::Captures| {
        decode_entity(&caps[1]).map(String::from).unwrap_or_default()
    });
    let chars: Vec<char> = decoded.chars().collect();
    let mut out = String::with_capacity(decoded.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if is_artifact(c) {
            let start = i;
            while i < chars.len() && is_artifact(chars[i]) {
                i += 1;
            }
            // A joiner between two emoji is part of a ZWJ sequence.
            let joins = chars[start..i].contains(&unicode::ZWJ)
                && out.chars().last().is_some_and(continues_emoji)
                && chars
                    .get(i)
                    .is_some_and(|&n| unicode::is_pictographic(n) || unicode::is_skin_tone(n));
            if joins {
                out.push(unicode::ZWJ);
            }
            continue;
        }
        if unicode::is_default_diacritic(c) {
            // Marks with no Arabic letter to sit on are encoding debris.
            let attached = out
                .chars()
                .last()
                .is_some_and(|p| unicode::is_arabic_letter(p) || unicode::is_default_diacritic(p));
            if !attached {
                i += 1;
                continue;
            }
        }
        out.push(c);
        i += 1;
    }
    collapse_whitespace(&out)
}

/// Decodes HTML entities (dropping unmappable ones) and removes replacement
/// characters, zero-width marks, stray controls and orphaned Arabic marks.
/// Repeats until nothing changes so doubly-escaped input settles in one call.
pub fn strip_encoding_artifacts(text: &str) -> String {
    let mut current = artifact_pass(text);
    loop {
        let next = artifact_pass(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

// -- strip_urls / strip_mentions --------------------------------------------

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)(?:https?://|www\.)\S*").unwrap());

fn starts_token(text: &str, byte_pos: usize) -> bool {
    text[..byte_pos]
        .chars()
        .next_back()
        .is_none_or(|p| !unicode::is_word_char(p))
}

/// Byte ranges of URLs: `http://`, `https://` or `www.` at a word boundary,
/// running to the next whitespace.
pub fn url_ranges(text: &str) -> Vec<(usize, usize)> {
    URL.find_iter(text)
        .filter(|m| starts_token(text, m.start()))
        .map(|m| (m.start(), m.end()))
        .collect()
}

fn remove_ranges(text: &str, ranges: &[(usize, usize)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for &(s, e) in ranges {
        out.push_str(&text[last..s]);
        out.push(' ');
        last = e;
    }
    out.push_str(&text[last..]);
    out
}

pub fn strip_urls(text: &str) -> String {
    collapse_whitespace(&remove_ranges(text, &url_ranges(text)))
}

/// Byte ranges of `@name` mentions not glued to a preceding word.
pub fn mention_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if c != '@' || !starts_token(text, i) {
            continue;
        }
        let mut end = i + 1;
        while let Some(&(j, n)) = iter.peek() {
            if !unicode::is_word_char(n) {
                break;
            }
            end = j + n.len_utf8();
            iter.next();
        }
        if end > i + 1 {
            ranges.push((i, end));
        }
    }
    ranges
}

pub fn strip_mentions(text: &str) -> String {
    let mut current = text.to_string();
    loop {
        let ranges = mention_ranges(&current);
        let next = collapse_whitespace(&remove_ranges(&current, &ranges));
        if next == current {
            return next;
        }
        current = next;
    }
}

// -- strip_specials_numbers -------------------------------------------------

static SPECIAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[\p{P}\p{S}\p{N}\p{C}]$").unwrap());

fn is_special(c: char) -> bool {
    let mut buf = [0u8; 4];
    SPECIAL.is_match(c.encode_utf8(&mut buf))
}

/// Removes digits (any script), punctuation, symbols and control/format
/// characters. Emoji sequences survive whole, as do apostrophes inside a
/// word (`c'est`).
pub fn strip_specials_numbers(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let emoji = unicode::emoji_mask(&chars);
    let mut out = String::with_capacity(text.len());
    for (i, &c) in chars.iter().enumerate() {
        let keep = emoji[i]
            || c.is_whitespace()
            || !is_special(c)
            || (matches!(c, '\'' | '\u{2019}')
                && i > 0
                && chars[i - 1].is_alphabetic()
                && chars.get(i + 1).is_some_and(|n| n.is_alphabetic()));
        out.push(if keep { c } else { ' ' });
    }
    collapse_whitespace(&out)
}

// -- remove_stopwords -------------------------------------------------------

const BUILTIN_LISTS: &[(&str, &str)] = &[
    ("ar", include_str!("../data/stopwords/ar.txt")),
    ("es", include_str!("../data/stopwords/es.txt")),
    ("fr", include_str!("../data/stopwords/fr.txt")),
];

pub fn builtin_stopword_list(lang: &str) -> Option<&'static str> {
    BUILTIN_LISTS.iter().find(|(l, _)| *l == lang).map(|(_, t)| *t)
}

/// Lowercased, diacritic-free, hamza-normalized form used for matching.
pub fn match_key(token: &str) -> String {
    normalize_hamza(&strip_diacritics(&token.to_lowercase()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopwordSet {
    words: HashSet<String>,
}

impl StopwordSet {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        StopwordSet {
            words: words
                .into_iter()
                .map(|w| match_key(w.as_ref().trim()))
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    /// Parses a list file: one word per line, `#` starts a comment line.
    pub fn from_list(text: &str) -> Self {
        Self::from_words(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn builtin(langs: &[&str]) -> Option<Self> {
        let mut set = StopwordSet::default();
        for lang in langs {
            set.words.extend(Self::from_list(builtin_stopword_list(lang)?).words);
        }
        Some(set)
    }

    fn from_params(params: &BTreeMap<String, String>) -> Result<Self> {
        let mut set = StopwordSet::default();
        if let Some(lists) = params.get("lists") {
            for lang in lists.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let list = builtin_stopword_list(lang).ok_or_else(|| PrepError::InvalidParam {
                    step: StepId::RemoveStopwords,
                    detail: format!("no shipped stopword list for `{lang}`"),
                })?;
                set.words.extend(Self::from_list(list).words);
            }
        }
        if let Some(path) = params.get("path") {
            let path = PathBuf::from(path);
            let text = fs::read_to_string(&path).map_err(|source| PrepError::StopwordList { path, source })?;
            set.words.extend(Self::from_list(&text).words);
        }
        if let Some(words) = params.get("words") {
            set.words.extend(Self::from_words(words.split(',')).words);
        }
        if params.is_empty() {
            return Err(PrepError::InvalidParam {
                step: StepId::RemoveStopwords,
                detail: "one of `lists`, `path` or `words` is required".into(),
            });
        }
        Ok(set)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(&match_key(token))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn remove(&self, text: &str) -> String {
        text.split_whitespace()
            .filter(|t| !self.contains(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
