//! Content-localization rules: protect social-media artifacts across
//! translation, keep hashtag order, and transliterate borrowed words.
//!
//! A text is split into a template and a list of [`ProtectedSpan`]s. Each
//! span is replaced by a placeholder `U+E000 <ordinal> U+E001` (shown as
//! `⟦n⟧` in docs). Both brackets are private-use code points, so they never
//! collide with natural text; stray occurrences in the input are themselves
//! protected as `reserved` spans. The model service is expected to copy
//! placeholders through unchanged; [`localize_text`] repairs the template
//! when it does not.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{LazyLock, Mutex};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, TextItem, TranslateRequest};
use crate::corpus::{Corpus, CorpusError, LabeledExample, LangTag, Utterance};
use crate::textprep;
use crate::unicode;

pub const PLACEHOLDER_OPEN: char = '\u{E000}';
pub const PLACEHOLDER_CLOSE: char = '\u{E001}';

const EMOTICON_PATTERNS: &str = include_str!("../data/emoticons.txt");
const BORROW_AR: &str = include_str!("../data/lexicons/borrow-ar.tsv");
const NAMES_AR: &str = include_str!("../data/lexicons/names-ar.tsv");

#[derive(Debug, Error)]
pub enum LocError {
    #[error("placeholder {0} missing from template")]
    MissingPlaceholder(usize),
    #[error("placeholder {0} appears more than once")]
    DuplicatePlaceholder(usize),
    #[error("placeholder {ordinal} has no span (only {spans} spans)")]
    UnknownPlaceholder { ordinal: usize, spans: usize },
    #[error("{renderings} renderings for {spans} spans")]
    RenderingCount { spans: usize, renderings: usize },
    #[error("lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("translating {context} ({src} -> {tgt}): {source}")]
    Backend {
        context: String,
        src: LangTag,
        tgt: LangTag,
        #[source]
        source: Box<BackendError>,
    },
    #[error("empty corpus")]
    Empty,
    #[error("record `{id}` is in {found}, expected {expected}")]
    LanguageMismatch { id: String, found: LangTag, expected: LangTag },
    #[error("{} of {total} records failed (rate {rate:.3} > threshold {threshold:.3}): {}", failures.len(), describe_failures(failures))]
    FailureRate {
        failures: Vec<RecordFailure>,
        total: usize,
        rate: f64,
        threshold: f64,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

// The full list stays in the error value; the message shows the first few.
fn describe_failures(f: &[RecordFailure]) -> String {
    const SHOWN: usize = 3;
    let mut s = f
        .iter()
        .take(SHOWN)
        .map(|r| format!("{} ({})", r.id, r.reason))
        .collect::<Vec<_>>()
        .join(", ");
    if f.len() > SHOWN {
        s.push_str(&format!(" and {} more", f.len() - SHOWN));
    }
    s
}

pub type Result<T> = std::result::Result<T, LocError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    Emoji,
    Emoticon,
    Hashtag,
    Mention,
    Url,
    Borrowed,
    /// A literal placeholder bracket found in the input.
    Reserved,
}

impl fmt::Display for SpanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SpanKind::Emoji => "emoji",
            SpanKind::Emoticon => "emoticon",
            SpanKind::Hashtag => "hashtag",
            SpanKind::Mention => "mention",
            SpanKind::Url => "url",
            SpanKind::Borrowed => "borrowed",
            SpanKind::Reserved => "reserved",
        };
        f.write_str(s)
    }
}

/// A protected region of the input, in code-point offsets `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedSpan {
    pub kind: SpanKind,
    pub start: usize,
    pub end: usize,
    pub payload: String,
}

/// Template text plus the spans its placeholders stand for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templated {
    pub text: String,
    pub spans: Vec<ProtectedSpan>,
}

impl Templated {
    /// Puts every payload back; equals the original input.
    pub fn restore(&self) -> String {
        let payloads: Vec<String> = self.spans.iter().map(|s| s.payload.clone()).collect();
        reinsert_spans(&self.text, &self.spans, &payloads).expect("extracted template is well formed")
    }

    /// True when the template holds anything besides placeholders and spaces.
    pub fn has_translatable_text(&self) -> bool {
        segments(&self.text).iter().any(|s| matches!(s, Segment::Text(t) if !t.trim().is_empty()))
    }
}

pub fn placeholder(ordinal: usize) -> String {
    format!("{PLACEHOLDER_OPEN}{ordinal}{PLACEHOLDER_CLOSE}")
}

/// A piece of template text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment<'a> {
    Text(&'a str),
    Placeholder(usize),
    /// A bracket character that is not part of a well-formed placeholder.
    Stray(&'a str),
}

/// Splits a template into text, placeholders and stray brackets.
pub fn segments(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    let bytes = text.as_bytes();
    while i < text.len() {
        let c = text[i..].chars().next().expect("in bounds");
        if c == PLACEHOLDER_OPEN || c == PLACEHOLDER_CLOSE {
            if text_start < i {
                out.push(Segment::Text(&text[text_start..i]));
            }
            let open_len = c.len_utf8();
            let mut j = i + open_len;
            if c == PLACEHOLDER_OPEN {
                while j < text.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                let digits = &text[i + open_len..j];
                if !digits.is_empty() && text[j..].starts_with(PLACEHOLDER_CLOSE) {
                    if let Ok(n) = digits.parse::<usize>() {
                        out.push(Segment::Placeholder(n));
                        i = j + PLACEHOLDER_CLOSE.len_utf8();
                        text_start = i;
                        continue;
                    }
                }
            }
            out.push(Segment::Stray(&text[i..i + open_len]));
            i += open_len;
            text_start = i;
        } else {
            i += c.len_utf8();
        }
    }
    if text_start < text.len() {
        out.push(Segment::Text(&text[text_start..]));
    }
    out
}

// -- lexicon ---------------------------------------------------------------

/// Case-insensitive single-token replacement table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BorrowLexicon {
    entries: BTreeMap<String, String>,
}

impl BorrowLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `source<TAB>target` lines; `#` at line start begins a comment.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lex = BorrowLexicon::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| LocError::Lexicon {
                line: n + 1,
                reason: reason.to_string(),
            };
            let (src, tgt) = line.split_once('\t').ok_or_else(|| err("expected source<TAB>target"))?;
            lex.insert(src.trim(), tgt.trim()).map_err(|r| err(&r))?;
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| LocError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_tsv(&text)
    }

    /// Adds an entry. Keys are single tokens, stored lowercased; values
    /// must be non-empty and free of emoji and placeholder brackets.
    pub fn insert(&mut self, source: &str, target: &str) -> std::result::Result<(), String> {
        if source.is_empty() || source.chars().any(char::is_whitespace) {
            return Err(format!("key `{source}` must be a single token"));
        }
        if target.is_empty() {
            return Err(format!("empty value for `{source}`"));
        }
        if target.contains([PLACEHOLDER_OPEN, PLACEHOLDER_CLOSE]) || !unicode::emoji_sequences(target).is_empty() {
            return Err(format!("value for `{source}` contains emoji or reserved characters"));
        }
        let key = source.to_lowercase();
        if self.entries.contains_key(&key) {
            return Err(format!("duplicate key `{key}`"));
        }
        self.entries.insert(key, target.to_string());
        Ok(())
    }

    /// Adds every entry of `other` whose key is not already present.
    pub fn extend(&mut self, other: &BorrowLexicon) {
        for (k, v) in &other.entries {
            self.entries.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }

    pub fn get(&self, token: &str) -> Option<&str> {
        self.entries.get(&token.to_lowercase()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Shipped Arabic-script table: borrowed slang plus proper names.
    pub fn builtin_arabic() -> Self {
        let mut lex = Self::from_tsv(BORROW_AR).expect("shipped lexicon parses");
        lex.extend(&Self::from_tsv(NAMES_AR).expect("shipped lexicon parses"));
        lex
    }

    /// The shipped table for `tgt`, empty for targets without one.
    pub fn builtin_for(tgt: &LangTag) -> Self {
        if tgt.language() == "ar" {
            Self::builtin_arabic()
        } else {
            Self::new()
        }
    }
}

// Maximal word-character runs outside emoji and placeholders, as char ranges.
fn word_runs(chars: &[char]) -> Vec<(usize, usize)> {
    let emoji = unicode::emoji_mask(chars);
    let mut runs = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == PLACEHOLDER_OPEN {
            // skip a whole placeholder so its digits are never a token
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            if j > i + 1 && chars.get(j) == Some(&PLACEHOLDER_CLOSE) {
                i = j + 1;
                continue;
            }
        }
        if unicode::is_word_char(chars[i]) && !emoji[i] {
            let start = i;
            while i < chars.len() && unicode::is_word_char(chars[i]) && !emoji[i] {
                i += 1;
            }
            runs.push((start, i));
        } else {
            i += 1;
        }
    }
    runs
}

/// Replaces every whole token found in `lexicon`, ignoring case.
pub fn transliterate_borrowed(text: &str, lexicon: &BorrowLexicon) -> String {
    if lexicon.is_empty() {
        return text.to_string();
    }
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (s, e) in word_runs(&chars) {
        let token: String = chars[s..e].iter().collect();
        if let Some(v) = lexicon.get(&token) {
            out.extend(&chars[last..s]);
            out.push_str(v);
            last = e;
        }
    }
    out.extend(&chars[last..]);
    out
}

// -- emoticons ---------------------------------------------------------------

/// Emoticon patterns, each anchored at the match position.
#[derive(Debug, Clone)]
pub struct EmoticonSet {
    patterns: Vec<Regex>,
}

static BUILTIN_EMOTICONS: LazyLock<EmoticonSet> =
    LazyLock::new(|| EmoticonSet::from_patterns(EMOTICON_PATTERNS).expect("shipped emoticon patterns compile"));

impl EmoticonSet {
    /// One regular expression per line; `#` lines are comments.
    pub fn from_patterns(text: &str) -> std::result::Result<Self, regex::Error> {
        let patterns = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| Regex::new(&format!("^(?:{})", l.trim())))
            .collect::<std::result::Result<_, _>>()?;
        Ok(EmoticonSet { patterns })
    }

    pub fn builtin() -> Self {
        BUILTIN_EMOTICONS.clone()
    }

    /// Longest emoticon starting at char `i`, as a char length.
    fn match_at(&self, chars: &[char], byte_of: &[usize], text: &str, i: usize) -> Option<usize> {
        let rest = &text[byte_of[i]..];
        let best_bytes = self.patterns.iter().filter_map(|p| p.find(rest)).map(|m| m.end()).max()?;
        if best_bytes == 0 {
            return None;
        }
        let end = byte_of.partition_point(|&b| b < byte_of[i] + best_bytes);
        let first = chars[i];
        let last = chars[end - 1];
        let glued_left = unicode::is_word_char(first) && i > 0 && unicode::is_word_char(chars[i - 1]);
        let glued_right = unicode::is_word_char(last) && chars.get(end).copied().is_some_and(unicode::is_word_char);
        (!glued_left && !glued_right).then_some(end - i)
    }
}

// -- extraction ----------------------------------------------------------------

/// Finds protected spans. Where candidates overlap, the one starting first
/// wins; at the same start the priority is reserved, url, mention, emoji,
/// hashtag, emoticon, borrowed.
#[derive(Debug, Clone)]
pub struct SpanExtractor {
    emoticons: EmoticonSet,
    lexicon: Option<BorrowLexicon>,
}

impl Default for SpanExtractor {
    fn default() -> Self {
        SpanExtractor {
            emoticons: EmoticonSet::builtin(),
            lexicon: None,
        }
    }
}

fn byte_ranges_to_chars(ranges: Vec<(usize, usize)>, byte_of: &[usize]) -> Vec<(usize, usize)> {
    ranges
        .into_iter()
        .map(|(s, e)| (byte_of.partition_point(|&b| b < s), byte_of.partition_point(|&b| b < e)))
        .collect()
}

impl SpanExtractor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Protects whole tokens found in `lexicon` as `borrowed` spans.
    pub fn with_lexicon(mut self, lexicon: BorrowLexicon) -> Self {
        self.lexicon = Some(lexicon);
        self
    }

    pub fn with_emoticons(mut self, emoticons: EmoticonSet) -> Self {
        self.emoticons = emoticons;
        self
    }

    pub fn spans(&self, text: &str) -> Vec<ProtectedSpan> {
        let chars: Vec<char> = text.chars().collect();
        let n = chars.len();
        // byte offset of every char, plus the end
        let mut byte_of: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        byte_of.push(text.len());
        let emoji = unicode::emoji_mask(&chars);

        let mut starts: Vec<Option<(SpanKind, usize)>> = vec![None; n];
        let mut offer = |kind: SpanKind, s: usize, e: usize| {
            if e > s && starts[s].is_none() {
                starts[s] = Some((kind, e));
            }
        };

        for (i, &c) in chars.iter().enumerate() {
            if c == PLACEHOLDER_OPEN || c == PLACEHOLDER_CLOSE {
                offer(SpanKind::Reserved, i, i + 1);
            }
        }
        for (s, e) in byte_ranges_to_chars(textprep::url_ranges(text), &byte_of) {
            offer(SpanKind::Url, s, e);
        }
        for (s, e) in byte_ranges_to_chars(textprep::mention_ranges(text), &byte_of) {
            offer(SpanKind::Mention, s, e);
        }
        let mut i = 0;
        while i < n {
            match unicode::emoji_len(&chars, i) {
                Some(len) => {
                    offer(SpanKind::Emoji, i, i + len);
                    i += len;
                }
                None => i += 1,
            }
        }
        let body_char = |j: usize| unicode::is_word_char(chars[j]) && !emoji[j];
        for i in 0..n {
            if chars[i] == '#' && (i == 0 || !unicode::is_word_char(chars[i - 1])) {
                let mut j = i + 1;
                while j < n && body_char(j) {
                    j += 1;
                }
                if j > i + 1 {
                    offer(SpanKind::Hashtag, i, j);
                }
            }
        }
        for i in 0..n {
            if let Some(len) = self.emoticons.match_at(&chars, &byte_of, text, i) {
                offer(SpanKind::Emoticon, i, i + len);
            }
        }
        if let Some(lex) = &self.lexicon {
            for (s, e) in word_runs(&chars) {
                let token: String = chars[s..e].iter().collect();
                if lex.get(&token).is_some() {
                    offer(SpanKind::Borrowed, s, e);
                }
            }
        }

        let mut spans = Vec::new();
        let mut i = 0;
        while i < n {
            match starts[i] {
                Some((kind, end)) => {
                    spans.push(ProtectedSpan {
                        kind,
                        start: i,
                        end,
                        payload: chars[i..end].iter().collect(),
                    });
                    i = end;
                }
                None => i += 1,
            }
        }
        spans
    }

    pub fn extract(&self, text: &str) -> Templated {
        let spans = self.spans(text);
        let chars: Vec<char> = text.chars().collect();
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for (k, s) in spans.iter().enumerate() {
            out.extend(&chars[last..s.start]);
            out.push_str(&placeholder(k));
            last = s.end;
        }
        out.extend(&chars[last..]);
        Templated { text: out, spans }
    }
}

/// Extracts emoji, emoticons, hashtags, mentions and URLs.
pub fn extract_protected_spans(text: &str) -> Templated {
    SpanExtractor::default().extract(text)
}

/// Replaces placeholders with `rendered`. The k-th placeholder in reading
/// order receives `rendered[k]`, so renderings always come out in original
/// span order even when a translation moved placeholders around.
pub fn reinsert_spans(templated: &str, spans: &[ProtectedSpan], rendered: &[String]) -> Result<String> {
    if rendered.len() != spans.len() {
        return Err(LocError::RenderingCount {
            spans: spans.len(),
            renderings: rendered.len(),
        });
    }
    let segs = segments(templated);
    let mut seen = vec![false; spans.len()];
    for s in &segs {
        if let Segment::Placeholder(k) = *s {
            if k >= spans.len() {
                return Err(LocError::UnknownPlaceholder {
                    ordinal: k,
                    spans: spans.len(),
                });
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(LocError::DuplicatePlaceholder(k));
            }
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(LocError::MissingPlaceholder(k));
    }
    let mut out = String::with_capacity(templated.len());
    let mut next = 0;
    for s in segs {
        match s {
            Segment::Text(t) | Segment::Stray(t) => out.push_str(t),
            Segment::Placeholder(_) => {
                out.push_str(&rendered[next]);
                next += 1;
            }
        }
    }
    Ok(out)
}

/// Makes a translated template well formed for `n` spans: drops emoji the
/// translation introduced, stray brackets, unknown and repeated
/// placeholders, and appends any missing placeholders in ordinal order.
pub fn repair_template(translated: &str, n: usize) -> String {
    let mut seen = vec![false; n];
    let mut out = String::with_capacity(translated.len());
    for seg in segments(translated) {
        match seg {
            Segment::Text(t) => out.push_str(&strip_emoji(t)),
            Segment::Stray(_) => {}
            Segment::Placeholder(k) => {
                if k < n && !std::mem::replace(&mut seen[k], true) {
                    out.push_str(&placeholder(k));
                }
            }
        }
    }
    for (k, _) in seen.iter().enumerate().filter(|(_, s)| !**s) {
        if !out.is_empty() && !out.ends_with(char::is_whitespace) {
            out.push(' ');
        }
        out.push_str(&placeholder(k));
    }
    out
}

fn strip_emoji(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mask = unicode::emoji_mask(&chars);
    chars.iter().zip(mask).filter(|(_, m)| !m).map(|(c, _)| *c).collect()
}

/// Splits a hashtag body into words on underscores and case changes.
pub fn segment_hashtag(body: &str) -> Vec<String> {
    let mut words = Vec::new();
    for part in body.split('_').filter(|p| !p.is_empty()) {
        let chars: Vec<char> = part.chars().collect();
        let mut cur = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let prev = i.checked_sub(1).map(|j| chars[j]);
            let next = chars.get(i + 1).copied();
            let boundary = c.is_uppercase()
                && prev.is_some_and(|p| p.is_lowercase() || (p.is_uppercase() && next.is_some_and(char::is_lowercase)));
            if boundary && !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            cur.push(c);
        }
        if !cur.is_empty() {
            words.push(cur);
        }
    }
    words
}

fn render_hashtag(translated: &str, original: &str) -> String {
    let cleaned: String = strip_emoji(translated)
        .chars()
        .filter(|c| !matches!(*c, '#' | PLACEHOLDER_OPEN | PLACEHOLDER_CLOSE))
        .collect();
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    if words.is_empty() {
        original.to_string()
    } else {
        format!("#{}", words.join("_"))
    }
}

// -- localization ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeOptions {
    /// Send hashtag bodies through the backend; otherwise keep them verbatim.
    pub translate_hashtags: bool,
    /// Concurrent backend requests issued by [`Localizer::localize_corpus`].
    pub concurrency: usize,
    /// Records per backend request.
    pub batch_size: usize,
    /// Largest tolerated fraction of failed records.
    pub max_failure_rate: f64,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        LocalizeOptions {
            translate_hashtags: true,
            concurrency: 4,
            batch_size: 16,
            max_failure_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub id: String,
    pub reason: String,
}

/// A localized corpus and the records that could not be translated (only
/// non-empty when the failure threshold allows it).
#[derive(Debug, Clone)]
pub struct LocalizedCorpus {
    pub corpus: Corpus,
    pub failures: Vec<RecordFailure>,
}

#[derive(Debug, Clone)]
pub struct Localizer {
    extractor: SpanExtractor,
    lexicon: BorrowLexicon,
    pub options: LocalizeOptions,
}

// What one record needs from the backend.
struct Plan {
    templated: Templated,
    translate_template: bool,
    hashtags: Vec<(usize, String)>, // span index, segmented body
}

impl Localizer {
    pub fn new(lexicon: BorrowLexicon, options: LocalizeOptions) -> Self {
        Localizer {
            extractor: SpanExtractor::default().with_lexicon(lexicon.clone()),
            lexicon,
            options,
        }
    }

    pub fn lexicon(&self) -> &BorrowLexicon {
        &self.lexicon
    }

    fn plan(&self, text: &str) -> Plan {
        let templated = self.extractor.extract(text);
        let hashtags = if self.options.translate_hashtags {
            templated
                .spans
                .iter()
                .enumerate()
                .filter(|(_, s)| s.kind == SpanKind::Hashtag)
                .map(|(k, s)| (k, segment_hashtag(&s.payload[1..]).join(" ")))
                .filter(|(_, body)| !body.is_empty())
                .collect()
        } else {
            Vec::new()
        };
        Plan {
            translate_template: templated.has_translatable_text(),
            templated,
            hashtags,
        }
    }

    fn items(plan: &Plan, key: usize) -> Vec<TextItem> {
        let mut items = Vec::new();
        if plan.translate_template {
            items.push(TextItem::new(format!("{key}"), plan.templated.text.clone()));
        }
        for (k, body) in &plan.hashtags {
            items.push(TextItem::new(format!("{key}#{k}"), body.clone()));
        }
        items
    }

    fn assemble(&self, plan: &Plan, key: usize, translations: &BTreeMap<String, String>) -> Result<String> {
        let t = &plan.templated;
        let template = if plan.translate_template {
            translations[&format!("{key}")].clone()
        } else {
            t.text.clone()
        };
        let template = transliterate_borrowed(&repair_template(&template, t.spans.len()), &self.lexicon);
        let rendered: Vec<String> = t
            .spans
            .iter()
            .enumerate()
            .map(|(k, s)| match s.kind {
                SpanKind::Borrowed => self.lexicon.get(&s.payload).unwrap_or(&s.payload).to_string(),
                SpanKind::Hashtag => match translations.get(&format!("{key}#{k}")) {
                    Some(tr) => render_hashtag(tr, &s.payload),
                    None => s.payload.clone(),
                },
                _ => s.payload.clone(),
            })
            .collect();
        reinsert_spans(&template, &t.spans, &rendered)
    }

    fn request(
        &self,
        backend: &dyn Backend,
        src: &LangTag,
        tgt: &LangTag,
        items: Vec<TextItem>,
    ) -> std::result::Result<BTreeMap<String, String>, BackendError> {
        if items.is_empty() {
            return Ok(BTreeMap::new());
        }
        let req = TranslateRequest {
            items,
            src: src.clone(),
            tgt: tgt.clone(),
            model_id: None,
        };
        let resp = backend.translate(&req)?;
        let got = crate::backend::conserve_ids(&req.items, &resp.items, |t| &t.id)?;
        Ok(got.into_iter().map(|t| (t.id, t.translation)).collect())
    }

    pub fn localize_text(&self, text: &str, src: &LangTag, tgt: &LangTag, backend: &dyn Backend) -> Result<String> {
        let plan = self.plan(text);
        let translations = self
            .request(backend, src, tgt, Self::items(&plan, 0))
            .map_err(|source| LocError::Backend {
                context: "text".into(),
                src: src.clone(),
                tgt: tgt.clone(),
                source: Box::new(source),
            })?;
        self.assemble(&plan, 0, &translations)
    }

    /// Localizes many texts with batched, bounded-concurrency requests.
    /// Output order follows input order; a failing batch is retried one
    /// record at a time so each failure is pinned to its own record.
    pub fn localize_texts<S: AsRef<str> + Sync>(
        &self,
        texts: &[S],
        src: &LangTag,
        tgt: &LangTag,
        backend: &dyn Backend,
    ) -> Vec<std::result::Result<String, BackendError>> {
        let plans: Vec<Plan> = texts.iter().map(|t| self.plan(t.as_ref())).collect();
        let batch = self.options.batch_size.max(1);
        let chunks: Vec<std::ops::Range<usize>> = (0..plans.len())
            .step_by(batch)
            .map(|s| s..(s + batch).min(plans.len()))
            .collect();

        let run_chunk = |range: std::ops::Range<usize>| -> Vec<std::result::Result<String, BackendError>> {
            let items: Vec<TextItem> = range.clone().flat_map(|i| Self::items(&plans[i], i)).collect();
            let one = |i: usize, tr: &BTreeMap<String, String>| {
                self.assemble(&plans[i], i, tr)
                    .map_err(|e| BackendError::InvalidResponse(e.to_string()))
            };
            match self.request(backend, src, tgt, items) {
                Ok(tr) => range.map(|i| one(i, &tr)).collect(),
                Err(_) if range.len() > 1 => range
                    .map(|i| {
                        self.request(backend, src, tgt, Self::items(&plans[i], i))
                            .and_then(|tr| one(i, &tr))
                    })
                    .collect(),
                Err(e) => vec![Err(e)],
            }
        };

        let workers = self.options.concurrency.max(1).min(chunks.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Vec<_>>> = chunks.iter().map(|_| Mutex::new(Vec::new())).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let c = next.fetch_add(1, Ordering::SeqCst);
                    if c >= chunks.len() {
                        break;
                    }
                    let r = run_chunk(chunks[c].clone());
                    *slots[c].lock().expect("slot lock") = r;
                });
            }
        });
        slots
            .into_iter()
            .flat_map(|s| s.into_inner().expect("slot lock"))
            .collect()
    }

    /// Localizes every record of a labeled corpus, keeping ids and labels.
    pub fn localize_corpus(
        &self,
        corpus: &Corpus,
        src: &LangTag,
        tgt: &LangTag,
        backend: &dyn Backend,
    ) -> Result<LocalizedCorpus> {
        let examples = corpus.as_labeled()?;
        if examples.is_empty() {
            return Err(LocError::Empty);
        }
        if let Some(e) = examples.iter().find(|e| &e.utterance.lang != src) {
            return Err(LocError::LanguageMismatch {
                id: e.id().to_string(),
                found: e.utterance.lang.clone(),
                expected: src.clone(),
            });
        }
        let texts: Vec<&str> = examples.iter().map(|e| e.utterance.text.as_str()).collect();
        let outputs = self.localize_texts(&texts, src, tgt, backend);

        let mut localized = Vec::with_capacity(examples.len());
        let mut failures = Vec::new();
        for (e, out) in examples.iter().zip(outputs) {
            match out {
                Ok(text) => localized.push(LabeledExample {
                    utterance: Utterance {
                        id: e.utterance.id.clone(),
                        text,
                        lang: tgt.clone(),
                        source: e.utterance.source.clone(),
                    },
                    task: e.task,
                    label: e.label,
                }),
                Err(err) => failures.push(RecordFailure {
                    id: e.id().to_string(),
                    reason: err.to_string(),
                }),
            }
        }
        let rate = failures.len() as f64 / examples.len() as f64;
        if rate > self.options.max_failure_rate || localized.is_empty() {
            return Err(LocError::FailureRate {
                failures,
                total: examples.len(),
                rate,
                threshold: self.options.max_failure_rate,
            });
        }
        let corpus = Corpus::labeled(&format!("{}-{}", corpus.name(), tgt), localized)?;
        Ok(LocalizedCorpus { corpus, failures })
    }
}

/// Localizes one text with default options.
pub fn localize_text(
    text: &str,
    src: &LangTag,
    tgt: &LangTag,
    backend: &dyn Backend,
    lexicon: &BorrowLexicon,
) -> Result<String> {
    Localizer::new(lexicon.clone(), LocalizeOptions::default()).localize_text(text, src, tgt, backend)
}

/// Localizes a labeled corpus with default options (no failures tolerated).
pub fn localize_corpus(
    corpus: &Corpus,
    src: &LangTag,
    tgt: &LangTag,
    backend: &dyn Backend,
    lexicon: &BorrowLexicon,
) -> Result<Corpus> {
    Localizer::new(lexicon.clone(), LocalizeOptions::default())
        .localize_corpus(corpus, src, tgt, backend)
        .map(|l| l.corpus)
}
