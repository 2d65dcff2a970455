//! Translation metrics (corpus BLEU, ROUGE recall, their harmonic mean) and
//! classification reports with consistency checks for published tables.
//!
//! Corpus metrics first sum integer counts over all pairs and divide once,
//! so results do not depend on pair order or on how the work is split
//! across threads.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::textprep::CompiledPipeline;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("empty corpus")]
    Empty,
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// 0 to 100, used for translation metrics.
    Percent,
    /// 0 to 1, used for classification rates.
    Unit,
}

impl Scale {
    pub fn max(self) -> f64 {
        match self {
            Scale::Percent => 100.0,
            Scale::Unit => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    pub scale: Scale,
}

impl MetricValue {
    pub fn new(name: impl Into<String>, value: f64, scale: Scale) -> Self {
        MetricValue {
            name: name.into(),
            value,
            scale,
        }
    }

    pub fn in_range(&self) -> bool {
        self.value.is_finite() && self.value >= 0.0 && self.value <= self.scale.max()
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scale {
            Scale::Percent => write!(f, "{} = {:.2}", self.name, self.value),
            Scale::Unit => write!(f, "{} = {:.4}", self.name, self.value),
        }
    }
}

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// A zero n-gram precision becomes `epsilon / candidates`.
    AddEpsilon { epsilon: f64 },
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::AddEpsilon { epsilon: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeVariant {
    /// Clipped unigram matches over reference unigrams, micro-averaged.
    #[default]
    Rouge1Recall,
    /// Longest common subsequence length over reference length, micro-averaged.
    RougeLRecall,
}

impl RougeVariant {
    pub fn id(self) -> &'static str {
        match self {
            RougeVariant::Rouge1Recall => "rouge1-recall-micro",
            RougeVariant::RougeLRecall => "rougeL-recall-micro",
        }
    }
}

impl std::str::FromStr for RougeVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rouge1" | "rouge1-recall-micro" => Ok(RougeVariant::Rouge1Recall),
            "rougeL" | "rougel" | "rougeL-recall-micro" => Ok(RougeVariant::RougeLRecall),
            other => Err(format!("unknown ROUGE variant `{other}`")),
        }
    }
}

/// Which metric definitions produced a set of numbers. Embedded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVariants {
    pub bleu: String,
    pub rouge: String,
    pub combined: String,
}

impl MetricVariants {
    pub fn new(smoothing: Smoothing, rouge: RougeVariant) -> Self {
        let bleu = match smoothing {
            Smoothing::None => "bleu-4-corpus-unsmoothed".to_string(),
            Smoothing::AddEpsilon { epsilon } => format!("bleu-4-corpus-add-epsilon-{epsilon}"),
        };
        MetricVariants {
            bleu,
            rouge: rouge.id().to_string(),
            combined: "harmonic-mean(bleu, rouge)".to_string(),
        }
    }
}

impl Default for MetricVariants {
    fn default() -> Self {
        Self::new(Smoothing::default(), RougeVariant::default())
    }
}

/// Integer n-gram counts for one or more hypothesis/reference pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NgramCounts {
    pub matches: [u64; MAX_ORDER],
    pub candidates: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl NgramCounts {
    pub fn merge(mut self, other: NgramCounts) -> NgramCounts {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.candidates[n] += other.candidates[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
        self
    }
}

fn ngram_histogram<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], u64> {
    let mut h = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *h.entry(w).or_insert(0) += 1;
        }
    }
    h
}

/// Clipped n-gram statistics for a single pair.
pub fn pair_counts<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> NgramCounts {
    let hyp: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let mut c = NgramCounts {
        hyp_len: hyp.len() as u64,
        ref_len: reference.len() as u64,
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let h = ngram_histogram(&hyp, n);
        let r = ngram_histogram(&reference, n);
        c.candidates[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
        c.matches[n - 1] = h
            .iter()
            .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
            .sum();
    }
    c
}

fn check_pairs<A, B>(hyps: &[A], refs: &[B]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Summed n-gram counts over the whole corpus.
pub fn corpus_counts<S: AsRef<str> + Sync>(hyps: &[Vec<S>], refs: &[Vec<S>], exec: Execution) -> Result<NgramCounts> {
    check_pairs(hyps, refs)?;
    let idx: Vec<usize> = (0..hyps.len()).collect();
    Ok(exec::map_reduce(
        exec,
        &idx,
        |&i| pair_counts(&hyps[i], &refs[i]),
        NgramCounts::default,
        NgramCounts::merge,
    ))
}

/// BLEU (0 to 100) from summed counts.
///
/// Orders with no candidate n-grams at all are left out of the geometric
/// mean, so a corpus of very short segments is scored on the orders it
/// can support. An empty hypothesis side scores 0.
pub fn bleu_from_counts(c: &NgramCounts, smoothing: Smoothing) -> f64 {
    if c.hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 0..MAX_ORDER {
        let total = c.candidates[n];
        if total == 0 {
            continue;
        }
        let p = if c.matches[n] > 0 {
            c.matches[n] as f64 / total as f64
        } else {
            match smoothing {
                Smoothing::None => return 0.0,
                Smoothing::AddEpsilon { epsilon } => epsilon / total as f64,
            }
        };
        log_sum += p.ln();
        orders += 1;
    }
    let bp = if c.hyp_len < c.ref_len {
        (1.0 - c.ref_len as f64 / c.hyp_len as f64).exp()
    } else {
        1.0
    };
    (100.0 * bp * (log_sum / orders as f64).exp()).clamp(0.0, 100.0)
}

/// Corpus BLEU with the default add-epsilon (0.1) smoothing.
pub fn corpus_bleu<S: AsRef<str> + Sync>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<MetricValue> {
    corpus_bleu_with(hyps, refs, Smoothing::default(), Execution::default())
}

pub fn corpus_bleu_with<S: AsRef<str> + Sync>(
    hyps: &[Vec<S>],
    refs: &[Vec<S>],
    smoothing: Smoothing,
    exec: Execution,
) -> Result<MetricValue> {
    let c = corpus_counts(hyps, refs, exec)?;
    Ok(MetricValue::new("bleu", bleu_from_counts(&c, smoothing), Scale::Percent))
}

fn clipped_unigrams<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> u64 {
    let mut r: HashMap<&str, u64> = HashMap::new();
    for t in reference {
        *r.entry(t.as_ref()).or_insert(0) += 1;
    }
    let mut matched = 0;
    for t in hyp {
        if let Some(k) = r.get_mut(t.as_ref()) {
            if *k > 0 {
                *k -= 1;
                matched += 1;
            }
        }
    }
    matched
}

fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> u64 {
    let mut prev = vec![0u64; b.len() + 1];
    let mut cur = vec![0u64; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Corpus ROUGE-1 recall (0 to 100).
pub fn rouge_recall<S: AsRef<str> + Sync>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<MetricValue> {
    rouge_recall_with(hyps, refs, RougeVariant::default(), Execution::default())
}

pub fn rouge_recall_with<S: AsRef<str> + Sync>(
    hyps: &[Vec<S>],
    refs: &[Vec<S>],
    variant: RougeVariant,
    exec: Execution,
) -> Result<MetricValue> {
    check_pairs(hyps, refs)?;
    let idx: Vec<usize> = (0..hyps.len()).collect();
    let (matched, total) = exec::map_reduce(
        exec,
        &idx,
        |&i| {
            let m = match variant {
                RougeVariant::Rouge1Recall => clipped_unigrams(&hyps[i], &refs[i]),
                RougeVariant::RougeLRecall => lcs_len(&hyps[i], &refs[i]),
            };
            (m, refs[i].len() as u64)
        },
        || (0u64, 0u64),
        |a, b| (a.0 + b.0, a.1 + b.1),
    );
    let value = if total == 0 {
        0.0
    } else {
        100.0 * matched as f64 / total as f64
    };
    Ok(MetricValue::new("rouge", value, Scale::Percent))
}

/// Harmonic mean of BLEU and ROUGE; 0 when both are 0.
pub fn combined_f(bleu: &MetricValue, rouge: &MetricValue) -> MetricValue {
    debug_assert_eq!(bleu.scale, rouge.scale);
    let (b, r) = (bleu.value, rouge.value);
    // The harmonic mean lies between its inputs; the clamp only removes
    // rounding so that the identities hold bit for bit.
    let value = if b == r {
        b
    } else if b + r > 0.0 {
        (2.0 * b * r / (b + r)).clamp(b.min(r), b.max(r))
    } else {
        0.0
    };
    MetricValue::new("f_bleu_rouge", value, bleu.scale)
}

/// BLEU, ROUGE and their combination for one translated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationScores {
    pub bleu: MetricValue,
    pub rouge: MetricValue,
    pub combined: MetricValue,
    pub variants: MetricVariants,
    pub pairs: usize,
}

/// Scores raw hypothesis/reference texts: both sides are cleaned with
/// `pipeline` and split on whitespace first.
pub fn score_translations<S: AsRef<str> + Sync>(
    hyps: &[S],
    refs: &[S],
    pipeline: &CompiledPipeline,
    smoothing: Smoothing,
    rouge: RougeVariant,
    exec: Execution,
) -> Result<TranslationScores> {
    check_pairs(hyps, refs)?;
    let tokenize = |t: &S| -> Vec<String> {
        pipeline
            .apply(t.as_ref())
            .split_whitespace()
            .map(str::to_string)
            .collect()
    };
    let h = exec::map_collect(exec, hyps, tokenize);
    let r = exec::map_collect(exec, refs, tokenize);
    let bleu = corpus_bleu_with(&h, &r, smoothing, exec)?;
    let rouge_v = rouge_recall_with(&h, &r, rouge, exec)?;
    let combined = combined_f(&bleu, &rouge_v);
    Ok(TranslationScores {
        bleu,
        rouge: rouge_v,
        combined,
        variants: MetricVariants::new(smoothing, rouge),
        pairs: hyps.len(),
    })
}

// -- classification ---------------------------------------------------------

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }

    pub fn is_well_formed(&self) -> bool {
        let k = self.classes.len();
        self.counts.len() == k && self.counts.iter().all(|r| r.len() == k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: Vec<String>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 from precision and recall; 0 when both are 0.
pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

impl ClassReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let k = confusion.classes.len();
        let mut precision = Vec::with_capacity(k);
        let mut recall = Vec::with_capacity(k);
        let mut f1 = Vec::with_capacity(k);
        let mut support = Vec::with_capacity(k);
        for i in 0..k {
            let tp = confusion.counts[i][i];
            let p = ratio(tp, confusion.col_sum(i));
            let r = ratio(tp, confusion.row_sum(i));
            precision.push(p);
            recall.push(r);
            f1.push(f1_score(p, r));
            support.push(confusion.row_sum(i));
        }
        ClassReport {
            classes: confusion.classes.clone(),
            accuracy: ratio(confusion.trace(), confusion.total()),
            precision,
            recall,
            f1,
            support,
            confusion,
        }
    }

    pub fn index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn precision_of(&self, class: &str) -> Option<f64> {
        self.index(class).map(|i| self.precision[i])
    }

    pub fn recall_of(&self, class: &str) -> Option<f64> {
        self.index(class).map(|i| self.recall[i])
    }

    pub fn f1_of(&self, class: &str) -> Option<f64> {
        self.index(class).map(|i| self.f1[i])
    }

    pub fn macro_f1(&self) -> f64 {
        if self.f1.is_empty() {
            0.0
        } else {
            self.f1.iter().sum::<f64>() / self.f1.len() as f64
        }
    }

    /// Plain-text table: one row per class plus accuracy, two decimals.
    pub fn render_table(&self) -> String {
        let mut s = format!("{:<12} {:>9} {:>9} {:>9} {:>9}\n", "class", "precision", "recall", "f1", "support");
        for i in 0..self.classes.len() {
            s += &format!(
                "{:<12} {:>9.2} {:>9.2} {:>9.2} {:>9}\n",
                self.classes[i],
                round2(self.precision[i]),
                round2(self.recall[i]),
                round2(self.f1[i]),
                self.support[i]
            );
        }
        s += &format!("{:<12} {:>9.2}\n", "accuracy", round2(self.accuracy));
        s
    }
}

/// Confusion matrix plus per-class precision, recall and F1.
pub fn classification_report<S: AsRef<str>, C: AsRef<str>>(
    truth: &[S],
    predicted: &[S],
    classes: &[C],
) -> Result<ClassReport> {
    check_pairs(truth, predicted)?;
    let classes: Vec<String> = classes.iter().map(|c| c.as_ref().to_string()).collect();
    let k = classes.len();
    let index = |l: &str| {
        classes
            .iter()
            .position(|c| c == l)
            .ok_or_else(|| MetricError::UnknownLabel(l.to_string()))
    };
    let mut counts = vec![vec![0u64; k]; k];
    for (t, p) in truth.iter().zip(predicted) {
        counts[index(t.as_ref())?][index(p.as_ref())?] += 1;
    }
    Ok(ClassReport::from_confusion(ConfusionMatrix { classes, counts }))
}

/// Half-up rounding to two decimals.
pub fn round2(x: f64) -> f64 {
    ((x * 100.0) + 0.5 + 1e-9).floor() / 100.0
}

// -- consistency of reported numbers -----------------------------------------

/// Scores for one class as printed in a table. Missing cells are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedClass {
    pub label: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// One model's row of a results table. Rates are on the 0 to 1 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedRow {
    pub model: String,
    pub classes: Vec<ReportedClass>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub model: String,
    pub label: Option<String>,
    pub quantity: String,
    pub reported: f64,
    /// Interval of values consistent with the other reported numbers.
    pub expected: (f64, f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.model)?;
        if let Some(l) = &self.label {
            write!(f, " [{l}]")?;
        }
        write!(
            f,
            ": {} = {} not in [{:.4}, {:.4}]",
            self.quantity, self.reported, self.expected.0, self.expected.1
        )
    }
}

/// Anything whose printed scores can be checked for internal consistency.
pub trait ReportedScores {
    fn reported_row(&self) -> ReportedRow;

    /// Exact counts, when known. Values derived from counts are checked
    /// point-wise; values without counts are treated as rounded.
    fn counts(&self) -> Option<&ConfusionMatrix> {
        None
    }
}

impl ReportedScores for ReportedRow {
    fn reported_row(&self) -> ReportedRow {
        self.clone()
    }
}

impl ReportedScores for ClassReport {
    fn reported_row(&self) -> ReportedRow {
        ReportedRow {
            model: "computed".into(),
            classes: (0..self.classes.len())
                .map(|i| ReportedClass {
                    label: self.classes[i].clone(),
                    precision: Some(self.precision[i]),
                    recall: Some(self.recall[i]),
                    f1: Some(self.f1[i]),
                })
                .collect(),
            accuracy: Some(self.accuracy),
        }
    }

    fn counts(&self) -> Option<&ConfusionMatrix> {
        Some(&self.confusion)
    }
}

// Binary accuracy implied by the two class F1 scores: with E = FP + FN,
// TP = F₊E / 2(1 - F₊) and TN = F₋E / 2(1 - F₋), so accuracy = (x + y) / (x + y + 1).
fn accuracy_from_f1s(f_a: f64, f_b: f64) -> f64 {
    if f_a >= 1.0 || f_b >= 1.0 {
        return 1.0;
    }
    let x = f_a / (2.0 * (1.0 - f_a));
    let y = f_b / (2.0 * (1.0 - f_b));
    (x + y) / (x + y + 1.0)
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Checks that every F1 matches 2PR/(P+R) and accuracy matches trace/total
/// within `tolerance`.
///
/// When exact counts are available (a computed [`ClassReport`]) the checks
/// are point-wise. Otherwise each printed number stands for the interval
/// `value ± tolerance` (a table rounded to two decimals carries ±0.005 on
/// every cell), and a row is consistent when some choice of true values
/// inside those intervals satisfies the identities. For binary rows
/// without counts, accuracy is checked against the value implied by the
/// two class F1 scores.
pub fn validate_report_consistency(report: &impl ReportedScores, tolerance: f64) -> Vec<Violation> {
    let row = report.reported_row();
    let exact = report.counts();
    let mut out = Vec::new();
    let violation = |label: Option<&str>, quantity: &str, reported: f64, lo: f64, hi: f64| Violation {
        model: row.model.clone(),
        label: label.map(str::to_string),
        quantity: quantity.to_string(),
        reported,
        expected: (lo, hi),
    };

    for c in &row.classes {
        for (name, v) in [("precision", c.precision), ("recall", c.recall), ("f1", c.f1)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    out.push(violation(Some(&c.label), name, v, 0.0, 1.0));
                }
            }
        }
        if let (Some(p), Some(r), Some(f)) = (c.precision, c.recall, c.f1) {
            let (lo, hi) = if exact.is_some() {
                let e = f1_score(p, r);
                (e - tolerance, e + tolerance)
            } else {
                let lo = f1_score(clamp01(p - tolerance), clamp01(r - tolerance));
                let hi = f1_score(clamp01(p + tolerance), clamp01(r + tolerance));
                (lo - tolerance, hi + tolerance)
            };
            if f < lo || f > hi {
                out.push(violation(Some(&c.label), "f1", f, lo, hi));
            }
        }
    }

    if let Some(acc) = row.accuracy {
        if !(0.0..=1.0).contains(&acc) {
            out.push(violation(None, "accuracy", acc, 0.0, 1.0));
        } else if let Some(m) = exact {
            let e = ratio(m.trace(), m.total());
            if (acc - e).abs() > tolerance {
                out.push(violation(None, "accuracy", acc, e - tolerance, e + tolerance));
            }
        } else if let [a, b] = row.classes.as_slice() {
            if let (Some(fa), Some(fb)) = (a.f1, b.f1) {
                let lo = accuracy_from_f1s(clamp01(fa - tolerance), clamp01(fb - tolerance)) - tolerance;
                let hi = accuracy_from_f1s(clamp01(fa + tolerance), clamp01(fb + tolerance)) + tolerance;
                if acc < lo || acc > hi {
                    out.push(violation(None, "accuracy", acc, lo, hi));
                }
            }
        }
    }
    out
}
