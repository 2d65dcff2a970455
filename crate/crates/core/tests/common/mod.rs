#![allow(dead_code)]

use proptest::prelude::*;

/// Fragments mixing every script and artifact the cleaning steps care about.
pub const FRAGMENTS: &[&str] = &[
    "a", "Z", "é", "É", "ñ", "İ", "ß", "c'est", "l’été", "LOL", "Génial", "OK",
    "م", "ب", "ا", "أ", "إ", "آ", "ؤ", "ئ", "ة", "ى", "ـ", "مرحبا", "إسلام", "أحمد", "الى",
    "\u{064E}", "\u{064B}", "\u{0651}", "\u{0670}", "\u{0610}", "\u{06DD}", "\u{06E5}", "\u{0653}",
    "0", "7", "٣", "۴", "²",
    " ", "  ", "\t", "\n", "\u{00A0}", "\u{3000}",
    "!", "?", ".", ",", ":", "/", ";", "&", "#", "@", "'", "’", "-", "_", "(", ")", "«", "$", "+", "©",
    "😀", "👍🏽", "❤\u{FE0F}", "👨\u{200D}👩\u{200D}👧", "🇱🇧", "1\u{FE0F}\u{20E3}", "\u{1F3FB}",
    "\u{200B}", "\u{200C}", "\u{200D}", "\u{200E}", "\u{FEFF}", "\u{FFFD}", "\u{0007}", "\u{2060}",
    "&amp;", "&AMP;", "&lt;", "&#1605;", "&#x41;", "&nbsp;", "&bogus;", "&amp;amp;",
    "https://t.co/abc", "HTTP://X.Y", "www.site.org", "http://", "ht", "tp://",
    "@user", "@x_1", "#Sunset", "#غروب", "de", "la", "في", "و",
    ":-)", ":)", "xD", "<3",
    "\u{E000}", "\u{E001}",
];

pub fn mixed_text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(FRAGMENTS), 0..24).prop_map(|v| v.concat())
}

/// Mixed text plus occasional fully arbitrary characters.
pub fn wild_text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            4 => prop::sample::select(FRAGMENTS).prop_map(str::to_string),
            1 => any::<char>().prop_map(|c| c.to_string()),
        ],
        0..24,
    )
    .prop_map(|v| v.concat())
}

pub const EMOJI: &[&str] = &[
    "😀", "👍🏽", "❤\u{FE0F}", "👨\u{200D}👩\u{200D}👧", "🇱🇧", "1\u{FE0F}\u{20E3}", "🔥", "😂", "🙏🏻",
];

pub const HASHTAGS: &[&str] = &["#Sunset", "#GoodMorning", "#غروب", "#fin_de_semana", "#x1", "#ÉtéChaud"];

/// Wild text with emoji and hashtags injected at random positions.
pub fn injected_text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            3 => wild_text(),
            1 => prop::sample::select(EMOJI).prop_map(str::to_string),
            1 => prop::sample::select(HASHTAGS).prop_map(|h| format!(" {h} ")),
        ],
        0..8,
    )
    .prop_map(|v| v.concat())
}

pub fn labeled(id: &str, text: &str, lang: &str, label: &str) -> locmt_core::corpus::LabeledExample {
    let label: locmt_core::corpus::Label = label.parse().unwrap();
    locmt_core::corpus::LabeledExample {
        utterance: locmt_core::corpus::Utterance {
            id: id.into(),
            text: text.into(),
            lang: lang.parse().unwrap(),
            source: None,
        },
        task: label.task(),
        label,
    }
}

/// Multiset of emoji code points (pictographs, modifiers, flags' letters).
pub fn emoji_codepoints(text: &str) -> Vec<char> {
    use locmt_core::unicode::*;
    let mut v: Vec<char> = text
        .chars()
        .filter(|&c| is_pictographic(c) || is_skin_tone(c) || is_regional_indicator(c))
        .collect();
    v.sort_unstable();
    v
}

/// Workspace root, for shipped fixtures and presets.
pub fn repo_root() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(rel: &str) -> std::path::PathBuf {
    repo_root().join("fixtures").join(rel)
}

/// Labeled corpus with ids `r00000..`, class taken from `labels`.
pub fn labeled_corpus(name: &str, labels: &[bool]) -> locmt_core::corpus::Corpus {
    let examples = labels
        .iter()
        .enumerate()
        .map(|(i, &pos)| labeled(&format!("r{i:05}"), &format!("texte {i}"), "fr", if pos { "positive" } else { "negative" }))
        .collect();
    locmt_core::corpus::Corpus::labeled(name, examples).unwrap()
}

/// Parallel fr -> ar-lev corpus of `n` pairs with ids `p00000..`.
pub fn parallel_corpus(name: &str, n: usize) -> locmt_core::corpus::Corpus {
    use locmt_core::corpus::{ParallelPair, Utterance};
    let utt = |id: String, text: String, lang: &str| Utterance {
        id,
        text,
        lang: lang.parse().unwrap(),
        source: None,
    };
    let pairs = (0..n)
        .map(|i| ParallelPair {
            pair_id: format!("p{i:05}"),
            source: utt(format!("p{i:05}-src"), format!("phrase {i}"), "fr"),
            target: utt(format!("p{i:05}-tgt"), format!("جملة {i}"), "ar-lev"),
        })
        .collect();
    locmt_core::corpus::Corpus::parallel(name, pairs).unwrap()
}

/// Checks every guarantee of a split: partition of the ids, sizes within
/// one record of the ratios (per class when stratified), input order kept
/// inside each part, manifests that match their records, and the same
/// assignment for the same seed regardless of input order.
pub fn check_split(
    c: &locmt_core::corpus::Corpus,
    spec: &locmt_core::corpus::SplitSpec,
) -> Result<Vec<usize>, String> {
    use locmt_core::corpus::{split_corpus, Corpus, Records};
    use std::collections::{BTreeMap, BTreeSet};

    let parts = split_corpus(c, spec).map_err(|e| e.to_string())?;
    let names: Vec<&str> = parts.iter().map(|(n, _)| n.as_str()).collect();
    let want: Vec<&str> = spec.ratios.iter().map(|(n, _)| n.as_str()).collect();
    if names != want {
        return Err(format!("split names {names:?}, expected {want:?}"));
    }

    let input: Vec<&str> = c.ids();
    let mut seen = BTreeSet::new();
    for (name, part) in &parts {
        let ids = part.ids();
        // Input order is kept: ids appear in the same relative order.
        let mut it = input.iter();
        for id in &ids {
            if !it.any(|x| x == id) {
                return Err(format!("split {name} reorders `{id}`"));
            }
            if !seen.insert(id.to_string()) {
                return Err(format!("`{id}` is in two splits"));
            }
        }
        let m = part.manifest();
        if m.total as usize != part.len() || !m.is_consistent() {
            return Err(format!("split {name} manifest disagrees with its records"));
        }
        if let Records::Labeled(v) = part.records() {
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for e in v {
                *counts.entry(e.label.to_string()).or_default() += 1;
            }
            for (label, n) in counts {
                if m.count(&label) != n {
                    return Err(format!("split {name} reports {} {label}, has {n}", m.count(&label)));
                }
            }
        }
    }
    if seen.len() != input.len() {
        return Err(format!("{} of {} ids assigned", seen.len(), input.len()));
    }

    let sizes: Vec<usize> = parts.iter().map(|(_, p)| p.len()).collect();
    let within = |n: usize, got: usize, f: f64| (got as f64 - n as f64 * f).abs() < 1.0 + 1e-9;
    if spec.stratified {
        let class_of = |p: &Corpus| -> BTreeMap<String, usize> {
            let mut m = BTreeMap::new();
            for e in p.as_labeled().unwrap() {
                *m.entry(e.label.to_string()).or_default() += 1;
            }
            m
        };
        let all = class_of(c);
        for ((name, part), (_, f)) in parts.iter().zip(&spec.ratios) {
            let got = class_of(part);
            for (label, &n) in &all {
                let g = got.get(label).copied().unwrap_or(0);
                if !within(n, g, *f) {
                    return Err(format!("split {name} has {g} of {n} `{label}` at ratio {f}"));
                }
            }
        }
    } else {
        for ((name, _), (&got, (_, f))) in parts.iter().zip(sizes.iter().zip(&spec.ratios)) {
            if !within(c.len(), got, *f) {
                return Err(format!("split {name} has {got} of {} at ratio {f}", c.len()));
            }
        }
    }

    // Same seed, reversed input: identical assignment.
    let reversed = match c.records() {
        Records::Labeled(v) => Corpus::labeled(c.name(), v.iter().rev().cloned().collect()),
        Records::Parallel(v) => Corpus::parallel(c.name(), v.iter().rev().cloned().collect()),
    }
    .unwrap();
    let again = split_corpus(&reversed, spec).map_err(|e| e.to_string())?;
    for ((name, a), (_, b)) in parts.iter().zip(&again) {
        let sa: BTreeSet<&str> = a.ids().into_iter().collect();
        let sb: BTreeSet<&str> = b.ids().into_iter().collect();
        if sa != sb {
            return Err(format!("split {name} depends on input order"));
        }
    }
    Ok(sizes)
}
