mod common;

use std::collections::BTreeMap;
use std::path::Path;

use locmt_core::backend::{
    Backend, BackendError, ClassifyRequest, ClassifyResponse, JobStatus, MockBackend, TrainingJob, TranslateRequest,
    TranslateResponse, Translation,
};
use locmt_core::corpus::{Corpus, LangTag};
use locmt_core::locrules::{
    self, extract_protected_spans, reinsert_spans, transliterate_borrowed, BorrowLexicon, LocError, LocalizeOptions,
    Localizer, SpanExtractor, SpanKind,
};
use proptest::prelude::*;
use regex::Regex;

/// A translator that misbehaves in every way the repair logic must absorb:
/// reverses token order, uppercases, sprinkles emoji, duplicates the first
/// placeholder and drops the last one.
struct Hostile;

impl Hostile {
    fn mangle(text: &str) -> String {
        let mut toks: Vec<String> = text.split_whitespace().map(str::to_uppercase).collect();
        toks.reverse();
        let mut out = toks.join(" 🎉 ");
        let segs = locrules::segments(&out);
        let ords: Vec<usize> = segs
            .iter()
            .filter_map(|s| match s {
                locrules::Segment::Placeholder(k) => Some(*k),
                _ => None,
            })
            .collect();
        if let Some(&first) = ords.first() {
            out.push_str(&format!(" {}", locrules::placeholder(first)));
        }
        if ords.len() > 1 {
            let last = locrules::placeholder(*ords.iter().max().unwrap());
            out = out.replacen(&last, "", 1);
        }
        out
    }
}

impl Backend for Hostile {
    fn translate(&self, req: &TranslateRequest) -> Result<TranslateResponse, BackendError> {
        Ok(TranslateResponse {
            items: req
                .items
                .iter()
                .rev()
                .map(|i| Translation {
                    id: i.id.clone(),
                    translation: Self::mangle(&i.text),
                })
                .collect(),
            model_id: "hostile".into(),
        })
    }
    fn classify(&self, _: &ClassifyRequest) -> Result<ClassifyResponse, BackendError> {
        unimplemented!()
    }
    fn submit_training_job(&self, _: &TrainingJob) -> Result<String, BackendError> {
        unimplemented!()
    }
    fn poll_job(&self, _: &str) -> Result<JobStatus, BackendError> {
        unimplemented!()
    }
    fn stop_job(&self, _: &str, _: Option<&str>) -> Result<JobStatus, BackendError> {
        unimplemented!()
    }
    fn describe(&self) -> String {
        "hostile".into()
    }
}

fn tag(s: &str) -> LangTag {
    s.parse().unwrap()
}

fn fr_lexicon() -> BorrowLexicon {
    BorrowLexicon::from_tsv("bonjour\tمرحبa\nami\tصاحب\ngénial\tرهيب\nsunset\tغروب\n".replace('a', "ا").as_str()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn extract_reinsert_round_trip(text in common::injected_text()) {
        let t = extract_protected_spans(&text);
        prop_assert_eq!(t.restore(), text.clone());
        let with_lex = SpanExtractor::new().with_lexicon(BorrowLexicon::builtin_arabic()).extract(&text);
        prop_assert_eq!(with_lex.restore(), text.clone());
        // spans sorted, disjoint, and payloads match their offsets
        let chars: Vec<char> = text.chars().collect();
        let mut prev_end = 0;
        for s in &t.spans {
            prop_assert!(s.start >= prev_end && s.end > s.start);
            prop_assert_eq!(chars[s.start..s.end].iter().collect::<String>(), s.payload.clone());
            prev_end = s.end;
        }
    }

    #[test]
    fn emoji_multiset_is_conserved(text in common::injected_text()) {
        let loc = Localizer::new(BorrowLexicon::builtin_arabic(), LocalizeOptions::default());
        for backend in [&Hostile as &dyn Backend, &MockBackend::with_lexicon(fr_lexicon())] {
            let out = loc.localize_text(&text, &tag("fr"), &tag("ar-lev"), backend).unwrap();
            prop_assert_eq!(common::emoji_codepoints(&out), common::emoji_codepoints(&text));
        }
    }

    #[test]
    fn hashtag_order_is_preserved(
        words in prop::collection::vec(prop::sample::select(vec!["bonjour", "ami", "le", "😀", ":-)", "@bob", "lol"]), 0..12),
        order in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
        positions in prop::collection::vec(0usize..13, 6),
    ) {
        let mut toks: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        let mut inserted = Vec::new();
        for (&k, &p) in order.iter().zip(&positions) {
            let p = p.min(toks.len());
            toks.insert(p, format!("#tag{k}"));
        }
        for t in &toks {
            if let Some(k) = t.strip_prefix("#tag") {
                inserted.push(format!("#TAG{k}"));
            }
        }
        let text = toks.join(" ");
        let loc = Localizer::new(BorrowLexicon::new(), LocalizeOptions::default());
        let out = loc.localize_text(&text, &tag("fr"), &tag("ar-lev"), &Hostile).unwrap();
        let re = Regex::new(r"#TAG\d+").unwrap();
        let found: Vec<String> = re.find_iter(&out).map(|m| m.as_str().to_string()).collect();
        prop_assert_eq!(found, inserted);
    }

    #[test]
    fn transliteration_ignores_case(word in "[a-zA-Z]{1,8}", pre in "[ .,!]{0,2}", post in "[ .,!]{0,2}") {
        let lex = BorrowLexicon::builtin_arabic();
        let text = format!("{pre}{word}{post}");
        let out = transliterate_borrowed(&text, &lex);
        let expected = match lex.iter().find(|(k, _)| *k == word.to_lowercase()) {
            Some((_, v)) => format!("{pre}{v}{post}"),
            None => text.clone(),
        };
        prop_assert_eq!(out, expected);
    }
}

#[test]
fn mock_dictionary_example() {
    let mock = MockBackend::with_lexicon(fr_lexicon());
    let lex = BorrowLexicon::new();
    let l = |t: &str| locrules::localize_text(t, &tag("fr"), &tag("ar-lev"), &mock, &lex).unwrap();
    assert_eq!(l("bonjour 😀"), "مرحبا 😀");
    assert_eq!(l(""), "");
    assert_eq!(l("😀"), "😀");
    assert_eq!(l("👨\u{200D}👩\u{200D}👧"), "👨\u{200D}👩\u{200D}👧");
}

#[test]
fn hashtags_borrowed_words_and_urls() {
    let mock = MockBackend::with_lexicon(fr_lexicon());
    let lex = BorrowLexicon::builtin_arabic();
    let out = locrules::localize_text(
        "bonjour John lol #Sunset https://t.co/LOL @ami :-)",
        &tag("fr"),
        &tag("ar-lev"),
        &mock,
        &lex,
    )
    .unwrap();
    assert_eq!(out, "مرحبا جون لول #غروب https://t.co/LOL @ami :-)");
}

#[test]
fn hashtag_translation_can_be_disabled() {
    let mock = MockBackend::with_lexicon(fr_lexicon());
    let opts = LocalizeOptions {
        translate_hashtags: false,
        ..Default::default()
    };
    let loc = Localizer::new(BorrowLexicon::new(), opts);
    assert_eq!(
        loc.localize_text("#Sunset bonjour", &tag("fr"), &tag("ar-lev"), &mock).unwrap(),
        "#Sunset مرحبا"
    );
}

#[test]
fn backend_errors_carry_pair_context() {
    let mock = MockBackend::from_toml("[[translate]]\nsrc = \"fr\"\ntgt = \"ar-lev\"\n", Path::new(".")).unwrap();
    let err = locrules::localize_text("hallo", &tag("de"), &tag("ar-lev"), &mock, &BorrowLexicon::new()).unwrap_err();
    match &err {
        LocError::Backend { source, .. } if matches!(**source, BackendError::UnsupportedPair { .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("de -> ar-lev"));
}

fn toy_corpus(n: usize) -> Corpus {
    let words = ["bonjour", "ami", "génial", "le", "film", "😀", "#Sunset", "lol", "@bob", "www.x.fr"];
    let examples = (0..n)
        .map(|i| {
            let text: Vec<&str> = (0..1 + i % 5).map(|k| words[(i * 7 + k * 3) % words.len()]).collect();
            let label = if i % 3 == 0 { "negative" } else { "positive" };
            common::labeled(&format!("fr-{i:03}"), &text.join(" "), "fr", label)
        })
        .collect();
    Corpus::labeled("toy-fr", examples).unwrap()
}

fn label_map(c: &Corpus) -> BTreeMap<String, String> {
    c.as_labeled()
        .unwrap()
        .iter()
        .map(|e| (e.id().to_string(), e.label.to_string()))
        .collect()
}

#[test]
fn labels_survive_localization_id_by_id() {
    let corpus = toy_corpus(100);
    let mock = MockBackend::with_lexicon(fr_lexicon());
    for backend in [&mock as &dyn Backend, &Hostile] {
        let out = locrules::localize_corpus(&corpus, &tag("fr"), &tag("ar-lev"), backend, &BorrowLexicon::builtin_arabic())
            .unwrap();
        assert_eq!(out.len(), 100);
        assert_eq!(label_map(&out), label_map(&corpus));
        assert!(out.as_labeled().unwrap().iter().all(|e| e.utterance.lang == tag("ar-lev")));
    }
}

#[test]
fn batched_corpus_matches_one_at_a_time() {
    let corpus = toy_corpus(37);
    let mock = MockBackend::with_lexicon(fr_lexicon());
    let lex = BorrowLexicon::builtin_arabic();
    let loc = Localizer::new(
        lex.clone(),
        LocalizeOptions {
            batch_size: 5,
            concurrency: 3,
            ..Default::default()
        },
    );
    let out = loc.localize_corpus(&corpus, &tag("fr"), &tag("ar-lev"), &mock).unwrap().corpus;
    for (a, b) in corpus.as_labeled().unwrap().iter().zip(out.as_labeled().unwrap()) {
        assert_eq!(a.id(), b.id());
        let single = locrules::localize_text(&a.utterance.text, &tag("fr"), &tag("ar-lev"), &mock, &lex).unwrap();
        assert_eq!(b.utterance.text, single);
    }
}

const FAILING: &str = r#"
fail_tokens = ["xxboomxx"]
[[translate]]
src = "fr"
tgt = "ar-lev"
entries = { bonjour = "مرحبا" }
"#;

#[test]
fn one_untranslatable_record_is_named() {
    let mut examples: Vec<_> = (0..10)
        .map(|i| common::labeled(&format!("r{i}"), "bonjour", "fr", "positive"))
        .collect();
    examples[6].utterance.text = "bonjour xxboomxx".into();
    let corpus = Corpus::labeled("c", examples).unwrap();
    let mock = MockBackend::from_toml(FAILING, Path::new(".")).unwrap();

    let strict = Localizer::new(BorrowLexicon::new(), LocalizeOptions::default());
    let err = strict.localize_corpus(&corpus, &tag("fr"), &tag("ar-lev"), &mock).unwrap_err();
    assert!(matches!(&err, LocError::FailureRate { failures, .. } if failures.len() == 1 && failures[0].id == "r6"));
    assert!(err.to_string().contains("r6"));

    let lenient = Localizer::new(
        BorrowLexicon::new(),
        LocalizeOptions {
            max_failure_rate: 0.2,
            ..Default::default()
        },
    );
    let out = lenient.localize_corpus(&corpus, &tag("fr"), &tag("ar-lev"), &mock).unwrap();
    assert_eq!(out.corpus.len(), 9);
    assert_eq!(out.failures.len(), 1);
}

#[test]
fn corpus_preconditions() {
    let mock = MockBackend::with_lexicon(BorrowLexicon::new());
    // an empty corpus cannot even be constructed
    assert_eq!(Corpus::labeled("e", vec![]).unwrap_err().to_string(), "empty corpus");
    let es = Corpus::labeled("es", vec![common::labeled("a", "hola", "es", "hate")]).unwrap();
    assert!(matches!(
        locrules::localize_corpus(&es, &tag("fr"), &tag("ar-lev"), &mock, &BorrowLexicon::new()),
        Err(LocError::LanguageMismatch { .. })
    ));
}

#[test]
fn span_kinds_in_priority_order() {
    let t = extract_protected_spans("@x_1 https://a.b/#c 😀#tag :) xD");
    let kinds: Vec<SpanKind> = t.spans.iter().map(|s| s.kind).collect();
    assert_eq!(
        kinds,
        vec![SpanKind::Mention, SpanKind::Url, SpanKind::Emoji, SpanKind::Hashtag, SpanKind::Emoticon, SpanKind::Emoticon]
    );
    let rendered: Vec<String> = t.spans.iter().map(|s| s.payload.to_uppercase()).collect();
    let out = reinsert_spans(&t.text, &t.spans, &rendered).unwrap();
    assert_eq!(out, "@X_1 HTTPS://A.B/#C 😀#TAG :) XD");
}
