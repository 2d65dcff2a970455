mod common;

use std::fs;
use std::path::Path;

use locmt_core::backend::{self, BackendConfig, MockBackend};
use locmt_core::corpus::{load_corpus, CorpusKind};
use locmt_core::evalharness::{
    run_crossdialect_hate, run_localized_sentiment, run_nmt_eval, run_scenario, EvalReport, HarnessError, Scenario,
    ScenarioKind, REPORT_TOLERANCE, TABLE2_LABEL_NOTE,
};
use locmt_core::metrics::{round2, validate_report_consistency};

fn preset(kind: &str, out: &Path) -> Scenario {
    let mut s = Scenario::load(&common::repo_root().join(format!("presets/scenarios/{kind}.toml"))).unwrap();
    s.output_dir = out.to_path_buf();
    s
}

fn mock(s: &Scenario) -> MockBackend {
    let path = s.backend.endpoint.strip_prefix("mock:").unwrap();
    MockBackend::from_path(Path::new(path)).unwrap()
}

fn run(s: &Scenario) -> Result<EvalReport, HarnessError> {
    let m = mock(s);
    match s.kind {
        ScenarioKind::NmtEval => run_nmt_eval(s, &m),
        ScenarioKind::LocalizedSentiment => run_localized_sentiment(s, &m, &m),
        ScenarioKind::CrossdialectHate => run_crossdialect_hate(s, &m, &m),
    }
}

// Mock description with lexicon paths made absolute, so it can be edited
// and written elsewhere.
fn mock_text(name: &str) -> String {
    let dir = common::fixture("mock");
    fs::read_to_string(dir.join(name))
        .unwrap()
        .replace("lexicon = \"", &format!("lexicon = \"{}/", dir.display()))
}

#[test]
fn translation_with_reference_lexicon_scores_one_hundred() {
    let out = tempfile::tempdir().unwrap();
    let s = preset("nmt", out.path());
    let r = run(&s).unwrap();
    assert_eq!(r.translation.len(), 1);
    let row = &r.translation[0];
    assert_eq!(row.direction, "fr -> ar-lev");
    assert_eq!(row.scores.pairs, 10);
    assert!((row.scores.bleu.value - 100.0).abs() < 1e-9);
    assert!((row.scores.rouge.value - 100.0).abs() < 1e-9);
    assert!((row.scores.combined.value - 100.0).abs() < 1e-9);
}

#[test]
fn translation_report_names_metric_variants() {
    let out = tempfile::tempdir().unwrap();
    let r = run(&preset("nmt", out.path())).unwrap();
    let v = &r.translation[0].scores.variants;
    assert_eq!(v.bleu, "bleu-4-corpus-add-epsilon-0.1");
    assert_eq!(v.rouge, "rouge1-recall-micro");
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["translation"][0]["scores"]["variants"]["rouge"], "rouge1-recall-micro");
    assert!(r.render_text().contains("bleu-4-corpus-add-epsilon-0.1"));
}

#[test]
fn empty_translations_of_plain_text_score_zero() {
    let out = tempfile::tempdir().unwrap();
    let lines: String = (1..=10)
        .map(|i| {
            format!(
                "{{\"pair_id\":\"q{i}\",\"src_text\":\"merci beaucoup numéro {i}\",\"src_lang\":\"fr\",\"tgt_text\":\"شكرا كتير رقم {i}\",\"tgt_lang\":\"ar-lev\"}}\n"
            )
        })
        .collect();
    let test = out.path().join("plain.jsonl");
    fs::write(&test, lines).unwrap();
    let mut s = preset("nmt", out.path());
    s.inputs.insert("test".into(), test);
    let m = MockBackend::from_toml(&mock_text("nmt-empty.toml"), Path::new(".")).unwrap();
    let r = run_nmt_eval(&s, &m).unwrap();
    let sc = &r.translation[0].scores;
    // No hypothesis tokens: brevity penalty exp(1 - r/0) is 0, recall 0/40.
    assert_eq!(sc.bleu.value, 0.0);
    assert_eq!(sc.rouge.value, 0.0);
    assert_eq!(sc.combined.value, 0.0);
}

#[test]
fn empty_translations_keep_protected_spans() {
    // Only the emoji, the untranslatable hashtag and the transliterated name
    // survive: hypothesis tokens 😍, #soir, ماري against 29 reference
    // tokens. Unigram matches 2 of 3; no higher-order candidates, so the
    // effective order is 1 and BLEU = 100 * (2/3) * exp(1 - 29/3).
    let out = tempfile::tempdir().unwrap();
    let s = preset("nmt", out.path());
    let m = MockBackend::from_toml(&mock_text("nmt-empty.toml"), Path::new(".")).unwrap();
    let r = run_nmt_eval(&s, &m).unwrap();
    let sc = &r.translation[0].scores;
    let bleu = 100.0 * (2.0 / 3.0) * (1.0f64 - 29.0 / 3.0).exp();
    let rouge = 100.0 * 2.0 / 29.0;
    assert!((sc.bleu.value - bleu).abs() < 1e-9, "{} vs {bleu}", sc.bleu.value);
    assert!((sc.rouge.value - rouge).abs() < 1e-9, "{} vs {rouge}", sc.rouge.value);
    assert!((sc.combined.value - 2.0 * bleu * rouge / (bleu + rouge)).abs() < 1e-9);
}

#[test]
fn sentiment_report_equals_confusion_matrix_values() {
    let out = tempfile::tempdir().unwrap();
    let r = run(&preset("sentiment", out.path())).unwrap();
    assert_eq!(r.classification.len(), 1);
    let m = &r.classification[0];
    assert_eq!(m.model, "ar-lev");
    assert_eq!(m.report.confusion.counts, vec![vec![13, 3], vec![3, 7]]);
    let rep = &m.report;
    assert!((rep.precision_of("positive").unwrap() - 13.0 / 16.0).abs() < 1e-12);
    assert!((rep.recall_of("positive").unwrap() - 13.0 / 16.0).abs() < 1e-12);
    assert!((rep.f1_of("negative").unwrap() - 0.7).abs() < 1e-12);
    assert!((rep.accuracy - 20.0 / 26.0).abs() < 1e-12);
    // Published: F 0.81 / 0.70, accuracy 77%.
    assert_eq!(round2(rep.f1_of("positive").unwrap()), 0.81);
    assert_eq!(round2(rep.f1_of("negative").unwrap()), 0.7);
    assert_eq!(round2(rep.accuracy), 0.77);
    assert!(validate_report_consistency(rep, REPORT_TOLERANCE).is_empty());
    assert_eq!(r.metadata["table_label_note"], TABLE2_LABEL_NOTE);
    assert_eq!(r.metadata["direction"], "fr -> ar-lev");
    assert_eq!(r.runs[0].best_eval_index, Some(4));
}

#[test]
fn localized_training_corpus_keeps_source_labels() {
    let out = tempfile::tempdir().unwrap();
    let s = preset("sentiment", out.path());
    let r = run(&s).unwrap();
    let source = load_corpus(&s.inputs["source"], CorpusKind::Labeled).unwrap();
    let localized = load_corpus(&r.localized[0], CorpusKind::Labeled).unwrap();
    let a = source.as_labeled().unwrap();
    let b = localized.as_labeled().unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!((x.id(), x.label, x.task), (y.id(), y.label, y.task));
        assert_eq!(y.utterance.lang.to_string(), "ar-lev");
    }
}

#[test]
fn external_corpus_in_wrong_dialect_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let mut s = preset("sentiment", out.path());
    let text = fs::read_to_string(&s.inputs["external"]).unwrap().replace("\"ar-lev\"", "\"ar-glf\"");
    let wrong = out.path().join("external-glf.jsonl");
    fs::write(&wrong, text).unwrap();
    s.inputs.insert("external".into(), wrong);
    match run(&s) {
        Err(HarnessError::Precondition(msg)) => assert!(msg.contains("ar-lev"), "{msg}"),
        other => panic!("expected precondition error, got {other:?}"),
    }
}

#[test]
fn crossdialect_reproduces_published_rows_and_recall_gap() {
    let out = tempfile::tempdir().unwrap();
    let r = run(&preset("hate", out.path())).unwrap();
    let lev = &r.model("ar-lev").unwrap().report;
    let glf = &r.model("ar-glf").unwrap().report;
    assert_eq!(lev.confusion.counts, vec![vec![49, 23], vec![25, 94]]);
    assert_eq!(glf.confusion.counts, vec![vec![39, 33], vec![17, 102]]);
    let row = |rep: &locmt_core::metrics::ClassReport| {
        let mut v = Vec::new();
        for c in ["hate", "no_hate"] {
            v.push(round2(rep.precision_of(c).unwrap()));
            v.push(round2(rep.recall_of(c).unwrap()));
            v.push(round2(rep.f1_of(c).unwrap()));
        }
        v.push(round2(rep.accuracy));
        v
    };
    assert_eq!(row(lev), vec![0.66, 0.68, 0.67, 0.8, 0.79, 0.8, 0.75]);
    assert_eq!(row(glf), vec![0.7, 0.54, 0.61, 0.76, 0.86, 0.8, 0.74]);
    assert!(lev.recall_of("hate").unwrap() > glf.recall_of("hate").unwrap());
    for m in &r.classification {
        assert!(validate_report_consistency(&m.report, REPORT_TOLERANCE).is_empty());
    }
    // Marker words only one model knows: 10 + 10 Levantine, 2 Gulf.
    assert_eq!(r.disagreements.as_ref().unwrap().len(), 22);
}

#[test]
fn identical_classifiers_never_disagree() {
    let out = tempfile::tempdir().unwrap();
    let s = preset("hate", out.path());
    let text = mock_text("hate.toml").replace(
        "rules = [{ keyword = \"حقير\", label = \"hate\" }, { keyword = \"خايس\", label = \"hate\" }]",
        "rules = [{ keyword = \"حقير\", label = \"hate\" }, { keyword = \"زبالة\", label = \"hate\" }]",
    );
    let m = MockBackend::from_toml(&text, Path::new(".")).unwrap();
    let r = run_crossdialect_hate(&s, &m, &m).unwrap();
    assert_eq!(r.disagreements, Some(vec![]));
}

#[test]
fn toy_corpus_disagreements_match_rule_tables() {
    let out = tempfile::tempdir().unwrap();
    let mut s = preset("hate", out.path());
    s.inputs.insert("external".into(), common::fixture("corpora/disagreement-toy.jsonl"));
    let r = run(&s).unwrap();
    // Levantine flags حقير|زبالة, Gulf flags حقير|خايس.
    let want = ["d02", "d03", "d07", "d08", "d10", "d14", "d18", "d20"];
    assert_eq!(r.disagreements.unwrap(), want.map(String::from).to_vec());
}

#[test]
fn scenario_runs_are_deterministic() {
    let out = tempfile::tempdir().unwrap();
    for kind in ["nmt", "sentiment", "hate"] {
        let s = preset(kind, &out.path().join(kind));
        let a = run(&s).unwrap();
        let b = run(&s).unwrap();
        assert_eq!(a, b, "{kind}");
        let ma = fs::read_to_string(a.runs.first().map(|r| r.manifest.clone()).unwrap_or_default());
        if let Ok(text) = ma {
            let m: locmt_core::trainctl::RunManifest = serde_json::from_str(&text).unwrap();
            assert!(m.is_completed());
        }
    }
}

#[test]
fn run_scenario_writes_report_files_and_index() {
    let out = tempfile::tempdir().unwrap();
    let s = preset("hate", out.path());
    let r = run_scenario(&s).unwrap();
    for f in ["report.json", "report.txt", "index.json"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    let back: EvalReport = serde_json::from_str(&fs::read_to_string(out.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back, r);
    let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path().join("index.json")).unwrap()).unwrap();
    assert_eq!(index["runs"].as_array().unwrap().len(), 2);
    for run in index["runs"].as_array().unwrap() {
        assert!(out.path().join(run.as_str().unwrap()).exists());
    }
    let text = fs::read_to_string(out.path().join("report.txt")).unwrap();
    assert!(text.contains("accuracy") && text.contains("disagreements (22)"));
}

#[test]
fn word_frequencies_come_from_predicted_classes() {
    let out = tempfile::tempdir().unwrap();
    let r = run(&preset("sentiment", out.path())).unwrap();
    let freqs = &r.word_frequencies["ar-lev"];
    let neg = &freqs["negative"];
    assert_eq!(neg[0], ("زعلان".to_string(), 10));
    assert!(freqs["positive"].len() <= 50);
}

#[test]
fn unreachable_service_is_a_backend_error() {
    let out = tempfile::tempdir().unwrap();
    let mut s = preset("sentiment", out.path());
    s.backend = BackendConfig {
        timeout_secs: 2.0,
        retry: backend::RetryPolicy {
            max_attempts: 1,
            backoff_ms: 0,
        },
        ..BackendConfig::new("http://127.0.0.1:9")
    };
    let err = run_scenario(&s).unwrap_err();
    assert!(err.is_backend(), "{err}");
}

#[test]
fn scenario_documents_require_their_inputs() {
    let text = r#"
kind = "crossdialect_hate"
name = "x"
targets = ["ar-lev"]
output_dir = "out"
[inputs]
source = "s.jsonl"
external = "e.jsonl"
[backend]
endpoint = "mock:m.toml"
"#;
    assert!(matches!(Scenario::from_toml(text), Err(HarnessError::Config(_))));
    let fixed = text.replace("targets = [\"ar-lev\"]", "targets = [\"ar-lev\", \"ar-glf\"]");
    assert!(Scenario::from_toml(&fixed).is_ok());
    let missing = fixed.replace("external = \"e.jsonl\"", "");
    assert!(matches!(Scenario::from_toml(&missing), Err(HarnessError::Config(_))));
}
