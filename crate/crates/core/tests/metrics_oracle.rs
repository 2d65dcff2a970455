mod oracle;

use locmt_core::exec::Execution;
use locmt_core::metrics::{
    classification_report, combined_f, corpus_bleu, corpus_bleu_with, rouge_recall, rouge_recall_with, MetricValue,
    RougeVariant, Scale, Smoothing,
};
use proptest::prelude::*;

fn small_corpus() -> impl Strategy<Value = (Vec<Vec<String>>, Vec<Vec<String>>)> {
    let vocab = prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]);
    let sent = prop::collection::vec(vocab.prop_map(str::to_string), 0..9);
    (1usize..7).prop_flat_map(move |n| {
        (
            prop::collection::vec(sent.clone(), n),
            prop::collection::vec(sent.clone(), n),
        )
    })
}

fn pct(v: f64) -> MetricValue {
    MetricValue::new("m", v, Scale::Percent)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bleu_matches_brute_force((h, r) in small_corpus()) {
        let got = corpus_bleu(&h, &r).unwrap().value;
        let want = oracle::bleu(&h, &r, Some(0.1));
        prop_assert!((got - want).abs() <= 1e-9, "{} vs {}", got, want);
        let unsmoothed = corpus_bleu_with(&h, &r, Smoothing::None, Execution::Sequential).unwrap().value;
        prop_assert!((unsmoothed - oracle::bleu(&h, &r, None)).abs() <= 1e-9);
    }

    #[test]
    fn rouge_matches_brute_force((h, r) in small_corpus()) {
        let got = rouge_recall(&h, &r).unwrap().value;
        prop_assert!((got - oracle::rouge1(&h, &r)).abs() <= 1e-9);
        let l = rouge_recall_with(&h, &r, RougeVariant::RougeLRecall, Execution::Sequential).unwrap().value;
        prop_assert!((l - oracle::rouge_l(&h, &r)).abs() <= 1e-9);
    }

    #[test]
    fn metrics_stay_in_range((h, r) in small_corpus()) {
        for v in [corpus_bleu(&h, &r).unwrap(), rouge_recall(&h, &r).unwrap()] {
            prop_assert!(v.in_range());
        }
    }

    #[test]
    fn identity_scores_hundred((h, _) in small_corpus()) {
        prop_assume!(h.iter().any(|s| !s.is_empty()));
        prop_assert!((corpus_bleu(&h, &h).unwrap().value - 100.0).abs() < 1e-9);
        prop_assert!((rouge_recall(&h, &h).unwrap().value - 100.0).abs() < 1e-9);
    }

    #[test]
    fn permutation_and_execution_invariance((h, r) in small_corpus(), rot in 0usize..7) {
        let n = h.len();
        let k = rot % n;
        let mut hp = h.clone();
        let mut rp = r.clone();
        hp.rotate_left(k);
        rp.rotate_left(k);
        hp.reverse();
        rp.reverse();
        let base = corpus_bleu_with(&h, &r, Smoothing::default(), Execution::Sequential).unwrap().value;
        let perm = corpus_bleu_with(&hp, &rp, Smoothing::default(), Execution::Parallel).unwrap().value;
        prop_assert_eq!(base.to_bits(), perm.to_bits());
        prop_assert_eq!(
            rouge_recall(&h, &r).unwrap().value.to_bits(),
            rouge_recall(&hp, &rp).unwrap().value.to_bits()
        );
    }

    #[test]
    fn harmonic_mean_bounds(b in 0.0f64..=100.0, r in 0.0f64..=100.0) {
        let f = combined_f(&pct(b), &pct(r)).value;
        prop_assert!(f >= b.min(r) && f <= b.max(r));
        prop_assert_eq!(f.to_bits(), combined_f(&pct(r), &pct(b)).value.to_bits());
        let want = if b + r > 0.0 { 2.0 * b * r / (b + r) } else { 0.0 };
        prop_assert!((f - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn harmonic_mean_identities(x in 0.0f64..=100.0) {
        prop_assert_eq!(combined_f(&pct(x), &pct(x)).value, x);
        prop_assert_eq!(combined_f(&pct(0.0), &pct(x)).value, 0.0);
        prop_assert_eq!(combined_f(&pct(x), &pct(0.0)).value, 0.0);
    }

    #[test]
    fn confusion_conservation(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60)) {
        let classes = ["x", "y", "z"];
        let truth: Vec<&str> = pairs.iter().map(|p| classes[p.0]).collect();
        let pred: Vec<&str> = pairs.iter().map(|p| classes[p.1]).collect();
        let rep = classification_report(&truth, &pred, &classes).unwrap();
        let m = &rep.confusion;
        prop_assert_eq!(m.total(), pairs.len() as u64);
        for (i, c) in classes.iter().enumerate() {
            prop_assert_eq!(m.row_sum(i), truth.iter().filter(|t| *t == c).count() as u64);
            prop_assert_eq!(m.col_sum(i), pred.iter().filter(|t| *t == c).count() as u64);
            prop_assert_eq!(rep.support[i], m.row_sum(i));
        }
        let correct = pairs.iter().filter(|p| p.0 == p.1).count();
        prop_assert!((rep.accuracy - correct as f64 / pairs.len() as f64).abs() < 1e-15);
        for v in rep.precision.iter().chain(&rep.recall).chain(&rep.f1) {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }
}

#[test]
fn combined_identities_are_exact() {
    assert_eq!(combined_f(&pct(40.0), &pct(40.0)).value, 40.0);
    assert_eq!(combined_f(&pct(30.0), &pct(60.0)).value, 40.0);
    assert_eq!(combined_f(&pct(0.0), &pct(50.0)).value, 0.0);
    assert_eq!(combined_f(&pct(0.0), &pct(0.0)).value, 0.0);
}

#[test]
fn clipping_case_by_hand() {
    let h = vec![vec!["the", "the", "the", "the"]];
    let r = vec![vec!["the", "cat", "sat", "down"]];
    let c = locmt_core::metrics::pair_counts(&h[0], &r[0]);
    assert_eq!((c.matches[0], c.candidates[0]), (1, 4));
    let got = corpus_bleu(&h, &r).unwrap().value;
    assert!((got - oracle::bleu(&h, &r, Some(0.1))).abs() < 1e-12);
}
