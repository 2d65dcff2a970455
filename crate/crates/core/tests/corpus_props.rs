mod common;

use locmt_core::corpus::{load_corpus, save_corpus, split_corpus, CorpusKind, SplitSpec};
use proptest::prelude::*;

fn ratios() -> impl Strategy<Value = Vec<(String, f64)>> {
    // Integer weights normalized to fractions summing to one.
    prop::collection::vec(1u32..20, 1..5).prop_map(|w| {
        let total: u32 = w.iter().sum();
        let mut out: Vec<(String, f64)> =
            w.iter().enumerate().map(|(i, &x)| (format!("s{i}"), x as f64 / total as f64)).collect();
        // Make the sum exactly one in floating point.
        let head: f64 = out[..out.len() - 1].iter().map(|(_, f)| f).sum();
        out.last_mut().unwrap().1 = 1.0 - head;
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn splits_partition_deterministically(
        labels in prop::collection::vec(any::<bool>(), 5..120),
        ratios in ratios(),
        seed in any::<u64>(),
        stratified in any::<bool>(),
    ) {
        prop_assume!(labels.len() >= ratios.len());
        let c = common::labeled_corpus("c", &labels);
        let spec = SplitSpec { ratios, seed, stratified };
        let first = common::check_split(&c, &spec);
        prop_assert!(first.is_ok(), "{:?}", first);
        // Re-running gives byte-identical ids.
        let a = split_corpus(&c, &spec).unwrap();
        let b = split_corpus(&c, &spec).unwrap();
        for ((_, x), (_, y)) in a.iter().zip(&b) {
            prop_assert_eq!(x.ids(), y.ids());
        }
    }

    #[test]
    fn parallel_splits_partition(n in 3usize..200, ratios in ratios(), seed in any::<u64>()) {
        prop_assume!(n >= ratios.len());
        let c = common::parallel_corpus("p", n);
        let spec = SplitSpec { ratios, seed, stratified: false };
        let r = common::check_split(&c, &spec);
        prop_assert!(r.is_ok(), "{:?}", r);
    }
}

#[test]
fn twenty_thousand_tweets_split_sixteen_and_four_thousand() {
    let labels: Vec<bool> = (0..20_000).map(|i| i % 5 < 2).collect();
    let c = common::labeled_corpus("tweets", &labels);
    for stratified in [false, true] {
        let spec = SplitSpec { ratios: vec![("train".into(), 0.8), ("validation".into(), 0.2)], seed: 7, stratified };
        assert_eq!(common::check_split(&c, &spec).unwrap(), vec![16_000, 4_000]);
    }
}

#[test]
fn twelve_thousand_pairs_split_ninety_ten() {
    let c = common::parallel_corpus("pairs", 12_000);
    let spec = SplitSpec::new(&[("train", 0.9), ("test", 0.1)], 11);
    assert_eq!(common::check_split(&c, &spec).unwrap(), vec![10_800, 1_200]);
}

#[test]
fn seeds_change_the_assignment() {
    let c = common::labeled_corpus("c", &[true; 200]);
    let a = split_corpus(&c, &SplitSpec::new(&[("a", 0.5), ("b", 0.5)], 1)).unwrap();
    let b = split_corpus(&c, &SplitSpec::new(&[("a", 0.5), ("b", 0.5)], 2)).unwrap();
    assert_ne!(a[0].1.ids(), b[0].1.ids());
}

#[test]
fn saved_splits_reload_with_their_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
    let c = common::labeled_corpus("c", &labels);
    for (name, part) in split_corpus(&c, &SplitSpec::new(&[("train", 0.7), ("test", 0.3)], 3)).unwrap() {
        let path = dir.path().join(format!("{name}.jsonl"));
        save_corpus(&part, &path).unwrap();
        let back = load_corpus(&path, CorpusKind::Labeled).unwrap();
        assert_eq!(back.ids(), part.ids());
        assert_eq!(back.manifest().counts, part.manifest().counts);
        assert_eq!(back.manifest().seed, Some(3));
    }
}
