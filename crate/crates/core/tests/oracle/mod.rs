//! Deliberately naive re-implementations used as test oracles. Nothing here
//! shares code with the library.
#![allow(dead_code)]

fn count_in<S: AsRef<str>>(tokens: &[S], gram: &[S]) -> usize {
    let n = gram.len();
    if tokens.len() < n {
        return 0;
    }
    (0..=tokens.len() - n)
        .filter(|&i| (0..n).all(|k| tokens[i + k].as_ref() == gram[k].as_ref()))
        .count()
}

/// Clipped matches and candidate count for order `n` in one pair, found by
/// scanning every position and counting each distinct n-gram once.
fn order_stats<S: AsRef<str>>(h: &[S], r: &[S], n: usize) -> (usize, usize) {
    if h.len() < n {
        return (0, 0);
    }
    let mut matches = 0;
    for i in 0..=h.len() - n {
        let gram = &h[i..i + n];
        let seen_before = (0..i).any(|j| (0..n).all(|k| h[j + k].as_ref() == gram[k].as_ref()));
        if !seen_before {
            matches += count_in(h, gram).min(count_in(r, gram));
        }
    }
    (matches, h.len() - n + 1)
}

/// Corpus BLEU on 0..100 with optional add-epsilon smoothing, skipping
/// orders that have no candidates anywhere in the corpus.
pub fn bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], epsilon: Option<f64>) -> f64 {
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    if c == 0 {
        return 0.0;
    }
    let mut logs = Vec::new();
    for n in 1..=4 {
        let (mut m, mut t) = (0usize, 0usize);
        for (h, rf) in hyps.iter().zip(refs) {
            let (a, b) = order_stats(h, rf, n);
            m += a;
            t += b;
        }
        if t == 0 {
            continue;
        }
        let p = if m > 0 {
            m as f64 / t as f64
        } else {
            match epsilon {
                Some(e) => e / t as f64,
                None => return 0.0,
            }
        };
        logs.push(p.ln());
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

pub fn rouge1<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> f64 {
    let mut matched = 0;
    let mut total = 0;
    for (h, r) in hyps.iter().zip(refs) {
        total += r.len();
        let mut used = vec![false; r.len()];
        for t in h {
            if let Some(j) = (0..r.len()).find(|&j| !used[j] && r[j].as_ref() == t.as_ref()) {
                used[j] = true;
                matched += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * matched as f64 / total as f64
    }
}

fn lcs<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    if a[0].as_ref() == b[0].as_ref() {
        1 + lcs(&a[1..], &b[1..])
    } else {
        lcs(&a[1..], b).max(lcs(a, &b[1..]))
    }
}

pub fn rouge_l<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> f64 {
    let matched: usize = hyps.iter().zip(refs).map(|(h, r)| lcs(h, r)).sum();
    let total: usize = refs.iter().map(Vec::len).sum();
    if total == 0 {
        0.0
    } else {
        100.0 * matched as f64 / total as f64
    }
}

/// Straightforward restatement of the early-stopping policy: returns
/// (1-based evaluation that stops the run, 1-based best evaluation).
pub fn early_stop(values: &[f64], patience: u32, min_delta: f64) -> (Option<usize>, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut best_i = 0;
    let mut stale = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > best + min_delta {
            best = v;
            best_i = i + 1;
            stale = 0;
        } else {
            stale += 1;
        }
        if stale == patience {
            return (Some(i + 1), best_i);
        }
    }
    (None, best_i)
}
