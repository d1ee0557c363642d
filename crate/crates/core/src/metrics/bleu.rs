use std::collections::HashMap;

use super::{canonical, ngram_counts, EvalPair};
use crate::error::{Error, Result};

/// Corpus BLEU-n: clipped n-gram precisions summed over the corpus,
/// uniform geometric mean of p₁..pₙ, times the brevity penalty computed
/// from total candidate length and summed closest-reference lengths (ties
/// to the shorter reference).
pub fn bleu(pairs: &[EvalPair], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::invalid(format!("BLEU order must be 1..=4, got {n}")));
    }
    if pairs.is_empty() {
        return Err(Error::invalid("BLEU of an empty corpus"));
    }
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for p in canonical(pairs) {
        for k in 1..=n {
            let (m, t) = clipped(p, k);
            matched[k - 1] += m;
            total[k - 1] += t;
        }
        cand_len += p.candidate.len();
        ref_len += closest_ref_len(p);
    }
    if cand_len == 0 || total.iter().zip(&matched).any(|(t, m)| *t == 0 || *m == 0) {
        return Ok(0.0);
    }
    let log_mean = (0..n)
        .map(|k| (matched[k] as f64 / total[k] as f64).ln())
        .sum::<f64>()
        / n as f64;
    let bp = (1.0 - ref_len as f64 / cand_len as f64).min(0.0).exp();
    Ok(bp * log_mean.exp())
}

/// Clipped n-gram matches and candidate n-gram count for one pair.
pub fn clipped(pair: &EvalPair, n: usize) -> (usize, usize) {
    let cand = ngram_counts(&pair.candidate, n);
    let mut max_ref: HashMap<&[String], usize> = HashMap::new();
    for r in &pair.references {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, cand.values().sum())
}

fn closest_ref_len(pair: &EvalPair) -> usize {
    let c = pair.candidate.len();
    pair.references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}
