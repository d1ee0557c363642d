use super::porter::porter_stem;
use super::{canonical, mean, EvalPair};
use crate::error::{Error, Result};

/// Alignment statistics for one candidate/reference pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

/// Unigram alignment. Exact matches are a subset of stem matches, so the
/// exact-then-stem stages reach the same match count as a single matching
/// on stems; among maximum matchings the one with the fewest chunks wins.
pub fn align(cand: &[String], reference: &[String]) -> Alignment {
    let cs: Vec<String> = cand.iter().map(|w| porter_stem(w)).collect();
    let rs: Vec<String> = reference.iter().map(|w| porter_stem(w)).collect();
    let options: Vec<Vec<usize>> = cs
        .iter()
        .map(|c| (0..rs.len()).filter(|&j| rs[j] == *c).collect())
        .collect();

    // Maximum matching size: per stem class, min(candidate count, reference count).
    let mut classes: Vec<&String> = cs.iter().collect();
    classes.sort();
    classes.dedup();
    let best_matches: usize = classes
        .iter()
        .map(|s| {
            let a = cs.iter().filter(|c| c == s).count();
            let b = rs.iter().filter(|r| r == s).count();
            a.min(b)
        })
        .sum();
    if best_matches == 0 {
        return Alignment { matches: 0, chunks: 0 };
    }
    // Remaining matchable candidates after position i, for pruning.
    let mut suffix_live = vec![0usize; cs.len() + 1];
    for i in (0..cs.len()).rev() {
        suffix_live[i] = suffix_live[i + 1] + usize::from(!options[i].is_empty());
    }
    let mut search = Search {
        options: &options,
        suffix_live: &suffix_live,
        target: best_matches,
        used: vec![false; rs.len()],
        best_chunks: usize::MAX,
    };
    search.run(0, 0, 0, None);
    Alignment {
        matches: best_matches,
        chunks: search.best_chunks,
    }
}

struct Search<'a> {
    options: &'a [Vec<usize>],
    suffix_live: &'a [usize],
    target: usize,
    used: Vec<bool>,
    best_chunks: usize,
}

impl Search<'_> {
    /// Depth-first over candidate positions; `prev` is the reference index
    /// matched by position `i - 1`, if any.
    fn run(&mut self, i: usize, matches: usize, chunks: usize, prev: Option<usize>) {
        if chunks >= self.best_chunks || matches + self.suffix_live[i] < self.target {
            return;
        }
        if i == self.options.len() {
            if matches == self.target {
                self.best_chunks = chunks;
            }
            return;
        }
        let continuing = prev.map(|p| p + 1);
        let mut order: Vec<usize> = self.options[i].iter().copied().filter(|&j| !self.used[j]).collect();
        // Try extending the current chunk first so good bounds come early.
        order.sort_by_key(|&j| Some(j) != continuing);
        for j in order {
            let new_chunk = Some(j) != continuing;
            self.used[j] = true;
            self.run(i + 1, matches + 1, chunks + usize::from(new_chunk), Some(j));
            self.used[j] = false;
        }
        self.run(i + 1, matches, chunks, None);
    }
}

/// F_mean·(1 − penalty) for one reference.
pub fn meteor_score(cand: &[String], reference: &[String]) -> f64 {
    let a = align(cand, reference);
    if a.matches == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / cand.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (a.chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

/// Best score over the references.
pub fn meteor_pair(pair: &EvalPair) -> f64 {
    pair.references
        .iter()
        .map(|r| meteor_score(&pair.candidate, r))
        .fold(0.0, f64::max)
}

/// METEOR without the synonym stage (exact + Porter stem only).
pub fn meteor_lite(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("METEOR of an empty corpus"));
    }
    Ok(mean(canonical(pairs).into_iter().map(meteor_pair)))
}
