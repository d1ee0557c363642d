use super::{canonical, mean, EvalPair};
use crate::error::{Error, Result};

pub const ROUGE_BETA: f64 = 1.2;

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Best F_β over the references.
pub fn rouge_l_pair(pair: &EvalPair) -> f64 {
    let c = &pair.candidate;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    pair.references
        .iter()
        .map(|r| {
            let l = lcs(c, r);
            if l == 0 {
                return 0.0;
            }
            let p = l as f64 / c.len() as f64;
            let rec = l as f64 / r.len() as f64;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("ROUGE_L of an empty corpus"));
    }
    Ok(mean(canonical(pairs).into_iter().map(rouge_l_pair)))
}
