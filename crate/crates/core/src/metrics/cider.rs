use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{canonical, mean, ngram_counts, EvalPair};
use crate::error::{Error, Result};

type Vector<'a> = BTreeMap<&'a [String], f64>;

/// Document frequencies: one document per clip's reference set.
struct Idf<'a> {
    df: HashMap<&'a [String], usize>,
    log_n: f64,
}

impl<'a> Idf<'a> {
    fn new(pairs: &[&'a EvalPair], n: usize) -> Self {
        let mut df = HashMap::new();
        for p in pairs {
            let mut seen: BTreeSet<&[String]> = BTreeSet::new();
            for r in &p.references {
                seen.extend(ngram_counts(r, n).into_keys());
            }
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        Self {
            df,
            log_n: (pairs.len() as f64).ln(),
        }
    }

    fn vector(&self, tokens: &'a [String], n: usize) -> Vector<'a> {
        ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, c)| {
                let df = self.df.get(g).copied().unwrap_or(0).max(1) as f64;
                (g, c as f64 * (self.log_n - df.ln()))
            })
            .collect()
    }
}

fn cosine(a: &Vector, b: &Vector) -> f64 {
    let na = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // fold from +0.0: an empty f64 sum is -0.0
    a.iter()
        .filter_map(|(k, x)| b.get(k).map(|y| x * y))
        .fold(0.0, |s, v| s + v)
        / (na * nb)
}

/// Per-clip CIDEr in corpus order (sorted by clip id).
pub fn cider_per_clip(pairs: &[EvalPair]) -> Result<Vec<(String, f64)>> {
    if pairs.len() < 2 {
        return Err(Error::invalid(format!(
            "CIDEr needs at least 2 clips for document frequencies, got {}",
            pairs.len()
        )));
    }
    let pairs = canonical(pairs);
    let idfs: Vec<Idf> = (1..=4).map(|n| Idf::new(&pairs, n)).collect();
    Ok(pairs
        .iter()
        .map(|p| {
            let per_n = (1..=4).map(|n| {
                let idf = &idfs[n - 1];
                let c = idf.vector(&p.candidate, n);
                let mut sims: Vec<f64> = p.references.iter().map(|r| cosine(&c, &idf.vector(r, n))).collect();
                sims.sort_by(f64::total_cmp);
                sims.iter().sum::<f64>() / sims.len() as f64
            });
            (p.clip_id.clone(), 10.0 * per_n.sum::<f64>() / 4.0)
        })
        .collect())
}

/// Plain CIDEr (no length penalty) averaged over clips.
pub fn cider(pairs: &[EvalPair]) -> Result<f64> {
    Ok(mean(cider_per_clip(pairs)?.into_iter().map(|(_, s)| s)))
}
