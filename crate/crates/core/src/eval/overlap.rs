use std::collections::HashMap;

use crate::error::{Error, Result};

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut map = HashMap::new();
    if n == 0 || tokens.len() < n {
        return map;
    }
    for w in tokens.windows(n) {
        *map.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    map
}

/// Corpus BLEU against a single reference per hypothesis, unsmoothed. Orders with
/// no candidate n-grams anywhere are left out of the geometric mean.
pub fn bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64> {
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus("BLEU needs at least one hypothesis".into()));
    }
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let max_order = hyps.iter().map(Vec::len).max().unwrap_or(0).min(4);
    if max_order == 0 {
        log::warn!("every hypothesis is empty; BLEU is 0");
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_order {
        let (mut matched, mut total) = (0usize, 0usize);
        for (h, r) in hyps.iter().zip(refs) {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                total += c;
                matched += c.min(rc.get(&g).copied().unwrap_or(0));
            }
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(bp * (log_sum / max_order as f64).exp())
}

/// Distinct n-grams over all n-grams, pooled across the hypothesis set.
pub fn distinct_n<S: AsRef<str>>(hyps: &[Vec<S>], n: usize) -> Result<f64> {
    if !(1..=3).contains(&n) {
        return Err(Error::invalid(format!("distinct-n is defined for n in 1..=3, got {n}")));
    }
    let mut seen: HashMap<Vec<&str>, usize> = HashMap::new();
    let mut total = 0;
    for h in hyps {
        for (g, c) in ngram_counts(h, n) {
            total += c;
            *seen.entry(g).or_insert(0) += c;
        }
    }
    if total == 0 {
        log::warn!("no {n}-grams in the hypotheses; distinct-{n} is 0");
        return Ok(0.0);
    }
    Ok(seen.len() as f64 / total as f64)
}
