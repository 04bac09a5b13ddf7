use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};

/// Word vectors of one fixed dimension. Tokens missing from the table are skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::invalid(format!(
                "vector of length {} in a table of dimension {}",
                v.len(),
                self.dim
            )));
        }
        self.vectors.insert(token.into(), v);
        Ok(())
    }

    /// One token per line followed by its space-separated components.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut table: Option<Self> = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let v = parts
                .map(|x| {
                    x.parse::<f64>().map_err(|e| Error::Parse {
                        line: i + 1,
                        msg: format!("bad component {x:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let t = table.get_or_insert_with(|| Self::new(v.len()));
            if v.is_empty() || v.len() != t.dim {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {} components, found {}", t.dim, v.len()),
                });
            }
            t.vectors.insert(tok.to_string(), v);
        }
        table.ok_or_else(|| Error::EmptyCorpus("embedding table has no vectors".into()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    fn lookup<'a, S: AsRef<str>>(&'a self, sentence: &[S]) -> Vec<&'a [f64]> {
        sentence.iter().filter_map(|t| self.get(t.as_ref())).collect()
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn mean_vector(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for v in vs {
        for (a, b) in m.iter_mut().zip(v.iter()) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|x| *x /= vs.len() as f64);
    m
}

/// Per dimension, the component of largest magnitude; positive wins a tie.
fn extrema_vector(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| {
            vs.iter().map(|v| v[d]).fold(0.0, |best: f64, x| {
                if x.abs() > best.abs() || (x.abs() == best.abs() && x > best) {
                    x
                } else {
                    best
                }
            })
        })
        .collect()
}

fn one_way_greedy(from: &[&[f64]], to: &[&[f64]]) -> f64 {
    from.iter()
        .map(|a| to.iter().map(|b| cosine(a, b)).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / from.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingScores {
    pub average: f64,
    pub greedy: f64,
    pub extrema: f64,
}

/// `None` when either sentence has no token in the table.
pub fn embedding_metrics<S: AsRef<str>>(hyp: &[S], reference: &[S], table: &EmbeddingTable) -> Option<EmbeddingScores> {
    let (h, r) = (table.lookup(hyp), table.lookup(reference));
    if h.is_empty() || r.is_empty() {
        return None;
    }
    let d = table.dim();
    Some(EmbeddingScores {
        average: cosine(&mean_vector(&h, d), &mean_vector(&r, d)),
        greedy: (one_way_greedy(&h, &r) + one_way_greedy(&r, &h)) / 2.0,
        extrema: cosine(&extrema_vector(&h, d), &extrema_vector(&r, d)),
    })
}

/// Greedy matching averaged over both directions.
pub fn greedy_matching<S: AsRef<str>>(a: &[S], b: &[S], table: &EmbeddingTable) -> Option<f64> {
    embedding_metrics(a, b, table).map(|s| s.greedy)
}

/// Mean of the greedy matching of `hyp` with the query and with the future turn.
pub fn context_matching<S: AsRef<str>>(hyp: &[S], query: &[S], future: &[S], table: &EmbeddingTable) -> Option<f64> {
    Some((greedy_matching(hyp, query, table)? + greedy_matching(hyp, future, table)?) / 2.0)
}

/// Corpus means of the embedding scores and the number of skipped pairs.
pub fn corpus_embedding_metrics<S: AsRef<str>>(
    hyps: &[Vec<S>],
    refs: &[Vec<S>],
    table: &EmbeddingTable,
) -> Result<(Option<EmbeddingScores>, usize)> {
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let scored: Vec<EmbeddingScores> = hyps
        .iter()
        .zip(refs)
        .filter_map(|(h, r)| embedding_metrics(h, r, table))
        .collect();
    let skipped = hyps.len() - scored.len();
    if skipped > 0 {
        log::warn!("{skipped} sentence pairs had no embedded tokens and were skipped");
    }
    if scored.is_empty() {
        return Ok((None, skipped));
    }
    let n = scored.len() as f64;
    let mean = |f: fn(&EmbeddingScores) -> f64| scored.iter().map(f).sum::<f64>() / n;
    Ok((
        Some(EmbeddingScores {
            average: mean(|s| s.average),
            greedy: mean(|s| s.greedy),
            extrema: mean(|s| s.extrema),
        }),
        skipped,
    ))
}
