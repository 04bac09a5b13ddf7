use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::Seq2Seq;
use crate::corpus::{PaddedBatch, BOS, EOS};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Eos,
    MaxLength,
}

/// A decoded response. `log_probs` has one entry per action: every content token
/// plus the closing EOS when the response terminated on it.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationResult {
    pub tokens: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub termination: Termination,
}

impl GenerationResult {
    /// The action sequence the policy took: content tokens, then EOS if emitted.
    pub fn actions(&self) -> Vec<usize> {
        let mut a = self.tokens.clone();
        if self.termination == Termination::Eos {
            a.push(EOS);
        }
        a
    }
}

/// Lowest id among the maxima.
pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_index<F: Real, R: Rng + ?Sized>(logp: &[F], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &lp) in logp.iter().enumerate() {
        let p = lp.as_f64().exp();
        if p > 0.0 {
            last_positive = i;
        }
        cum += p;
        if u < cum {
            return i;
        }
    }
    last_positive
}

impl<F: Real> Seq2Seq<F> {
    /// Decode every source row for at most `max_len` actions.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        src: &PaddedBatch,
        mode: DecodeMode,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Vec<GenerationResult>> {
        if max_len == 0 {
            return Err(Error::invalid("max_len must be >= 1"));
        }
        let b = src.batch_size();
        let mut g = Graph::new(self.params());
        let ann = self.encode(&mut g, src)?;
        let mut state = self.initial_state(&mut g, &ann)?;
        let mut out: Vec<GenerationResult> = (0..b)
            .map(|_| GenerationResult {
                tokens: Vec::new(),
                log_probs: Vec::new(),
                termination: Termination::MaxLength,
            })
            .collect();
        let mut done = vec![false; b];
        let mut prev = vec![BOS; b];
        for _ in 0..max_len {
            let (ctx, _) = self.attend(&mut g, &state, &ann)?;
            let (logp, next) = self.decode_step(&mut g, &state, &prev, ctx)?;
            let lp = g.value(logp);
            for i in 0..b {
                if done[i] {
                    prev[i] = EOS;
                    continue;
                }
                let row = lp.row(i);
                let id = match mode {
                    DecodeMode::Greedy => argmax(row),
                    DecodeMode::Sample => sample_index(row, rng),
                };
                out[i].log_probs.push(row[id].as_f64());
                if id == EOS {
                    out[i].termination = Termination::Eos;
                    done[i] = true;
                } else {
                    out[i].tokens.push(id);
                }
                prev[i] = id;
            }
            state = next;
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }
}
