//! Generative discriminators. The forward one reads a response and scores the
//! real future turn; the backward one reads the future turn and scores the response.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::gradcheck::HasParams;
use crate::numerics::{Graph, ParamStore, Real, Var};
use crate::seq2seq::{ModelConfig, Seq2Seq, TargetScores};

/// Sign applied to the backward word reward. `Negated` rewards a response word by
/// its negative log-probability; `Flipped` by its log-probability.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum R2Sign {
    #[default]
    Negated,
    Flipped,
}

impl R2Sign {
    fn factor(self) -> f64 {
        match self {
            R2Sign::Negated => 1.0,
            R2Sign::Flipped => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    True,
    Generated,
}

/// Rewards of one response: `r1` from the forward model, one `r2` per response action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub r1: f64,
    pub r2: Vec<f64>,
    pub source: Source,
}

/// Mean log-probability of the future-turn targets.
pub fn forward_reward(target_log_probs: &[f64]) -> f64 {
    target_log_probs.iter().sum::<f64>() / target_log_probs.len() as f64
}

/// Per-word reward of the response targets.
pub fn backward_rewards(target_log_probs: &[f64], sign: R2Sign) -> Vec<f64> {
    target_log_probs.iter().map(|&lp| -sign.factor() * lp).collect()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// `-(mean true reward - mean generated reward)` over responses.
pub fn forward_objective(r1_true: &[f64], r1_gen: &[f64]) -> f64 {
    -(mean(r1_true.iter().copied()) - mean(r1_gen.iter().copied()))
}

/// `-(mean true word reward - mean generated word reward)`, each mean taken over
/// every word in its half of the batch.
pub fn backward_objective(r2_true: &[Vec<f64>], r2_gen: &[Vec<f64>]) -> f64 {
    -(mean(r2_true.iter().flatten().copied()) - mean(r2_gen.iter().flatten().copied()))
}

/// True and generated responses paired with the real future turn they precede.
/// Rows are unframed token ids.
#[derive(Clone, Debug, Default)]
pub struct DiscBatch {
    pub true_responses: Vec<Vec<usize>>,
    pub generated: Vec<Vec<usize>>,
    pub futures: Vec<Vec<usize>>,
}

impl DiscBatch {
    fn check(&self) -> Result<usize> {
        let n = self.futures.len();
        if n == 0 {
            return Err(Error::invalid("discriminator batch is empty"));
        }
        if self.true_responses.len() != n || self.generated.len() != n {
            return Err(Error::invalid(format!(
                "discriminator batch sizes differ: {} true, {} generated, {} futures",
                self.true_responses.len(),
                self.generated.len(),
                n
            )));
        }
        Ok(n)
    }
}

/// Scores of `[true; generated]` rows from one stacked forward pass.
struct Stacked {
    scores: TargetScores,
    n: usize,
}

impl Stacked {
    fn new<F: Real>(
        model: &Seq2Seq<F>,
        g: &mut Graph<'_, F>,
        sources: Vec<Vec<usize>>,
        targets: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n = sources.len() / 2;
        let scores = model.score_pairs(g, &sources, &targets)?;
        Ok(Stacked { scores, n })
    }
}

fn fresh<F: Real, R: Rng + ?Sized>(cfg: ModelConfig, prefix: &str, sigma: f64, rng: &mut R) -> Result<Seq2Seq<F>> {
    Seq2Seq::initialized(cfg, prefix, sigma, rng)
}

/// Encodes a response, scores the real future turn.
#[derive(Clone, Debug)]
pub struct ForwardDiscriminator<F> {
    model: Seq2Seq<F>,
}

impl<F: Real> ForwardDiscriminator<F> {
    pub const PREFIX: &'static str = "d1";

    pub fn new(model: Seq2Seq<F>) -> Self {
        ForwardDiscriminator { model }
    }

    pub fn initialized<R: Rng + ?Sized>(cfg: ModelConfig, sigma: f64, rng: &mut R) -> Result<Self> {
        Ok(Self::new(fresh(cfg, Self::PREFIX, sigma, rng)?))
    }

    pub fn model(&self) -> &Seq2Seq<F> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Seq2Seq<F> {
        &mut self.model
    }

    /// `(source, target)` of the warm-up task for one triple.
    pub fn orient<'a>(&self, response: &'a [usize], future: &'a [usize]) -> (&'a [usize], &'a [usize]) {
        (response, future)
    }

    /// One reward per response.
    pub fn rewards(&self, responses: &[Vec<usize>], futures: &[Vec<usize>]) -> Result<Vec<f64>> {
        let mut g = Graph::new(self.model.params());
        let scores = self.model.score_pairs(&mut g, responses, futures)?;
        Ok(scores.rows(&g).iter().map(|r| forward_reward(r)).collect())
    }

    /// Objective to minimize; also returns `(mean true reward, mean generated reward)`.
    pub fn loss(&self, g: &mut Graph<'_, F>, batch: &DiscBatch) -> Result<(Var, f64, f64)> {
        let n = batch.check()?;
        let sources = [batch.true_responses.clone(), batch.generated.clone()].concat();
        let targets = [batch.futures.clone(), batch.futures.clone()].concat();
        let st = Stacked::new(&self.model, g, sources, targets)?;
        let lengths = st.scores.lengths.clone();
        let w = st.scores.weights::<F>(|i, _| {
            let k = lengths[i] as f64;
            if i < st.n {
                -1.0 / (n as f64 * k)
            } else {
                1.0 / (n as f64 * k)
            }
        });
        let loss = g.weighted_sum(st.scores.logp, &w)?;
        let r1: Vec<f64> = st.scores.rows(g).iter().map(|r| forward_reward(r)).collect();
        Ok((loss, mean(r1[..n].iter().copied()), mean(r1[n..].iter().copied())))
    }
}

/// Encodes the real future turn, scores each word of a response.
#[derive(Clone, Debug)]
pub struct BackwardDiscriminator<F> {
    model: Seq2Seq<F>,
    sign: R2Sign,
}

impl<F: Real> BackwardDiscriminator<F> {
    pub const PREFIX: &'static str = "d2";

    pub fn new(model: Seq2Seq<F>, sign: R2Sign) -> Self {
        BackwardDiscriminator { model, sign }
    }

    pub fn initialized<R: Rng + ?Sized>(cfg: ModelConfig, sign: R2Sign, sigma: f64, rng: &mut R) -> Result<Self> {
        Ok(Self::new(fresh(cfg, Self::PREFIX, sigma, rng)?, sign))
    }

    pub fn model(&self) -> &Seq2Seq<F> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Seq2Seq<F> {
        &mut self.model
    }

    pub fn sign(&self) -> R2Sign {
        self.sign
    }

    pub fn orient<'a>(&self, response: &'a [usize], future: &'a [usize]) -> (&'a [usize], &'a [usize]) {
        (future, response)
    }

    /// Per-word rewards of each response: one per token plus the closing EOS.
    pub fn rewards(&self, futures: &[Vec<usize>], responses: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(self.model.params());
        let scores = self.model.score_pairs(&mut g, futures, responses)?;
        Ok(scores.rows(&g).iter().map(|r| backward_rewards(r, self.sign)).collect())
    }

    /// Objective to minimize; also returns `(mean true word reward, mean generated word reward)`.
    pub fn loss(&self, g: &mut Graph<'_, F>, batch: &DiscBatch) -> Result<(Var, f64, f64)> {
        let n = batch.check()?;
        let sources = [batch.futures.clone(), batch.futures.clone()].concat();
        let targets = [batch.true_responses.clone(), batch.generated.clone()].concat();
        let st = Stacked::new(&self.model, g, sources, targets)?;
        let words_true: usize = st.scores.lengths[..n].iter().sum();
        let words_gen: usize = st.scores.lengths[n..].iter().sum();
        let s = self.sign.factor();
        let w = st.scores.weights::<F>(|i, _| {
            if i < st.n {
                s / words_true as f64
            } else {
                -s / words_gen as f64
            }
        });
        let loss = g.weighted_sum(st.scores.logp, &w)?;
        let r2: Vec<Vec<f64>> = st
            .scores
            .rows(g)
            .iter()
            .map(|r| backward_rewards(r, self.sign))
            .collect();
        Ok((
            loss,
            mean(r2[..n].iter().flatten().copied()),
            mean(r2[n..].iter().flatten().copied()),
        ))
    }
}

macro_rules! has_params {
    ($t:ident) => {
        impl<F: Real> HasParams<F> for $t<F> {
            fn params(&self) -> &ParamStore<F> {
                self.model.params()
            }
            fn params_mut(&mut self) -> &mut ParamStore<F> {
                self.model.params_mut()
            }
        }
    };
}

has_params!(ForwardDiscriminator);
has_params!(BackwardDiscriminator);
