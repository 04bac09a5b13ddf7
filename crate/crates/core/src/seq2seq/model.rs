use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::LstmCell;
use crate::corpus::{PaddedBatch, BOS, EOS};
use crate::error::{Error, Result};
use crate::numerics::gradcheck::HasParams;
use crate::numerics::{init_parameters, Graph, ParamId, ParamKind, ParamStore, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub attn_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 20_000,
            embed_dim: 256,
            hidden: 256,
            enc_layers: 2,
            dec_layers: 4,
            attn_dim: 256,
        }
    }
}

impl ModelConfig {
    pub fn tiny(vocab_size: usize, embed_dim: usize, hidden: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim,
            hidden,
            enc_layers: 2,
            dec_layers: 4,
            attn_dim: hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= crate::corpus::RESERVED.len() {
            return Err(Error::invalid("vocab_size must exceed the reserved tokens"));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("attn_dim", self.attn_dim),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// Encoder output: one `[B, 2H]` annotation per source position plus attention keys.
pub struct Annotations {
    pub states: Vec<Var>,
    keys: Vec<Var>,
    pub mask: Vec<Vec<bool>>,
    /// Top-layer backward state after reading the whole source, `[B, H]`.
    pub final_backward: Var,
}

impl Annotations {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Per-layer `(h, c)` of the decoder.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub layers: Vec<(Var, Var)>,
}

impl DecoderState {
    pub fn top(&self) -> Var {
        self.layers.last().expect("at least one layer").0
    }
}

/// Teacher-forced log-probabilities of target rows: `logp [B, L]` with a validity mask.
pub struct TargetScores {
    pub logp: Var,
    pub mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
}

impl TargetScores {
    pub fn total_targets(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Row-major weights over `logp` that are `f(row, pos)` on valid entries and zero elsewhere.
    pub fn weights<F: Real>(&self, f: impl Fn(usize, usize) -> f64) -> Vec<F> {
        let mut w = Vec::new();
        for (i, row) in self.mask.iter().enumerate() {
            for (j, &m) in row.iter().enumerate() {
                w.push(if m { F::lit(f(i, j)) } else { F::zero() });
            }
        }
        w
    }

    /// Per-row valid log-probabilities read back from the graph.
    pub fn rows<F: Real>(&self, g: &Graph<'_, F>) -> Vec<Vec<f64>> {
        let t = g.value(self.logp);
        self.lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| t.row(i)[..l].iter().map(|v| v.as_f64()).collect())
            .collect()
    }
}

/// Attentional encoder-decoder: stacked bidirectional LSTM encoder, additive
/// attention, stacked LSTM decoder and a projection onto the vocabulary.
#[derive(Clone, Debug)]
pub struct Seq2Seq<F> {
    cfg: ModelConfig,
    prefix: String,
    params: ParamStore<F>,
    embed: ParamId,
    enc_fwd: Vec<LstmCell>,
    enc_bwd: Vec<LstmCell>,
    bridge_w: ParamId,
    bridge_b: ParamId,
    attn_keys: ParamId,
    attn_query: ParamId,
    attn_v: ParamId,
    dec: Vec<LstmCell>,
    out_w: ParamId,
    out_b: ParamId,
}

impl<F: Real> HasParams<F> for Seq2Seq<F> {
    fn params(&self) -> &ParamStore<F> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }
}

impl<F> Seq2Seq<F> {
    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }
}

impl<F: Real> Seq2Seq<F> {
    /// Allocate parameters (all zero). Names carry `prefix` so checkpoints of
    /// different models are distinguishable.
    pub fn new(cfg: ModelConfig, prefix: &str) -> Result<Self> {
        cfg.validate()?;
        let (v, e, h, a) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden, cfg.attn_dim);
        let mut s = ParamStore::new();
        let embed = s.add(format!("{prefix}.embed"), ParamKind::Weight, &[v, e]);
        let mut enc_fwd = Vec::new();
        let mut enc_bwd = Vec::new();
        for l in 0..cfg.enc_layers {
            let input = if l == 0 { e } else { 2 * h };
            enc_fwd.push(LstmCell::new(&mut s, &format!("{prefix}.enc.{l}.fwd"), input, h));
            enc_bwd.push(LstmCell::new(&mut s, &format!("{prefix}.enc.{l}.bwd"), input, h));
        }
        let bridge_w = s.add(format!("{prefix}.bridge.weight"), ParamKind::Weight, &[h, h]);
        let bridge_b = s.add(format!("{prefix}.bridge.bias"), ParamKind::Bias, &[1, h]);
        let attn_keys = s.add(format!("{prefix}.attn.keys"), ParamKind::Weight, &[2 * h, a]);
        let attn_query = s.add(format!("{prefix}.attn.query"), ParamKind::Weight, &[h, a]);
        let attn_v = s.add(format!("{prefix}.attn.v"), ParamKind::Weight, &[a, 1]);
        let dec = (0..cfg.dec_layers)
            .map(|l| {
                let input = if l == 0 { e + 2 * h } else { h };
                LstmCell::new(&mut s, &format!("{prefix}.dec.{l}"), input, h)
            })
            .collect();
        let out_w = s.add(format!("{prefix}.out.weight"), ParamKind::Weight, &[h, v]);
        let out_b = s.add(format!("{prefix}.out.bias"), ParamKind::Bias, &[1, v]);
        Ok(Seq2Seq {
            cfg,
            prefix: prefix.to_string(),
            params: s,
            embed,
            enc_fwd,
            enc_bwd,
            bridge_w,
            bridge_b,
            attn_keys,
            attn_query,
            attn_v,
            dec,
            out_w,
            out_b,
        })
    }

    /// Allocate and draw weights from N(0, sigma^2).
    pub fn initialized<R: Rng + ?Sized>(cfg: ModelConfig, prefix: &str, sigma: f64, rng: &mut R) -> Result<Self> {
        let mut m = Self::new(cfg, prefix)?;
        init_parameters(&mut m.params, sigma, rng)?;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Output projection parameters `(weight [H, V], bias [1, V])`.
    pub fn projection(&self) -> (ParamId, ParamId) {
        (self.out_w, self.out_b)
    }

    fn zeros(&self, g: &mut Graph<'_, F>, rows: usize) -> Result<Var> {
        g.constant(Tensor::zeros(&[rows, self.cfg.hidden]))
    }

    pub fn encode(&self, g: &mut Graph<'_, F>, src: &PaddedBatch) -> Result<Annotations> {
        let (b, t_len) = (src.batch_size(), src.max_len());
        if t_len == 0 || src.min_len() == 0 {
            return Err(Error::invalid("encoder input rows must be non-empty"));
        }
        let embed = g.param(self.embed);
        let mut inputs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            inputs.push(g.gather(embed, &src.column(t))?);
        }
        let masks: Vec<Vec<F>> = (0..t_len)
            .map(|t| {
                src.mask
                    .iter()
                    .map(|m| if m[t] { F::one() } else { F::zero() })
                    .collect()
            })
            .collect();

        let mut final_backward = None;
        for l in 0..self.cfg.enc_layers {
            let mut fwd = Vec::with_capacity(t_len);
            let (mut h, mut c) = (self.zeros(g, b)?, self.zeros(g, b)?);
            for t in 0..t_len {
                let (hn, cn) = self.enc_fwd[l].step(g, inputs[t], h, c)?;
                h = g.blend(hn, h, &masks[t])?;
                c = g.blend(cn, c, &masks[t])?;
                fwd.push(h);
            }
            // padded tail positions keep the zero state, so each row starts at its own end
            let mut bwd = vec![h; t_len];
            let (mut h, mut c) = (self.zeros(g, b)?, self.zeros(g, b)?);
            for t in (0..t_len).rev() {
                let (hn, cn) = self.enc_bwd[l].step(g, inputs[t], h, c)?;
                h = g.blend(hn, h, &masks[t])?;
                c = g.blend(cn, c, &masks[t])?;
                bwd[t] = h;
            }
            final_backward = Some(bwd[0]);
            inputs = fwd
                .iter()
                .zip(&bwd)
                .map(|(&f, &bk)| g.concat(&[f, bk]))
                .collect::<Result<_>>()?;
        }
        let final_backward = final_backward.expect("enc_layers >= 1");
        self.annotations_from(g, inputs, src.mask.clone(), final_backward)
    }

    /// Annotations from explicit `[B, 2H]` states, for driving attention directly.
    pub fn annotations_from(
        &self,
        g: &mut Graph<'_, F>,
        states: Vec<Var>,
        mask: Vec<Vec<bool>>,
        final_backward: Var,
    ) -> Result<Annotations> {
        let wk = g.param(self.attn_keys);
        let keys = states.iter().map(|&s| g.matmul(s, wk)).collect::<Result<_>>()?;
        Ok(Annotations {
            states,
            keys,
            mask,
            final_backward,
        })
    }

    /// First decoder layer starts from `tanh(W · final backward state + b)`; upper layers at zero.
    pub fn initial_state(&self, g: &mut Graph<'_, F>, ann: &Annotations) -> Result<DecoderState> {
        let rows = g.value(ann.final_backward).rows();
        let w = g.param(self.bridge_w);
        let b = g.param(self.bridge_b);
        let h0 = g.matmul(ann.final_backward, w)?;
        let h0 = g.add(h0, b)?;
        let h0 = g.tanh(h0);
        let mut layers = vec![(h0, self.zeros(g, rows)?)];
        for _ in 1..self.cfg.dec_layers {
            layers.push((self.zeros(g, rows)?, self.zeros(g, rows)?));
        }
        Ok(DecoderState { layers })
    }

    /// Additive attention. Returns `(context [B, 2H], weights [B, T])`.
    pub fn attend(&self, g: &mut Graph<'_, F>, state: &DecoderState, ann: &Annotations) -> Result<(Var, Var)> {
        let wq = g.param(self.attn_query);
        let v = g.param(self.attn_v);
        let q = g.matmul(state.top(), wq)?;
        let mut scores = Vec::with_capacity(ann.len());
        for &k in &ann.keys {
            let e = g.add(k, q)?;
            let e = g.tanh(e);
            scores.push(g.matmul(e, v)?);
        }
        let scores = g.concat(&scores)?;
        let weights = g.masked_softmax(scores, &ann.mask)?;
        let mut ctx = None;
        for (t, &s) in ann.states.iter().enumerate() {
            let w_t = g.slice(weights, t, 1)?;
            let term = g.scale_rows(s, w_t)?;
            ctx = Some(match ctx {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        Ok((ctx.expect("non-empty source"), weights))
    }

    /// One decoder step. Returns log-probabilities `[B, V]` and the next state.
    pub fn decode_step(
        &self,
        g: &mut Graph<'_, F>,
        state: &DecoderState,
        prev: &[usize],
        context: Var,
    ) -> Result<(Var, DecoderState)> {
        let embed = g.param(self.embed);
        let emb = g.gather(embed, prev)?;
        let mut input = g.concat(&[emb, context])?;
        let mut layers = Vec::with_capacity(self.dec.len());
        for (cell, &(h, c)) in self.dec.iter().zip(&state.layers) {
            let (hn, cn) = cell.step(g, input, h, c)?;
            layers.push((hn, cn));
            input = hn;
        }
        let w = g.param(self.out_w);
        let b = g.param(self.out_b);
        let logits = g.matmul(input, w)?;
        let logits = g.add(logits, b)?;
        let logp = g.log_softmax(logits)?;
        Ok((logp, DecoderState { layers }))
    }

    /// Teacher-forced scoring: row `i` is fed `BOS, targets[i][..n-1]` and scored on `targets[i]`.
    pub fn score_targets(
        &self,
        g: &mut Graph<'_, F>,
        src: &PaddedBatch,
        targets: &[Vec<usize>],
    ) -> Result<TargetScores> {
        if targets.len() != src.batch_size() {
            return Err(Error::invalid(format!(
                "{} target rows for {} source rows",
                targets.len(),
                src.batch_size()
            )));
        }
        if targets.iter().any(Vec::is_empty) {
            return Err(Error::invalid("target rows must be non-empty"));
        }
        let ann = self.encode(g, src)?;
        let mut state = self.initial_state(g, &ann)?;
        let steps = targets.iter().map(Vec::len).max().unwrap_or(0);
        let mut cols = Vec::with_capacity(steps);
        for t in 0..steps {
            let prev: Vec<usize> = targets
                .iter()
                .map(|r| {
                    if t == 0 {
                        BOS
                    } else {
                        r.get(t - 1).copied().unwrap_or(BOS)
                    }
                })
                .collect();
            let tgt: Vec<usize> = targets.iter().map(|r| r.get(t).copied().unwrap_or(0)).collect();
            let (ctx, _) = self.attend(g, &state, &ann)?;
            let (logp, next) = self.decode_step(g, &state, &prev, ctx)?;
            cols.push(g.pick(logp, &tgt)?);
            state = next;
        }
        let logp = g.concat(&cols)?;
        let lengths: Vec<usize> = targets.iter().map(Vec::len).collect();
        let mask = lengths.iter().map(|&l| (0..steps).map(|j| j < l).collect()).collect();
        Ok(TargetScores { logp, mask, lengths })
    }

    /// Teacher-forced scores of unframed `(source, target)` rows; see [`source_row`] and [`target_row`].
    pub fn score_pairs(
        &self,
        g: &mut Graph<'_, F>,
        sources: &[Vec<usize>],
        targets: &[Vec<usize>],
    ) -> Result<TargetScores> {
        let src = PaddedBatch::from_ids(sources.iter().map(|s| source_row(s)).collect())?;
        let tgt: Vec<Vec<usize>> = targets.iter().map(|t| target_row(t)).collect();
        self.score_targets(g, &src, &tgt)
    }

    /// Mean over target positions of `-log p`, teacher-forced; `targets` already end with EOS.
    pub fn mle_loss(&self, g: &mut Graph<'_, F>, src: &PaddedBatch, targets: &[Vec<usize>]) -> Result<Var> {
        let scores = self.score_targets(g, src, targets)?;
        mle_from_scores(g, &scores, usize::MAX)
    }
}

/// MLE term over the first `cap` positions of every row, averaged over those positions.
pub fn mle_from_scores<F: Real>(g: &mut Graph<'_, F>, scores: &TargetScores, cap: usize) -> Result<Var> {
    let count: usize = scores.lengths.iter().map(|&l| l.min(cap)).sum();
    if count == 0 {
        return Err(Error::invalid("no target positions to average over"));
    }
    let w = scores.weights::<F>(|_, j| if j < cap { -1.0 / count as f64 } else { 0.0 });
    g.weighted_sum(scores.logp, &w)
}

/// Encoder input for a token row. An empty row (e.g. a response that was EOS
/// straight away) is read as a lone EOS.
pub fn source_row(ids: &[usize]) -> Vec<usize> {
    if ids.is_empty() {
        vec![EOS]
    } else {
        ids.to_vec()
    }
}

/// Scoring targets for a token row: the row followed by EOS.
pub fn target_row(ids: &[usize]) -> Vec<usize> {
    ids.iter().copied().chain(std::iter::once(EOS)).collect()
}
