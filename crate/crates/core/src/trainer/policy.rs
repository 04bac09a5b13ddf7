use super::rewards::AdvantageBatch;
use crate::corpus::PaddedBatch;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, clip_global_norm, Gradients, Graph, OptimizerState, ParamStore, Real, Var};
use crate::seq2seq::{mle_from_scores, source_row, GenerationResult, Seq2Seq, TargetScores};

/// One sampled response together with the source it was decoded from.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub source: Vec<usize>,
    /// Content tokens, plus EOS when the policy emitted it.
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
}

impl Rollout {
    pub fn from_generation(source: &[usize], g: &GenerationResult) -> Self {
        Rollout {
            source: source.to_vec(),
            actions: g.actions(),
            log_probs: g.log_probs.clone(),
        }
    }

    /// The response without its closing EOS.
    pub fn tokens(&self) -> &[usize] {
        match self.actions.last() {
            Some(&crate::corpus::EOS) => &self.actions[..self.actions.len() - 1],
            _ => &self.actions,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm_preclip: f64,
    pub grad_norm_postclip: f64,
}

/// `-Σ_n w_n Σ_{m >= from} A[n][m] · log p[n][m]` over the valid entries of `scores`.
pub fn pg_surrogate<F: Real>(
    g: &mut Graph<'_, F>,
    scores: &TargetScores,
    advantages: &[Vec<f64>],
    row_weights: &[f64],
    from: usize,
) -> Result<Var> {
    if advantages.len() != scores.lengths.len() || row_weights.len() != scores.lengths.len() {
        return Err(Error::invalid("advantages, weights and scored rows differ in count"));
    }
    for (a, &l) in advantages.iter().zip(&scores.lengths) {
        if a.len() != l {
            return Err(Error::invalid(format!(
                "{} advantages for a row of {l} actions",
                a.len()
            )));
        }
    }
    let w = scores.weights::<F>(|n, m| {
        if m >= from {
            -row_weights[n] * advantages[n][m]
        } else {
            0.0
        }
    });
    g.weighted_sum(scores.logp, &w)
}

/// Teacher-forced scores of each rollout's own actions under `model`.
pub fn score_rollouts<F: Real>(model: &Seq2Seq<F>, g: &mut Graph<'_, F>, rollouts: &[Rollout]) -> Result<TargetScores> {
    if rollouts.iter().any(|r| r.actions.is_empty()) {
        return Err(Error::invalid("rollout without actions"));
    }
    let src = PaddedBatch::from_ids(rollouts.iter().map(|r| source_row(&r.source)).collect())?;
    let actions: Vec<Vec<usize>> = rollouts.iter().map(|r| r.actions.clone()).collect();
    model.score_targets(g, &src, &actions)
}

/// Generator objective: MLE on the first `threshold` words of the real responses,
/// policy gradient on rollout words past `threshold`. Each part is a per-word mean.
pub fn pg_loss<F: Real>(
    model: &Seq2Seq<F>,
    g: &mut Graph<'_, F>,
    queries: &[Vec<usize>],
    responses: &[Vec<usize>],
    rollouts: &[Rollout],
    advantages: &AdvantageBatch,
    threshold: usize,
) -> Result<Var> {
    if advantages.advantages.len() != rollouts.len() {
        return Err(Error::invalid("one advantage row per rollout required"));
    }
    let mle = if threshold > 0 {
        let scores = model.score_pairs(g, queries, responses)?;
        Some(mle_from_scores(g, &scores, threshold)?)
    } else {
        None
    };
    let pg_words: usize = rollouts.iter().map(|r| r.actions.len().saturating_sub(threshold)).sum();
    let pg = if pg_words > 0 {
        let scores = score_rollouts(model, g, rollouts)?;
        let w = vec![1.0 / pg_words as f64; rollouts.len()];
        Some(pg_surrogate(g, &scores, &advantages.advantages, &w, threshold)?)
    } else {
        None
    };
    match (mle, pg) {
        (Some(a), Some(b)) => g.add(a, b),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => Err(Error::invalid("generator step has no words to train on")),
    }
}

/// Accumulate `grads`, clip to the configured global norm, take one Adam step.
pub fn apply_update<F: Real>(
    store: &mut ParamStore<F>,
    grads: Gradients<F>,
    opt: &mut OptimizerState,
) -> Result<(f64, f64)> {
    store.accumulate(grads);
    let pre = clip_global_norm(store, opt.max_grad_norm);
    if !pre.is_finite() {
        store.zero_grad();
        return Err(Error::NonFinite(format!("gradient norm {pre}")));
    }
    let post = store.grad_norm();
    adam_step(store, opt)?;
    Ok((pre, post))
}

fn step_on<F: Real>(
    model: &mut Seq2Seq<F>,
    opt: &mut OptimizerState,
    build: impl FnOnce(&Seq2Seq<F>, &mut Graph<'_, F>) -> Result<Var>,
) -> Result<StepStats> {
    let (loss, grads) = {
        let mut g = Graph::new(model.params());
        let root = build(model, &mut g)?;
        let loss = g.value(root).item().as_f64();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss}")));
        }
        (loss, g.backward(root)?)
    };
    let (pre, post) = apply_update(model.params_mut(), grads, opt)?;
    Ok(StepStats {
        loss,
        grad_norm_preclip: pre,
        grad_norm_postclip: post,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn policy_gradient_step<F: Real>(
    model: &mut Seq2Seq<F>,
    opt: &mut OptimizerState,
    queries: &[Vec<usize>],
    responses: &[Vec<usize>],
    rollouts: &[Rollout],
    advantages: &AdvantageBatch,
    threshold: usize,
) -> Result<StepStats> {
    step_on(model, opt, |m, g| {
        pg_loss(m, g, queries, responses, rollouts, advantages, threshold)
    })
}

/// One MLE update on real `(query, response)` pairs.
pub fn teacher_forcing_step<F: Real>(
    model: &mut Seq2Seq<F>,
    opt: &mut OptimizerState,
    queries: &[Vec<usize>],
    responses: &[Vec<usize>],
) -> Result<StepStats> {
    step_on(model, opt, |m, g| teacher_forcing_loss(m, g, queries, responses))
}

pub fn teacher_forcing_loss<F: Real>(
    model: &Seq2Seq<F>,
    g: &mut Graph<'_, F>,
    queries: &[Vec<usize>],
    responses: &[Vec<usize>],
) -> Result<Var> {
    let scores = model.score_pairs(g, queries, responses)?;
    mle_from_scores(g, &scores, usize::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EOS;
    use crate::seq2seq::{target_row, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> Seq2Seq<f64> {
        Seq2Seq::initialized(
            ModelConfig::tiny(9, 3, 4),
            "gen",
            0.3,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    fn data() -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        (vec![vec![4, 5], vec![6, 7, 8]], vec![vec![5, 6, 7], vec![8]])
    }

    fn rollouts() -> Vec<Rollout> {
        vec![
            Rollout {
                source: vec![4, 5],
                actions: vec![6, EOS],
                log_probs: vec![],
            },
            Rollout {
                source: vec![6, 7, 8],
                actions: vec![4, 4, 5],
                log_probs: vec![],
            },
        ]
    }

    fn grads(m: &Seq2Seq<f64>, f: impl FnOnce(&mut Graph<'_, f64>) -> Var) -> Vec<f64> {
        let mut g = Graph::new(m.params());
        let root = f(&mut g);
        g.backward(root)
            .unwrap()
            .to_dense(m.params())
            .iter()
            .flat_map(|t| t.data().to_vec())
            .collect()
    }

    #[test]
    fn full_threshold_is_exactly_mle() {
        let m = model(1);
        let (q, r) = data();
        let adv = AdvantageBatch::constant(&[2, 3], 0.7);
        let a = grads(&m, |g| pg_loss(&m, g, &q, &r, &rollouts(), &adv, 4).unwrap());
        let b = grads(&m, |g| teacher_forcing_loss(&m, g, &q, &r).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn unit_reward_pg_on_real_responses_is_teacher_forcing() {
        let m = model(2);
        let (q, r) = data();
        let real: Vec<Rollout> = q
            .iter()
            .zip(&r)
            .map(|(x, y)| Rollout {
                source: x.clone(),
                actions: target_row(y),
                log_probs: vec![],
            })
            .collect();
        let adv = AdvantageBatch::constant(&[4, 2], 1.0);
        let a = grads(&m, |g| pg_loss(&m, g, &q, &r, &real, &adv, 0).unwrap());
        let b = grads(&m, |g| teacher_forcing_loss(&m, g, &q, &r).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-10 * x.abs().max(y.abs()).max(1e-12));
        }
    }

    #[test]
    fn zero_advantages_leave_parameters_unchanged() {
        let mut m = model(3);
        let (q, r) = data();
        let before = m.params().values();
        let adv = AdvantageBatch::constant(&[2, 3], 0.0);
        let mut opt = OptimizerState::default();
        let s = policy_gradient_step(&mut m, &mut opt, &q, &r, &rollouts(), &adv, 0).unwrap();
        assert_eq!(s.grad_norm_preclip, 0.0);
        assert_eq!(m.params().values(), before);
    }

    #[test]
    fn post_clip_norm_is_bounded() {
        let mut m = model(4);
        let (q, r) = data();
        let adv = AdvantageBatch::constant(&[2, 3], 500.0);
        let mut opt = OptimizerState::default();
        let s = policy_gradient_step(&mut m, &mut opt, &q, &r, &rollouts(), &adv, 1).unwrap();
        assert!(s.grad_norm_preclip > 2.0);
        assert!(s.grad_norm_postclip <= 2.0 + 1e-6);
    }

    #[test]
    fn teacher_forcing_reduces_loss() {
        let mut m = model(5);
        let (q, r) = data();
        let mut opt = OptimizerState::with_lr(0.01);
        let first = teacher_forcing_step(&mut m, &mut opt, &q, &r).unwrap().loss;
        let mut last = first;
        for _ in 0..20 {
            last = teacher_forcing_step(&mut m, &mut opt, &q, &r).unwrap().loss;
        }
        assert!(last < first);
    }

    #[test]
    fn mismatched_advantages_are_rejected() {
        let m = model(6);
        let (q, r) = data();
        let mut g = Graph::new(m.params());
        let adv = AdvantageBatch::constant(&[2, 2], 1.0);
        assert!(pg_loss(&m, &mut g, &q, &r, &rollouts(), &adv, 0).is_err());
        let adv = AdvantageBatch::constant(&[2], 1.0);
        assert!(pg_loss(&m, &mut g, &q, &r, &rollouts(), &adv, 0).is_err());
    }

    #[test]
    fn rollout_tokens_drop_eos() {
        let r = rollouts();
        assert_eq!(r[0].tokens(), &[6]);
        assert_eq!(r[1].tokens(), &[4, 4, 5]);
    }
}
