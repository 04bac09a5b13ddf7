use rand::seq::SliceRandom;
use rand::Rng;

use super::policy::{teacher_forcing_loss, teacher_forcing_step};
use crate::error::{Error, Result};
use crate::numerics::{Graph, OptimizerState, Real};
use crate::seq2seq::Seq2Seq;

/// Unframed `(source, target)` token rows.
pub type Pair = (Vec<usize>, Vec<usize>);

fn split(chunk: &[&Pair]) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    chunk.iter().map(|(s, t)| (s.clone(), t.clone())).unzip()
}

/// One shuffled pass of MLE updates. Returns the mean batch loss.
pub fn mle_epoch<F: Real, R: Rng + ?Sized>(
    model: &mut Seq2Seq<F>,
    pairs: &[Pair],
    batch_size: usize,
    opt: &mut OptimizerState,
    rng: &mut R,
) -> Result<f64> {
    if pairs.is_empty() || batch_size == 0 {
        return Err(Error::invalid("MLE epoch needs pairs and a positive batch size"));
    }
    let mut order: Vec<&Pair> = pairs.iter().collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(batch_size) {
        let (src, tgt) = split(chunk);
        total += teacher_forcing_step(model, opt, &src, &tgt)?.loss;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// `exp` of the mean negative log-likelihood per target token (EOS included).
pub fn perplexity<F: Real>(model: &Seq2Seq<F>, pairs: &[Pair], batch_size: usize) -> Result<f64> {
    if pairs.is_empty() || batch_size == 0 {
        return Err(Error::invalid("perplexity needs pairs and a positive batch size"));
    }
    let refs: Vec<&Pair> = pairs.iter().collect();
    let (mut nll, mut tokens) = (0.0, 0usize);
    for chunk in refs.chunks(batch_size) {
        let (src, tgt) = split(chunk);
        let mut g = Graph::new(model.params());
        let loss = teacher_forcing_loss(model, &mut g, &src, &tgt)?;
        let n: usize = tgt.iter().map(|t| t.len() + 1).sum();
        nll += g.value(loss).item().as_f64() * n as f64;
        tokens += n;
    }
    Ok((nll / tokens as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_model_has_vocabulary_perplexity() {
        let mut m = Seq2Seq::<f64>::new(ModelConfig::tiny(11, 3, 3), "gen").unwrap();
        let pairs = vec![(vec![4, 5], vec![6]), (vec![7], vec![8, 9, 10])];
        assert!((perplexity(&m, &pairs, 1).unwrap() - 11.0).abs() < 1e-9);
        let (_, b) = m.projection();
        m.params_mut().get_mut(b).value.data_mut()[6] = 1.0;
        assert!(perplexity(&m, &pairs, 2).unwrap() != 11.0);
    }

    #[test]
    fn epochs_lower_perplexity_and_are_seeded() {
        let pairs: Vec<Pair> = (0..6).map(|i| (vec![4 + i % 3], vec![4 + i % 3, 7])).collect();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut m = Seq2Seq::<f64>::initialized(ModelConfig::tiny(9, 4, 4), "gen", 0.1, &mut rng).unwrap();
            let before = perplexity(&m, &pairs, 4).unwrap();
            let mut opt = OptimizerState::with_lr(0.02);
            for _ in 0..15 {
                mle_epoch(&mut m, &pairs, 2, &mut opt, &mut rng).unwrap();
            }
            (before, perplexity(&m, &pairs, 4).unwrap(), m.params().values())
        };
        let (before, after, p) = run();
        assert!(after < 0.5 * before, "{before} -> {after}");
        assert_eq!(run().2, p);
    }
}
