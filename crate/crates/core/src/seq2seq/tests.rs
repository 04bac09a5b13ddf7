use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{PaddedBatch, EOS};
use crate::numerics::gradcheck::{check_gradients, GradCheckOptions};
use crate::numerics::{adam_step, Graph, OptimizerState, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn model(v: usize, e: usize, h: usize, sigma: f64, seed: u64) -> Seq2Seq<f64> {
    Seq2Seq::initialized(ModelConfig::tiny(v, e, h), "m", sigma, &mut rng(seed)).unwrap()
}

fn batch(rows: &[&[usize]]) -> PaddedBatch {
    PaddedBatch::from_ids(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
}

fn set(m: &mut Seq2Seq<f64>, id: crate::numerics::ParamId, f: impl Fn(usize) -> f64) {
    for (i, x) in m.params_mut().get_mut(id).value.data_mut().iter_mut().enumerate() {
        *x = f(i);
    }
}

#[test]
fn annotations_have_one_state_per_position() {
    let m = model(10, 3, 4, 0.3, 1);
    let src = batch(&[&[4, 5, 6, 7, 8]]);
    let mut g = Graph::new(m.params());
    let ann = m.encode(&mut g, &src).unwrap();
    assert_eq!(ann.len(), 5);
    for &s in &ann.states {
        assert_eq!(g.value(s).shape(), &[1, 8]);
    }
}

#[test]
fn annotations_depend_on_order() {
    let m = model(10, 3, 4, 0.3, 2);
    let mut g = Graph::new(m.params());
    let a = m.encode(&mut g, &batch(&[&[4, 5, 6]])).unwrap();
    let b = m.encode(&mut g, &batch(&[&[6, 5, 4]])).unwrap();
    let va = g.value(a.states[0]).data().to_vec();
    let vb = g.value(b.states[2]).data().to_vec();
    assert!(va.iter().zip(&vb).any(|(x, y)| (x - y).abs() > 1e-9));
}

#[test]
fn padding_does_not_leak_into_shorter_rows() {
    let m = model(10, 3, 4, 0.3, 3);
    let mut g = Graph::new(m.params());
    let alone = m.encode(&mut g, &batch(&[&[4, 5]])).unwrap();
    let padded = m.encode(&mut g, &batch(&[&[4, 5], &[6, 7, 8, 9]])).unwrap();
    for t in 0..2 {
        let a = g.value(alone.states[t]).row(0).to_vec();
        let p = g.value(padded.states[t]).row(0).to_vec();
        for (x, y) in a.iter().zip(&p) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn single_annotation_gets_all_the_weight() {
    let m = model(10, 3, 4, 0.3, 4);
    let mut g = Graph::new(m.params());
    let ann = m.encode(&mut g, &batch(&[&[5]])).unwrap();
    let st = m.initial_state(&mut g, &ann).unwrap();
    let (_, w) = m.attend(&mut g, &st, &ann).unwrap();
    assert_eq!(g.value(w).data(), &[1.0]);
}

#[test]
fn identical_annotations_give_uniform_weights() {
    let m = model(10, 3, 4, 0.3, 5);
    let mut g = Graph::new(m.params());
    let s = g
        .constant(Tensor::matrix(1, 8, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8]).unwrap())
        .unwrap();
    let fb = g.constant(Tensor::zeros(&[1, 4])).unwrap();
    let ann = m.annotations_from(&mut g, vec![s; 4], vec![vec![true; 4]], fb).unwrap();
    let st = m.initial_state(&mut g, &ann).unwrap();
    let (ctx, w) = m.attend(&mut g, &st, &ann).unwrap();
    for &x in g.value(w).data() {
        assert!((x - 0.25).abs() < 1e-12);
    }
    for (a, b) in g.value(ctx).data().iter().zip(g.value(s).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_ignores_padding_and_normalizes() {
    let m = model(10, 3, 4, 0.5, 6);
    let mut g = Graph::new(m.params());
    let ann = m.encode(&mut g, &batch(&[&[4, 5], &[6, 7, 8, 9]])).unwrap();
    let st = m.initial_state(&mut g, &ann).unwrap();
    let (_, w) = m.attend(&mut g, &st, &ann).unwrap();
    let w = g.value(w);
    assert_eq!(w.get(0, 2), 0.0);
    assert_eq!(w.get(0, 3), 0.0);
    for r in 0..2 {
        let s: f64 = w.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn decoder_step_is_a_distribution_and_deterministic() {
    let m = model(12, 4, 5, 0.3, 7);
    let run = || {
        let mut g = Graph::new(m.params());
        let ann = m.encode(&mut g, &batch(&[&[4, 5, 6]])).unwrap();
        let st = m.initial_state(&mut g, &ann).unwrap();
        let (ctx, _) = m.attend(&mut g, &st, &ann).unwrap();
        let (lp, _) = m.decode_step(&mut g, &st, &[7], ctx).unwrap();
        g.value(lp).data().to_vec()
    };
    let a = run();
    assert_eq!(a.len(), 12);
    let total: f64 = a.iter().map(|x| x.exp()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(a, run());
}

#[test]
fn projection_gradient_matches_finite_differences() {
    let mut m = model(8, 3, 3, 0.4, 8);
    let (w, b) = m.projection();
    let src = batch(&[&[4, 5]]);
    let targets = vec![vec![6, EOS]];
    let checks = check_gradients(&mut m, GradCheckOptions::default(), |m, want| {
        let mut g = Graph::new(m.params());
        let loss = m.mle_loss(&mut g, &src, &targets)?;
        let v = g.value(loss).item();
        Ok((v, if want { Some(g.backward(loss)?) } else { None }))
    })
    .unwrap();
    let names = [m.params().get(w).name.clone(), m.params().get(b).name.clone()];
    for c in checks.iter().filter(|c| names.contains(&c.name)) {
        assert!(c.passed(1e-6), "{c:?}");
    }
}

#[test]
fn uniform_output_gives_log_vocab_loss() {
    let mut m = model(9, 3, 4, 0.3, 9);
    let (w, b) = m.projection();
    set(&mut m, w, |_| 0.0);
    set(&mut m, b, |_| 0.0);
    let mut g = Graph::new(m.params());
    let loss = m.mle_loss(&mut g, &batch(&[&[4, 5]]), &[vec![6, 7, EOS]]).unwrap();
    assert!((g.value(loss).item() - 9f64.ln()).abs() < 1e-12);
}

#[test]
fn four_equally_likely_targets_give_log_four() {
    let mut m = model(5, 3, 4, 0.3, 10);
    let (w, b) = m.projection();
    set(&mut m, w, |_| 0.0);
    // token 0 is effectively impossible, the other four tie
    set(&mut m, b, |i| if i == 0 { -1e3 } else { 0.0 });
    let mut g = Graph::new(m.params());
    let loss = m.mle_loss(&mut g, &batch(&[&[4]]), &[vec![4, EOS]]).unwrap();
    assert!((g.value(loss).item() - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn confident_eos_gives_zero_loss() {
    let mut m = model(7, 3, 4, 0.3, 11);
    let (w, b) = m.projection();
    set(&mut m, w, |_| 0.0);
    set(&mut m, b, |i| if i == EOS { 50.0 } else { 0.0 });
    let mut g = Graph::new(m.params());
    let loss = m.mle_loss(&mut g, &batch(&[&[4, 5]]), &[vec![EOS]]).unwrap();
    assert!(g.value(loss).item().abs() < 1e-12);
}

fn fit(m: &mut Seq2Seq<f64>, src: &PaddedBatch, targets: &[Vec<usize>], steps: usize, lr: f64) -> (f64, f64) {
    let mut opt = OptimizerState::with_lr(lr);
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..steps {
        let grads = {
            let mut g = Graph::new(m.params());
            let loss = m.mle_loss(&mut g, src, targets).unwrap();
            last = g.value(loss).item();
            first.get_or_insert(last);
            g.backward(loss).unwrap()
        };
        m.params_mut().accumulate(grads);
        adam_step(m.params_mut(), &mut opt).unwrap();
    }
    (first.unwrap(), last)
}

#[test]
fn adam_overfits_a_single_pair() {
    let mut m = model(12, 4, 6, 0.1, 12);
    let src = batch(&[&[4, 5, 6]]);
    let targets = vec![vec![7, 8, 9, EOS]];
    let (first, last) = fit(&mut m, &src, &targets, 50, 0.1);
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn greedy_follows_a_learned_response() {
    let mut m = model(10, 4, 6, 0.1, 13);
    let src = batch(&[&[4, 5]]);
    fit(&mut m, &src, &[vec![6, EOS]], 80, 0.05);
    let out = m.generate(&src, DecodeMode::Greedy, 10, &mut rng(0)).unwrap();
    assert_eq!(out[0].tokens, vec![6]);
    assert_eq!(out[0].termination, Termination::Eos);
    assert_eq!(out[0].actions(), vec![6, EOS]);
    assert_eq!(out[0].log_probs.len(), 2);
}

#[test]
fn immediate_eos_yields_an_empty_response() {
    let mut m = model(8, 3, 4, 0.3, 14);
    let (_, b) = m.projection();
    set(&mut m, b, |i| if i == EOS { 20.0 } else { 0.0 });
    let out = m
        .generate(&batch(&[&[4, 5]]), DecodeMode::Greedy, 10, &mut rng(0))
        .unwrap();
    assert!(out[0].tokens.is_empty());
    assert_eq!(out[0].termination, Termination::Eos);
    assert_eq!(out[0].log_probs.len(), 1);
}

#[test]
fn length_cap_stops_generation() {
    let mut m = model(8, 3, 4, 0.3, 15);
    let (_, b) = m.projection();
    set(&mut m, b, |i| if i == 5 { 20.0 } else { 0.0 });
    let out = m.generate(&batch(&[&[4]]), DecodeMode::Greedy, 3, &mut rng(0)).unwrap();
    assert_eq!(out[0].tokens, vec![5, 5, 5]);
    assert_eq!(out[0].termination, Termination::MaxLength);
    assert!(m.generate(&batch(&[&[4]]), DecodeMode::Greedy, 0, &mut rng(0)).is_err());
}

#[test]
fn sampled_log_probs_match_teacher_forced_scores() {
    let m = model(9, 3, 4, 0.8, 16);
    let src = batch(&[&[4, 5, 6]]);
    for seed in 0..5 {
        let out = m.generate(&src, DecodeMode::Sample, 6, &mut rng(seed)).unwrap();
        let actions = out[0].actions();
        if actions.is_empty() {
            continue;
        }
        let mut g = Graph::new(m.params());
        let scores = m.score_targets(&mut g, &src, &[actions]).unwrap();
        assert_eq!(scores.rows(&g)[0], out[0].log_probs);
    }
}

#[test]
fn sampling_is_seeded() {
    let m = model(9, 3, 4, 0.8, 17);
    let src = batch(&[&[4, 5], &[6, 7, 8]]);
    let a = m.generate(&src, DecodeMode::Sample, 6, &mut rng(3)).unwrap();
    let b = m.generate(&src, DecodeMode::Sample, 6, &mut rng(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn argmax_prefers_lowest_tied_id() {
    assert_eq!(argmax(&[0.1, 0.5, 0.5, 0.2]), 1);
}

#[test]
fn whole_model_gradients_match_finite_differences() {
    let mut m = model(8, 3, 3, 0.4, 18);
    let src = batch(&[&[4, 5, 6], &[7, 5]]);
    let targets = vec![vec![5, 6, EOS], vec![EOS]];
    let checks = check_gradients(&mut m, GradCheckOptions::default(), |m, want| {
        let mut g = Graph::new(m.params());
        let loss = m.mle_loss(&mut g, &src, &targets)?;
        let v = g.value(loss).item();
        Ok((v, if want { Some(g.backward(loss)?) } else { None }))
    })
    .unwrap();
    for c in &checks {
        assert!(c.passed(1e-4), "{c:?}");
    }
}

#[test]
fn config_validation() {
    assert!(ModelConfig::tiny(4, 3, 3).validate().is_err());
    let mut c = ModelConfig::tiny(10, 3, 3);
    c.dec_layers = 0;
    assert!(c.validate().is_err());
    assert!(ModelConfig::default().validate().is_ok());
}
