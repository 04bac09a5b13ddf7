use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{apply_update, policy_gradient_step, teacher_forcing_step, Rollout};
use super::rewards::{
    combined_reward, reward_to_go, shift_by_min, AdvantageBatch, BaselineMode, CurriculumSchedule, RewardConfig,
};
use crate::corpus::{EncodedTriple, PaddedBatch};
use crate::discriminators::{BackwardDiscriminator, DiscBatch, ForwardDiscriminator};
use crate::error::{Error, Result};
use crate::numerics::{Graph, OptimizerState, Real};
use crate::seq2seq::{source_row, DecodeMode, Seq2Seq};

/// Which discriminators shape the generator reward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Forward reward only, response-level baseline.
    F,
    /// Backward word rewards only, word-level baseline.
    B,
    /// Both combined, word-level baseline.
    #[default]
    A,
}

impl Mode {
    pub fn uses_forward(self) -> bool {
        matches!(self, Mode::F | Mode::A)
    }

    pub fn uses_backward(self) -> bool {
        matches!(self, Mode::B | Mode::A)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub g_steps: usize,
    pub d_steps: usize,
    /// A teacher-forcing update follows every `tf_every`-th policy-gradient update.
    pub tf_every: usize,
    pub cycles: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            g_steps: 1000,
            d_steps: 5000,
            tf_every: 1,
            cycles: 1,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("g_steps", self.g_steps),
            ("d_steps", self.d_steps),
            ("tf_every", self.tf_every),
            ("cycles", self.cycles),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("schedule.{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialConfig {
    pub mode: Mode,
    pub batch_size: usize,
    pub max_decode_len: usize,
    pub schedule: ScheduleConfig,
    pub reward: RewardConfig,
    pub curriculum: CurriculumSchedule,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            mode: Mode::A,
            batch_size: 256,
            max_decode_len: 40,
            schedule: ScheduleConfig::default(),
            reward: RewardConfig::default(),
            curriculum: CurriculumSchedule::default(),
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.max_decode_len == 0 {
            return Err(Error::invalid("max_decode_len must be >= 1"));
        }
        self.schedule.validate()?;
        self.reward.validate()?;
        self.curriculum.validate()
    }
}

/// The generator and whichever discriminators the mode needs.
#[derive(Clone, Debug)]
pub struct Models<F> {
    pub gen: Seq2Seq<F>,
    pub d1: Option<ForwardDiscriminator<F>>,
    pub d2: Option<BackwardDiscriminator<F>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub gen: OptimizerState,
    pub d1: OptimizerState,
    pub d2: OptimizerState,
}

impl Optimizers {
    pub fn uniform(opt: &OptimizerState) -> Self {
        Optimizers {
            gen: opt.clone(),
            d1: opt.clone(),
            d2: opt.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    G,
    D,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Disc {
    D1,
    D2,
}

/// One JSON Lines entry of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub phase: Phase,
    pub step: usize,
    pub loss: f64,
    #[serde(rename = "mean_R1_true")]
    pub mean_r1_true: Option<f64>,
    #[serde(rename = "mean_R1_gen")]
    pub mean_r1_gen: Option<f64>,
    #[serde(rename = "mean_R2_true")]
    pub mean_r2_true: Option<f64>,
    #[serde(rename = "mean_R2_gen")]
    pub mean_r2_gen: Option<f64>,
    pub grad_norm_preclip: f64,
    pub grad_norm_postclip: f64,
    #[serde(rename = "T")]
    pub threshold: usize,
    pub mean_advantage: Option<f64>,
    pub tf_loss: Option<f64>,
    pub disc: Option<Disc>,
}

impl LogRecord {
    fn new(phase: Phase, step: usize, threshold: usize) -> Self {
        LogRecord {
            phase,
            step,
            loss: 0.0,
            mean_r1_true: None,
            mean_r1_gen: None,
            mean_r2_true: None,
            mean_r2_gen: None,
            grad_norm_preclip: 0.0,
            grad_norm_postclip: 0.0,
            threshold,
            mean_advantage: None,
            tf_loss: None,
            disc: None,
        }
    }

    /// Every numeric field that was filled in.
    pub fn values(&self) -> Vec<f64> {
        [
            Some(self.loss),
            self.mean_r1_true,
            self.mean_r1_gen,
            self.mean_r2_true,
            self.mean_r2_gen,
            Some(self.grad_norm_preclip),
            Some(self.grad_norm_postclip),
            self.mean_advantage,
            self.tf_loss,
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}

/// Receives log records as they are produced and the models after every cycle.
pub trait TrainObserver<F> {
    fn record(&mut self, rec: &LogRecord) -> Result<()>;

    fn end_cycle(&mut self, _cycle: usize, _models: &Models<F>, _opts: &Optimizers) -> Result<()> {
        Ok(())
    }
}

impl<F> TrainObserver<F> for Vec<LogRecord> {
    fn record(&mut self, rec: &LogRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Update counters; carried across calls so the curriculum resumes where it stopped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub g_step: usize,
    pub d_step: usize,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn sample_batch<'a, R: Rng + ?Sized>(data: &'a [EncodedTriple], size: usize, rng: &mut R) -> Vec<&'a EncodedTriple> {
    rand::seq::index::sample(rng, data.len(), size.min(data.len()))
        .into_iter()
        .map(|i| &data[i])
        .collect()
}

fn sample_rollouts<F: Real, R: Rng + ?Sized>(
    gen: &Seq2Seq<F>,
    queries: &[Vec<usize>],
    max_len: usize,
    rng: &mut R,
) -> Result<Vec<Rollout>> {
    let src = PaddedBatch::from_ids(queries.iter().map(|q| source_row(q)).collect())?;
    let out = gen.generate(&src, DecodeMode::Sample, max_len, rng)?;
    Ok(queries
        .iter()
        .zip(&out)
        .map(|(q, g)| Rollout::from_generation(q, g))
        .collect())
}

fn require<'a, T>(m: &'a Option<T>, what: &str, mode: Mode) -> Result<&'a T> {
    m.as_ref()
        .ok_or_else(|| Error::invalid(format!("mode {mode:?} needs the {what} discriminator")))
}

/// Rollout rewards per the mode, with what the log reports about them.
struct ScoredRollouts {
    advantages: AdvantageBatch,
    mean_r1: Option<f64>,
    mean_r2: Option<f64>,
}

fn score<F: Real>(
    models: &Models<F>,
    cfg: &AdversarialConfig,
    rollouts: &[Rollout],
    futures: &[Vec<usize>],
) -> Result<ScoredRollouts> {
    let tokens: Vec<Vec<usize>> = rollouts.iter().map(|r| r.tokens().to_vec()).collect();
    let r1 = if cfg.mode.uses_forward() {
        Some(require(&models.d1, "forward", cfg.mode)?.rewards(&tokens, futures)?)
    } else {
        None
    };
    // a length-capped rollout has no closing EOS, so it is scored on its emitted actions only
    let r2 = if cfg.mode.uses_backward() {
        let full = require(&models.d2, "backward", cfg.mode)?.rewards(futures, &tokens)?;
        Some(
            full.into_iter()
                .zip(rollouts)
                .map(|(mut r, ro)| {
                    r.truncate(ro.actions.len());
                    r
                })
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let (lambda, ix) = (cfg.reward.discount, cfg.reward.discount_indexing);
    let (rewards, min_r1, baseline) = match (cfg.mode, &r1, &r2) {
        (Mode::F, Some(r1), _) => {
            let (min, shifted) = shift_by_min(r1)?;
            let w = shifted
                .iter()
                .zip(rollouts)
                .map(|(&s, ro)| vec![s; ro.actions.len()])
                .collect();
            (w, Some(min), BaselineMode::Response)
        }
        (Mode::B, _, Some(r2)) => {
            let w = r2.iter().map(|r| reward_to_go(r, lambda, ix)).collect();
            (w, None, BaselineMode::Word)
        }
        (Mode::A, Some(r1), Some(r2)) => {
            let (min, _) = shift_by_min(r1)?;
            let w = r1
                .iter()
                .zip(r2)
                .map(|(&a, b)| combined_reward(a, min, b, lambda, ix))
                .collect::<Result<_>>()?;
            (w, Some(min), BaselineMode::Word)
        }
        _ => unreachable!("rewards computed per mode above"),
    };
    Ok(ScoredRollouts {
        advantages: AdvantageBatch::new(rewards, min_r1, baseline)?,
        mean_r1: r1.map(mean),
        mean_r2: r2.map(|r| mean(r.into_iter().flatten())),
    })
}

fn generator_step<F: Real, R: Rng + ?Sized>(
    models: &mut Models<F>,
    opts: &mut Optimizers,
    data: &[EncodedTriple],
    cfg: &AdversarialConfig,
    step: usize,
    rng: &mut R,
) -> Result<LogRecord> {
    let batch = sample_batch(data, cfg.batch_size, rng);
    let queries: Vec<Vec<usize>> = batch.iter().map(|t| t.query.clone()).collect();
    let responses: Vec<Vec<usize>> = batch.iter().map(|t| t.response.clone()).collect();
    let n = cfg.reward.rollouts;
    let rep_queries: Vec<Vec<usize>> = queries.iter().flat_map(|q| std::iter::repeat_n(q.clone(), n)).collect();
    let rep_futures: Vec<Vec<usize>> = batch
        .iter()
        .flat_map(|t| std::iter::repeat_n(t.future.clone(), n))
        .collect();

    let rollouts = sample_rollouts(&models.gen, &rep_queries, cfg.max_decode_len, rng)?;
    let scored = score(models, cfg, &rollouts, &rep_futures)?;
    let threshold = cfg.curriculum.threshold(step);
    let stats = policy_gradient_step(
        &mut models.gen,
        &mut opts.gen,
        &queries,
        &responses,
        &rollouts,
        &scored.advantages,
        threshold,
    )?;
    let mut rec = LogRecord::new(Phase::G, step, threshold);
    rec.loss = stats.loss;
    rec.grad_norm_preclip = stats.grad_norm_preclip;
    rec.grad_norm_postclip = stats.grad_norm_postclip;
    rec.mean_r1_gen = scored.mean_r1;
    rec.mean_r2_gen = scored.mean_r2;
    rec.mean_advantage = Some(scored.advantages.mean_advantage());
    if (step + 1).is_multiple_of(cfg.schedule.tf_every) {
        rec.tf_loss = Some(teacher_forcing_step(&mut models.gen, &mut opts.gen, &queries, &responses)?.loss);
    }
    Ok(rec)
}

#[allow(clippy::too_many_arguments)]
fn discriminator_step<F: Real, R: Rng + ?Sized>(
    models: &mut Models<F>,
    opts: &mut Optimizers,
    data: &[EncodedTriple],
    cfg: &AdversarialConfig,
    which: Disc,
    step: usize,
    threshold: usize,
    rng: &mut R,
) -> Result<LogRecord> {
    let batch = sample_batch(data, cfg.batch_size, rng);
    let queries: Vec<Vec<usize>> = batch.iter().map(|t| t.query.clone()).collect();
    let rollouts = sample_rollouts(&models.gen, &queries, cfg.max_decode_len, rng)?;
    let db = DiscBatch {
        true_responses: batch.iter().map(|t| t.response.clone()).collect(),
        generated: rollouts.iter().map(|r| r.tokens().to_vec()).collect(),
        futures: batch.iter().map(|t| t.future.clone()).collect(),
    };
    let mut rec = LogRecord::new(Phase::D, step, threshold);
    rec.disc = Some(which);
    let (store, opt, loss, grads) = match which {
        Disc::D1 => {
            let d1 = models
                .d1
                .as_mut()
                .ok_or_else(|| Error::invalid("forward discriminator missing"))?;
            let (loss, grads) = {
                let mut g = Graph::new(d1.model().params());
                let (l, t, f) = d1.loss(&mut g, &db)?;
                rec.mean_r1_true = Some(t);
                rec.mean_r1_gen = Some(f);
                (g.value(l).item().as_f64(), finite_backward(&g, l)?)
            };
            (d1.model_mut().params_mut(), &mut opts.d1, loss, grads)
        }
        Disc::D2 => {
            let d2 = models
                .d2
                .as_mut()
                .ok_or_else(|| Error::invalid("backward discriminator missing"))?;
            let (loss, grads) = {
                let mut g = Graph::new(d2.model().params());
                let (l, t, f) = d2.loss(&mut g, &db)?;
                rec.mean_r2_true = Some(t);
                rec.mean_r2_gen = Some(f);
                (g.value(l).item().as_f64(), finite_backward(&g, l)?)
            };
            (d2.model_mut().params_mut(), &mut opts.d2, loss, grads)
        }
    };
    let (pre, post) = apply_update(store, grads, opt)?;
    rec.loss = loss;
    rec.grad_norm_preclip = pre;
    rec.grad_norm_postclip = post;
    Ok(rec)
}

fn finite_backward<F: Real>(g: &Graph<'_, F>, root: crate::numerics::Var) -> Result<crate::numerics::Gradients<F>> {
    let v = g.value(root).item().as_f64();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("discriminator loss {v}")));
    }
    g.backward(root)
}

fn d_block_order(mode: Mode, i: usize) -> Disc {
    match mode {
        Mode::F => Disc::D1,
        Mode::B => Disc::D2,
        Mode::A if i.is_multiple_of(2) => Disc::D1,
        Mode::A => Disc::D2,
    }
}

/// Alternate generator blocks and discriminator blocks for the configured number
/// of cycles. On error the models keep their last successful update.
pub fn adversarial_train<F: Real, R: Rng + ?Sized>(
    models: &mut Models<F>,
    opts: &mut Optimizers,
    data: &[EncodedTriple],
    cfg: &AdversarialConfig,
    progress: &mut Progress,
    rng: &mut R,
    observer: &mut dyn TrainObserver<F>,
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus("no training triples".into()));
    }
    if cfg.mode.uses_forward() {
        require(&models.d1, "forward", cfg.mode)?;
    }
    if cfg.mode.uses_backward() {
        require(&models.d2, "backward", cfg.mode)?;
    }
    for cycle in 0..cfg.schedule.cycles {
        for _ in 0..cfg.schedule.g_steps {
            let rec = generator_step(models, opts, data, cfg, progress.g_step, rng)?;
            progress.g_step += 1;
            observer.record(&rec)?;
        }
        let threshold = cfg.curriculum.threshold(progress.g_step);
        for i in 0..cfg.schedule.d_steps {
            let which = d_block_order(cfg.mode, i);
            let rec = discriminator_step(models, opts, data, cfg, which, progress.d_step, threshold, rng)?;
            progress.d_step += 1;
            observer.record(&rec)?;
        }
        observer.end_cycle(cycle, models, opts)?;
    }
    Ok(())
}
