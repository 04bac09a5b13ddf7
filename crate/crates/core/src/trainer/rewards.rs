use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the discount exponent counts from: the start of the response, or the
/// word whose reward-to-go is being computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscountIndexing {
    #[default]
    Absolute,
    Relative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub discount: f64,
    pub rollouts: usize,
    pub discount_indexing: DiscountIndexing,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            discount: 0.95,
            rollouts: 1,
            discount_indexing: DiscountIndexing::Absolute,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::invalid(format!(
                "discount must lie in (0, 1], got {}",
                self.discount
            )));
        }
        if self.rollouts == 0 {
            return Err(Error::invalid("rollouts must be >= 1"));
        }
        Ok(())
    }
}

/// Discounted reward-to-go of per-word rewards. Word positions count from 1.
pub fn reward_to_go(word_rewards: &[f64], discount: f64, indexing: DiscountIndexing) -> Vec<f64> {
    let mut out = vec![0.0; word_rewards.len()];
    let mut acc = 0.0;
    for (j, &r) in word_rewards.iter().enumerate().rev() {
        acc = match indexing {
            DiscountIndexing::Absolute => acc + discount.powi(j as i32 + 1) * r,
            DiscountIndexing::Relative => r + discount * acc,
        };
        out[j] = acc;
    }
    out
}

/// Reward-to-go of the backward word rewards scaled by the shifted forward reward.
pub fn combined_reward(
    r1: f64,
    min_r1: f64,
    r2: &[f64],
    discount: f64,
    indexing: DiscountIndexing,
) -> Result<Vec<f64>> {
    let shift = r1 - min_r1;
    if shift.is_nan() || shift < 0.0 {
        return Err(Error::invalid(format!(
            "forward reward {r1} is below the batch minimum {min_r1}"
        )));
    }
    let scaled: Vec<f64> = r2.iter().map(|&x| shift * x).collect();
    Ok(reward_to_go(&scaled, discount, indexing))
}

/// Forward rewards minus their batch minimum.
pub fn shift_by_min(r1: &[f64]) -> Result<(f64, Vec<f64>)> {
    let min = r1.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::invalid("cannot shift an empty or non-finite reward batch"));
    }
    Ok((min, r1.iter().map(|&r| r - min).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    /// Mean over every word in the batch.
    Word,
    /// Mean over responses of each response's mean word reward.
    Response,
}

pub fn batch_baseline(word_rewards: &[Vec<f64>], mode: BaselineMode) -> Result<f64> {
    let nonempty = word_rewards.iter().filter(|r| !r.is_empty());
    let (sum, n) = match mode {
        BaselineMode::Word => nonempty.flatten().fold((0.0, 0usize), |(s, n), &x| (s + x, n + 1)),
        BaselineMode::Response => nonempty.fold((0.0, 0usize), |(s, n), r| {
            (s + r.iter().sum::<f64>() / r.len() as f64, n + 1)
        }),
    };
    if n == 0 {
        return Err(Error::invalid("baseline of an empty batch"));
    }
    Ok(sum / n as f64)
}

/// Per-word rewards of a rollout batch with the baseline subtracted.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageBatch {
    pub rewards: Vec<Vec<f64>>,
    /// Batch minimum of the forward reward, when it took part.
    pub min_r1: Option<f64>,
    pub baseline: f64,
    pub advantages: Vec<Vec<f64>>,
}

impl AdvantageBatch {
    pub fn new(rewards: Vec<Vec<f64>>, min_r1: Option<f64>, mode: BaselineMode) -> Result<Self> {
        let b = batch_baseline(&rewards, mode)?;
        Self::with_baseline(rewards, min_r1, b)
    }

    pub fn with_baseline(rewards: Vec<Vec<f64>>, min_r1: Option<f64>, b: f64) -> Result<Self> {
        if let Some(x) = rewards.iter().flatten().chain([&b]).find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("word reward or baseline {x}")));
        }
        let advantages = rewards.iter().map(|r| r.iter().map(|&x| x - b).collect()).collect();
        Ok(AdvantageBatch {
            rewards,
            min_r1,
            baseline: b,
            advantages,
        })
    }

    /// Every rollout weighted by `reward` with no baseline.
    pub fn constant(lengths: &[usize], reward: f64) -> Self {
        let rewards: Vec<Vec<f64>> = lengths.iter().map(|&l| vec![reward; l]).collect();
        AdvantageBatch {
            advantages: rewards.clone(),
            rewards,
            min_r1: None,
            baseline: 0.0,
        }
    }

    /// Mean advantage over every word in the batch.
    pub fn mean_advantage(&self) -> f64 {
        let (s, n) = self
            .advantages
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), &x| (s + x, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

/// Number of leading response words trained by MLE; shrinks by one every `interval` generator steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub initial: usize,
    pub interval: usize,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule {
            initial: 40,
            interval: 500,
        }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 {
            return Err(Error::invalid("curriculum interval must be >= 1"));
        }
        Ok(())
    }

    pub fn threshold(&self, step: usize) -> usize {
        curriculum_threshold(step, self)
    }
}

pub fn curriculum_threshold(step: usize, schedule: &CurriculumSchedule) -> usize {
    schedule.initial.saturating_sub(step / schedule.interval)
}
