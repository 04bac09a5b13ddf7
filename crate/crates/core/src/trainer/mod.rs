//! Generator and discriminator updates and the adversarial schedule.

mod adversarial;
mod policy;
mod pretrain;
mod rewards;

pub use adversarial::{
    adversarial_train, AdversarialConfig, Disc, LogRecord, Mode, Models, Optimizers, Phase, Progress, ScheduleConfig,
    TrainObserver,
};
pub use policy::{
    apply_update, pg_loss, pg_surrogate, policy_gradient_step, score_rollouts, teacher_forcing_loss,
    teacher_forcing_step, Rollout, StepStats,
};
pub use pretrain::{mle_epoch, perplexity, Pair};
pub use rewards::{
    batch_baseline, combined_reward, curriculum_threshold, reward_to_go, shift_by_min, AdvantageBatch, BaselineMode,
    CurriculumSchedule, DiscountIndexing, RewardConfig,
};
