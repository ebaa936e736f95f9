//! Counterfactual synthesis: reward-distribution matching, do-interventions on
//! environment branches, and replay augmentation.

mod estimator;
mod synthesis;
mod training;

pub use estimator::{kl_divergence, EstimatorConfig, RewardDistEstimator, Window};
pub use synthesis::{
    augment_step, counterfactual_sample, counterfactual_state, essential_preservation_score, intervened_reward,
    random_mask_augment, shaped_reward, shaped_reward_opt, synthesize_counterfactual, CfMode, CounterfactualPolicy,
    CounterfactualSample, MacsConfig, Thresholds,
};
pub use training::{
    average_return, train_cf_policy, train_macs_expert, Augmentation, CfTrainReport, EpisodeSummary, TrainingRun,
};
