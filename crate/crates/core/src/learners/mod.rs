//! Training loops over tabular return models.

mod control;
mod evaluation;
mod model;

pub use control::{
    fitted_q_iteration, greedy_rollout, qr_fitted_q_iteration, qr_update, stream,
    wgf_fitted_q_iteration, EpisodeRecord, LearnerConfig, PathClassifier, UpdateRule,
    DEFAULT_QR_STEP_SIZE,
};
pub use evaluation::{
    monte_carlo_targets, q_learning, thin, wgf_policy_evaluation, PolicyEvaluationConfig,
    PolicyEvaluationResult, QLearningConfig, QTable,
};
pub use model::{InitSpec, TabularReturnModel};
