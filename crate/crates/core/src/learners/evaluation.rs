use rand::Rng;

use super::model::InitSpec;
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::measures::ParticleSet;
use crate::wgf::{proximal_flow, BellmanTarget, ProximalConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLearningConfig {
    pub episodes: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub horizon: usize,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        Self {
            episodes: 10_000,
            epsilon: 0.1,
            gamma: 0.9,
            learning_rate: 0.5,
            horizon: 500,
        }
    }
}

/// Scalar action-value table.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Vec<f64>,
    num_actions: usize,
}

impl QTable {
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.num_actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.num_actions..(state + 1) * self.num_actions]
    }

    /// First-index argmax at `state`.
    pub fn greedy(&self, state: usize) -> usize {
        let row = self.row(state);
        let mut best = 0;
        for (a, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.values.len() / self.num_actions).map(|s| self.greedy(s)).collect()
    }
}

/// Tabular Q-learning with an epsilon-greedy behavior policy and an absorbing terminal.
pub fn q_learning<E: Environment, R: Rng + ?Sized>(
    env: &E,
    cfg: &QLearningConfig,
    rng: &mut R,
) -> Result<QTable> {
    if !(0.0..=1.0).contains(&cfg.epsilon) || !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(Error::Config("q-learning epsilon and gamma must lie in [0, 1]".into()));
    }
    let na = env.num_actions();
    let mut q = QTable {
        values: vec![0.0; env.num_states() * na],
        num_actions: na,
    };
    for _ in 0..cfg.episodes {
        let mut state = env.start();
        for _ in 0..cfg.horizon {
            let action = if rng.random::<f64>() < cfg.epsilon {
                rng.random_range(0..na)
            } else {
                q.greedy(state)
            };
            let t = env.step(state, action, rng);
            let bootstrap = if t.terminal {
                0.0
            } else {
                q.row(t.next_state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            let idx = state * na + action;
            q.values[idx] += cfg.learning_rate * (t.reward + cfg.gamma * bootstrap - q.values[idx]);
            if t.terminal {
                break;
            }
            state = t.next_state;
        }
    }
    Ok(q)
}

/// Discounted returns of `rollouts` episodes of at most `depth` steps that start at `state`,
/// take `first_action` (or the policy's action) and then follow `policy`.
pub fn monte_carlo_targets<E: Environment, R: Rng + ?Sized>(
    env: &E,
    policy: &[usize],
    state: usize,
    first_action: Option<usize>,
    rollouts: usize,
    depth: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<ParticleSet> {
    if rollouts == 0 {
        return Err(Error::Config("need at least one rollout".into()));
    }
    if policy.len() < env.num_states() {
        return Err(Error::SizeMismatch {
            left: policy.len(),
            right: env.num_states(),
        });
    }
    let samples = (0..rollouts)
        .map(|_| {
            let mut s = state;
            let mut total = 0.0;
            let mut discount = 1.0;
            for k in 0..depth {
                let a = match (k, first_action) {
                    (0, Some(a)) => a,
                    _ => policy[s],
                };
                let t = env.step(s, a, rng);
                total += discount * t.reward;
                discount *= gamma;
                if t.terminal {
                    break;
                }
                s = t.next_state;
            }
            total
        })
        .collect();
    ParticleSet::new(samples)
}

/// `n` order statistics picked rank-uniformly from `samples`; repeats ranks when `n` exceeds the sample count.
pub fn thin(samples: &ParticleSet, n: usize) -> Result<ParticleSet> {
    if n == 0 {
        return Err(Error::EmptyParticles);
    }
    let m = samples.len();
    let v = samples.values();
    ParticleSet::new(
        (0..n)
            .map(|i| v[(((2 * i + 1) * m) / (2 * n)).min(m - 1)])
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluationConfig {
    pub particles: usize,
    pub gradient_steps: usize,
    pub init: InitSpec,
    pub proximal: ProximalConfig,
}

impl Default for PolicyEvaluationConfig {
    fn default() -> Self {
        Self {
            particles: 200,
            gradient_steps: 100,
            init: InitSpec::default(),
            proximal: ProximalConfig::policy_evaluation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluationResult {
    pub particles: ParticleSet,
    /// Proximal loss before the first step and after each step.
    pub losses: Vec<f64>,
    /// `(mean(z) - mean(targets))^2` before the first step and after each step.
    pub value_errors: Vec<f64>,
    /// Particle mean before the first step and after each step.
    pub means: Vec<f64>,
    pub target_mean: f64,
}

/// Transports freshly drawn particles onto Monte Carlo return samples.
pub fn wgf_policy_evaluation<R: Rng + ?Sized>(
    targets: &ParticleSet,
    cfg: &PolicyEvaluationConfig,
    rng: &mut R,
) -> Result<PolicyEvaluationResult> {
    let init = cfg.init.draw(cfg.particles, rng)?;
    let fitted = thin(targets, cfg.particles)?;
    let target_mean = targets.mean();
    let trace = proximal_flow(&init, &BellmanTarget::from(&fitted), &cfg.proximal, cfg.gradient_steps)?;
    let value_errors = trace.means.iter().map(|m| (m - target_mean).powi(2)).collect();
    Ok(PolicyEvaluationResult {
        particles: trace.particles,
        losses: trace.losses,
        value_errors,
        means: trace.means,
        target_mean,
    })
}
