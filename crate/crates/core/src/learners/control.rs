use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{InitSpec, TabularReturnModel};
use crate::envs::{Environment, PathClass};
use crate::error::{Error, Result};
use crate::measures::ParticleSet;
use crate::policies::{argmax_mean, greedy_set, PolicyConfig};
use crate::wgf::{bellman_targets, proximal_step, BellmanTarget, ProximalConfig};

pub const DEFAULT_QR_STEP_SIZE: f64 = 0.05;

/// How a table entry moves toward its Bellman targets.
#[derive(Debug, Clone, PartialEq)]
pub enum UpdateRule {
    /// One JKO proximal step.
    Wgf(ProximalConfig),
    /// One averaged quantile-regression step with midpoint levels.
    Qr { step_size: f64 },
}

impl UpdateRule {
    pub fn name(&self) -> &'static str {
        match self {
            UpdateRule::Wgf(_) => "wgf",
            UpdateRule::Qr { .. } => "qr",
        }
    }

    pub fn apply(&self, z: &ParticleSet, targets: &BellmanTarget) -> Result<ParticleSet> {
        match self {
            UpdateRule::Wgf(cfg) => Ok(proximal_step(z, targets, cfg)?.particles),
            UpdateRule::Qr { step_size } => qr_update(z, targets, *step_size),
        }
    }
}

/// `z[i] += eta * (1/N) * sum_k (tau_i - 1{t_k < z[i]})` with `tau_i = (2i - 1) / (2N)`.
pub fn qr_update(z: &ParticleSet, targets: &BellmanTarget, step_size: f64) -> Result<ParticleSet> {
    if z.len() != targets.len() {
        return Err(Error::SizeMismatch {
            left: z.len(),
            right: targets.len(),
        });
    }
    let n = z.len() as f64;
    let t = targets.values();
    let moved = z
        .values()
        .iter()
        .enumerate()
        .map(|(i, &zi)| {
            let tau = (2 * i + 1) as f64 / (2.0 * n);
            // targets are sorted, so the count below z[i] is a partition point
            let below = t.partition_point(|&tk| tk < zi) as f64;
            zi + step_size * (tau - below / n)
        })
        .collect();
    ParticleSet::new(moved)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub episodes: usize,
    pub horizon: usize,
    pub particles: usize,
    pub init: InitSpec,
    pub rule: UpdateRule,
    pub policy: PolicyConfig,
    /// Roll out the greedy target policy after each episode and record its return.
    pub evaluate_greedy: bool,
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} is outside [0, 1]", self.gamma)));
        }
        if self.episodes == 0 || self.horizon == 0 {
            return Err(Error::Config("episodes and horizon must be >= 1".into()));
        }
        if self.particles == 0 {
            return Err(Error::Config("particles must be >= 1".into()));
        }
        match &self.rule {
            UpdateRule::Wgf(p) => p.validate()?,
            UpdateRule::Qr { step_size } if !(*step_size > 0.0) => {
                return Err(Error::Config(format!("qr step size {step_size} must be > 0")));
            }
            UpdateRule::Qr { .. } => {}
        }
        self.policy.validate()
    }
}

/// Per-episode metrics of one control run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub episode_return: f64,
    pub steps: usize,
    pub cliff_falls: usize,
    /// Behavior decisions at which two or more actions were value-tied.
    pub multi_solution_events: usize,
    pub path_class: PathClass,
    /// Return of a greedy target-policy rollout after the episode; NaN when not evaluated.
    pub greedy_return: f64,
}

/// Environments that can say which route an episode took.
pub trait PathClassifier {
    fn classify(&self, visited: &[usize]) -> PathClass;
}

impl PathClassifier for crate::envs::GridWorld {
    fn classify(&self, visited: &[usize]) -> PathClass {
        self.classify_path(visited)
    }
}

const STREAM_INIT: u64 = 0;
const STREAM_BEHAVIOR: u64 = 1;
const STREAM_EVAL: u64 = 2;

/// Independent generator `stream` of the trial seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Online fitted Q-iteration: act with the behavior policy, bootstrap from the greedy
/// next action, update the visited entry with `cfg.rule`.
pub fn fitted_q_iteration<E: Environment + PathClassifier>(
    env: &E,
    cfg: &LearnerConfig,
    seed: u64,
) -> Result<(TabularReturnModel, Vec<EpisodeRecord>)> {
    cfg.validate()?;
    let mut init_rng = stream(seed, STREAM_INIT);
    let mut rng = stream(seed, STREAM_BEHAVIOR);
    let mut eval_rng = stream(seed, STREAM_EVAL);
    let mut model = TabularReturnModel::new(
        env.num_states(),
        env.num_actions(),
        cfg.particles,
        &cfg.init,
        Some(env.absorbing()),
        &mut init_rng,
    )?;
    let tol = cfg.policy.value_tie_tolerance;
    let mut records = Vec::with_capacity(cfg.episodes);
    let mut visited = Vec::new();

    for episode in 0..cfg.episodes {
        let mut state = env.start();
        let mut record = EpisodeRecord {
            episode,
            episode_return: 0.0,
            steps: 0,
            cliff_falls: 0,
            multi_solution_events: 0,
            path_class: PathClass::Undetermined,
            greedy_return: f64::NAN,
        };
        visited.clear();
        for step in 0..cfg.horizon {
            let wrap = |e: Error| Error::Learner {
                episode,
                step,
                source: Box::new(e),
            };
            let row = model.row(state);
            if greedy_set(row, tol).len() >= 2 {
                record.multi_solution_events += 1;
            }
            let action = cfg.policy.select(row, &mut rng).map_err(wrap)?;
            let t = env.step(state, action, &mut rng);
            record.episode_return += t.reward;
            record.steps += 1;
            if t.fell {
                record.cliff_falls += 1;
            }
            let targets = if t.terminal {
                bellman_targets(t.reward, 0.0, model.get(state, action))
            } else {
                visited.push(t.next_state);
                let next = argmax_mean(model.row(t.next_state));
                bellman_targets(t.reward, cfg.gamma, model.get(t.next_state, next))
            };
            let updated = cfg.rule.apply(model.get(state, action), &targets).map_err(wrap)?;
            model.set(state, action, updated).map_err(wrap)?;
            state = t.next_state;
            if t.terminal {
                break;
            }
        }
        record.path_class = env.classify(&visited);
        if cfg.evaluate_greedy {
            record.greedy_return = greedy_rollout(env, &model, cfg.horizon, &mut eval_rng);
        }
        records.push(record);
    }
    Ok((model, records))
}

pub fn wgf_fitted_q_iteration<E: Environment + PathClassifier>(
    env: &E,
    cfg: &LearnerConfig,
    seed: u64,
) -> Result<(TabularReturnModel, Vec<EpisodeRecord>)> {
    if !matches!(cfg.rule, UpdateRule::Wgf(_)) {
        return Err(Error::Config("expected a proximal update rule".into()));
    }
    fitted_q_iteration(env, cfg, seed)
}

pub fn qr_fitted_q_iteration<E: Environment + PathClassifier>(
    env: &E,
    cfg: &LearnerConfig,
    seed: u64,
) -> Result<(TabularReturnModel, Vec<EpisodeRecord>)> {
    if !matches!(cfg.rule, UpdateRule::Qr { .. }) {
        return Err(Error::Config("expected a quantile-regression update rule".into()));
    }
    fitted_q_iteration(env, cfg, seed)
}

/// Undiscounted return of the first-index greedy policy from the start state.
pub fn greedy_rollout<E: Environment, R: Rng + ?Sized>(
    env: &E,
    model: &TabularReturnModel,
    horizon: usize,
    rng: &mut R,
) -> f64 {
    let mut state = env.start();
    let mut total = 0.0;
    for _ in 0..horizon {
        let t = env.step(state, argmax_mean(model.row(state)), rng);
        total += t.reward;
        if t.terminal {
            break;
        }
        state = t.next_state;
    }
    total
}
