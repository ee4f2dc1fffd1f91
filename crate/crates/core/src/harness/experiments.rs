use rand::Rng;

use super::config::{with_final_temperature, ExperimentConfig, LearnerKind, MethodSpec};
use super::table::{Column, MetricSeries, Value};
use crate::envs::{sample_gmm, Environment, GmmSpec, GridWorld};
use crate::error::{Error, Result};
use crate::learners::{
    fitted_q_iteration, monte_carlo_targets, q_learning, qr_update, stream, wgf_policy_evaluation,
    InitSpec, LearnerConfig, PolicyEvaluationConfig, QLearningConfig, UpdateRule,
};
use crate::measures::ParticleSet;
use crate::wgf::{proximal_flow, BellmanTarget, ProximalConfig};

pub const CONTROL_COLUMNS: &[Column] = &[
    Column::key("episode"),
    Column::metric("return"),
    Column::metric("steps"),
    Column::metric("cliff_falls"),
    Column::metric("multi_solution_events"),
    Column::category("path_class", &["top", "bottom", "none"]),
    Column::metric("greedy_return"),
];

pub const REGRESS_COLUMNS: &[Column] = &[
    Column::key("samples"),
    Column::metric("first_moment_rmse"),
    Column::metric("second_moment_rmse"),
];

pub const ABLATE_COLUMNS: &[Column] = &[
    Column::key("temperature"),
    Column::key("h"),
    Column::metric("first_moment_rmse"),
    Column::metric("second_moment_rmse"),
];

pub const EVALUATE_COLUMNS: &[Column] = &[
    Column::key("step"),
    Column::metric("loss"),
    Column::metric("value_error"),
    Column::metric("fitted_mean"),
];

// Generator streams of one trial seed.
const STREAM_TRAIN: u64 = 10;
const STREAM_REFERENCE: u64 = 11;
const STREAM_PARTICLES: u64 = 12;

fn trial_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    cfg.seed.wrapping_add(trial as u64)
}

fn in_trial<T>(cfg: &ExperimentConfig, method: &str, trial: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Trial {
        method: method.to_string(),
        trial,
        seed: trial_seed(cfg, trial),
        source: Box::new(e),
    })
}

/// Learner settings of one control method.
pub fn learner_config(env: &GridWorld, cfg: &ExperimentConfig, method: &MethodSpec) -> LearnerConfig {
    let l = &cfg.learner;
    LearnerConfig {
        gamma: l.gamma.unwrap_or(env.gamma()),
        episodes: l.episodes,
        horizon: l.horizon.unwrap_or(env.horizon()),
        particles: l.particles,
        init: l.init,
        rule: match method.learner {
            LearnerKind::Wgf => UpdateRule::Wgf(cfg.proximal.clone()),
            LearnerKind::Qr => UpdateRule::Qr {
                step_size: l.qr_step_size,
            },
        },
        policy: method.policy,
        evaluate_greedy: l.evaluate_greedy,
    }
}

/// One control run: a row per episode.
pub fn control_trial(
    env: &GridWorld,
    cfg: &ExperimentConfig,
    method: &MethodSpec,
    trial: usize,
) -> Result<MetricSeries> {
    let learner = learner_config(env, cfg, method);
    let run = fitted_q_iteration(env, &learner, trial_seed(cfg, trial));
    let (_, records) = in_trial(cfg, &method.name, trial, run)?;
    let mut series = MetricSeries::new(CONTROL_COLUMNS);
    for r in records {
        series.push(vec![
            Value::Int(r.episode as i64),
            Value::Float(r.episode_return),
            Value::Int(r.steps as i64),
            Value::Int(r.cliff_falls as i64),
            Value::Int(r.multi_solution_events as i64),
            Value::Text(r.path_class.as_str()),
            Value::Float(r.greedy_return),
        ]);
    }
    Ok(series)
}

/// Empirical first and second moments.
fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    (
        values.iter().sum::<f64>() / n,
        values.iter().map(|v| v * v).sum::<f64>() / n,
    )
}

/// Transports `init` onto the samples with a chain of proximal steps.
pub fn fit_wgf(samples: &ParticleSet, init: &ParticleSet, cfg: &ProximalConfig, steps: usize) -> Result<ParticleSet> {
    Ok(proximal_flow(init, &BellmanTarget::from(samples), cfg, steps)?.particles)
}

/// Repeats the midpoint quantile-regression step against fixed samples.
pub fn fit_qr(samples: &ParticleSet, init: &ParticleSet, iterations: usize, step_size: f64) -> Result<ParticleSet> {
    let targets = BellmanTarget::from(samples);
    let mut z = init.clone();
    for _ in 0..iterations {
        z = qr_update(&z, &targets, step_size)?;
    }
    Ok(z)
}

/// Reference moments from a large draw of the mixture.
fn reference_moments<R: Rng + ?Sized>(gmm: &GmmSpec, n: usize, rng: &mut R) -> Result<(f64, f64)> {
    Ok(moments(&sample_gmm(gmm, n, rng)?))
}

/// One regression trial: `(wgf, qr)` rows, one per sample count. Both methods regress the
/// same draw from the same initial particles.
pub fn regress_trial(gmm: &GmmSpec, cfg: &ExperimentConfig, trial: usize) -> Result<(MetricSeries, MetricSeries)> {
    let seed = trial_seed(cfg, trial);
    let r = &cfg.regress;
    let run = || -> Result<(MetricSeries, MetricSeries)> {
        let (y1, y2) = reference_moments(gmm, r.reference_samples, &mut stream(seed, STREAM_REFERENCE))?;
        let mut train = stream(seed, STREAM_TRAIN);
        let mut init_rng = stream(seed, STREAM_PARTICLES);
        let mut wgf = MetricSeries::new(REGRESS_COLUMNS);
        let mut qr = MetricSeries::new(REGRESS_COLUMNS);
        for &n in &r.sample_counts {
            let samples = ParticleSet::new(sample_gmm(gmm, n, &mut train)?)?;
            let init = InitSpec::default().draw(n, &mut init_rng)?;
            let fits = [
                (&mut wgf, fit_wgf(&samples, &init, &cfg.proximal, r.gradient_steps)?),
                (&mut qr, fit_qr(&samples, &init, r.qr_iterations, r.qr_step_size)?),
            ];
            for (series, fit) in fits {
                let (m1, m2) = moments(fit.values());
                series.push(vec![
                    Value::Int(n as i64),
                    Value::Float((m1 - y1).abs()),
                    Value::Float((m2 - y2).abs()),
                ]);
            }
        }
        Ok((wgf, qr))
    };
    in_trial(cfg, "regress", trial, run())
}

/// Loss temperatures from 1 halving down to `min`, ending exactly on `min`.
pub fn annealing_down_to(min: f64) -> Vec<f64> {
    let mut temps = Vec::new();
    let mut t = 1.0;
    while t > min * (1.0 + 1e-12) {
        temps.push(t);
        t *= 0.5;
    }
    temps.push(min);
    temps
}

/// One ablation trial: a row per (temperature, h) cell, all cells fitting the same draw.
pub fn ablate_trial(gmm: &GmmSpec, cfg: &ExperimentConfig, trial: usize) -> Result<MetricSeries> {
    let seed = trial_seed(cfg, trial);
    let a = &cfg.ablate;
    let run = || -> Result<MetricSeries> {
        let (y1, y2) = reference_moments(gmm, a.reference_samples, &mut stream(seed, STREAM_REFERENCE))?;
        let samples = ParticleSet::new(sample_gmm(gmm, a.samples, &mut stream(seed, STREAM_TRAIN))?)?;
        let init = InitSpec::default().draw(a.samples, &mut stream(seed, STREAM_PARTICLES))?;
        let mut series = MetricSeries::new(ABLATE_COLUMNS);
        for &temperature in &a.temperatures {
            for &h in &a.step_sizes {
                let base = ProximalConfig {
                    h,
                    ..cfg.proximal.clone()
                };
                let prox = with_final_temperature(base, annealing_down_to(temperature))?;
                let (m1, m2) = moments(fit_wgf(&samples, &init, &prox, a.gradient_steps)?.values());
                series.push(vec![
                    Value::Float(temperature),
                    Value::Float(h),
                    Value::Float((m1 - y1).abs()),
                    Value::Float((m2 - y2).abs()),
                ]);
            }
        }
        Ok(series)
    };
    in_trial(cfg, "wgf", trial, run())
}

/// Monte Carlo targets and fitted particles of one evaluation trial.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSnapshot {
    pub targets: ParticleSet,
    pub particles: ParticleSet,
}

/// One policy-evaluation trial: Q-learning for the policy, Monte Carlo returns from the
/// evaluated state, then a proximal flow onto them. A row per gradient step.
pub fn evaluate_trial(
    env: &GridWorld,
    cfg: &ExperimentConfig,
    trial: usize,
) -> Result<(MetricSeries, EvaluationSnapshot)> {
    let seed = trial_seed(cfg, trial);
    let e = &cfg.evaluate;
    let run = || -> Result<(MetricSeries, EvaluationSnapshot)> {
        let q_cfg = QLearningConfig {
            episodes: e.q_episodes,
            epsilon: e.q_epsilon,
            gamma: e.q_gamma,
            learning_rate: e.q_learning_rate,
            horizon: env.horizon(),
        };
        let policy = q_learning(env, &q_cfg, &mut stream(seed, 0))?.greedy_policy();
        let state = match e.state {
            Some([r, c]) if r < env.spec().rows && c < env.spec().cols => env.state_of(r, c),
            Some([r, c]) => return Err(Error::Config(format!("state [{r}, {c}] is off the grid"))),
            None => env.start(),
        };
        let targets = monte_carlo_targets(
            env,
            &policy,
            state,
            None,
            e.rollouts,
            e.depth,
            env.gamma(),
            &mut stream(seed, 1),
        )?;
        let pe = PolicyEvaluationConfig {
            particles: e.particles,
            gradient_steps: e.gradient_steps,
            init: InitSpec::default(),
            proximal: cfg.proximal.clone(),
        };
        let out = wgf_policy_evaluation(&targets, &pe, &mut stream(seed, 2))?;
        let mut series = MetricSeries::new(EVALUATE_COLUMNS);
        for (k, ((loss, err), mean)) in out.losses.iter().zip(&out.value_errors).zip(&out.means).enumerate() {
            series.push(vec![
                Value::Int(k as i64),
                Value::Float(*loss),
                Value::Float(*err),
                Value::Float(*mean),
            ]);
        }
        Ok((
            series,
            EvaluationSnapshot {
                targets,
                particles: out.particles,
            },
        ))
    };
    in_trial(cfg, "wgf", trial, run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentKind;

    #[test]
    fn annealing_ladders() {
        assert_eq!(annealing_down_to(0.25), [1.0, 0.5, 0.25]);
        assert_eq!(annealing_down_to(0.9), [1.0, 0.9]);
        assert_eq!(annealing_down_to(0.5), [1.0, 0.5]);
        assert_eq!(annealing_down_to(2.0), [2.0]);
        assert_eq!(*annealing_down_to(0.01).last().unwrap(), 0.01);
    }

    #[test]
    fn point_mass_regression() {
        let samples = ParticleSet::constant(2.5, 10).unwrap();
        let init = InitSpec::default().draw(10, &mut stream(1, 0)).unwrap();
        let cfg = ProximalConfig::policy_evaluation();
        let w = fit_wgf(&samples, &init, &cfg, 100).unwrap();
        let q = fit_qr(&samples, &init, 5000, 0.05).unwrap();
        assert!((w.mean() - 2.5).abs() <= 0.05, "{}", w.mean());
        assert!((q.mean() - 2.5).abs() <= 0.05, "{}", q.mean());
    }

    #[test]
    fn control_rows_follow_episodes() {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::ComparePolicies).unwrap();
        cfg.learner.episodes = 2;
        cfg.learner.horizon = Some(30);
        let env = cfg.env.grid().unwrap();
        let s = control_trial(&env, &cfg, &cfg.methods[0], 0).unwrap();
        assert_eq!(s.rows.len(), 2);
        assert_eq!(s.rows[1][0], Value::Int(1));
        assert_eq!(s, control_trial(&env, &cfg, &cfg.methods[0], 0).unwrap());
    }
}
