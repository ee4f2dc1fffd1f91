//! JKO proximal fitting of particle sets.
//!
//! One proximal step minimizes
//!
//! ```text
//! L(z) = S_eps(z, z_prev) + 2h * F(z),     F(z) = 1/(2N) * sum_i (T z[i] - z[i])^2
//! S_eps(z, y) = W_eps(z, y) - W_eps(z, z)/2 - W_eps(y, y)/2
//! ```
//!
//! by gradient descent on the particle locations. `W_eps` is the entropic
//! transport value; subtracting the self terms removes its entropic bias so that
//! `S_eps(z, z) = 0` and a set that already matches its targets is a stationary
//! point. The raw `W_eps` form is available through [`ProximalConfig::debias`].
//! Transport terms are differentiated with the optimal plan held fixed; the
//! potential pairs order statistics of `z` with those of the Bellman targets.
//!
//! Descent moves each particle along `-N * dL/dz_i`, the velocity of a unit-mass
//! particle, so that the step size does not depend on `N`. A trial step is
//! accepted only under an Armijo decrease condition and halved otherwise, which
//! keeps the recorded loss sequence non-increasing.

use crate::error::{Error, Result};
use crate::measures::ParticleSet;
use crate::transport::{sinkhorn_gradient_source, sinkhorn_log_warm, AnnealingSchedule};

const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ProximalConfig {
    /// JKO time step.
    pub h: f64,
    /// Sinkhorn schedule; its final temperature is the entropic weight of a single loss evaluation.
    pub epsilon_schedule: AnnealingSchedule,
    /// Loss temperatures walked across the gradient steps of one proximal step.
    /// Empty means the schedule's final temperature throughout.
    pub annealing: Vec<f64>,
    pub gradient_step_size: f64,
    pub max_gradient_steps: usize,
    pub loss_tolerance: f64,
    /// Step halvings tried before a gradient step is declared divergent.
    pub max_backtracks: usize,
    /// Replace `W_eps(z, z_prev)` by `W_eps(z, z_prev) - W_eps(z, z)/2 - W_eps(z_prev, z_prev)/2`,
    /// which vanishes at `z = z_prev`.
    pub debias: bool,
}

impl ProximalConfig {
    pub fn new(
        h: f64,
        epsilon_final: f64,
        gradient_step_size: f64,
        max_gradient_steps: usize,
        loss_tolerance: f64,
    ) -> Result<Self> {
        let cfg = Self {
            h,
            epsilon_schedule: AnnealingSchedule::to_epsilon(epsilon_final)?,
            annealing: Vec::new(),
            gradient_step_size,
            max_gradient_steps,
            loss_tolerance,
            max_backtracks: 5,
            debias: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// h = 1, step size 0.5, 100 steps, temperature walked 1.0 -> 0.5 -> 0.25.
    pub fn policy_evaluation() -> Self {
        Self::new(1.0, 0.25, 0.5, 100, 0.0)
            .expect("valid defaults")
            .with_annealing(vec![1.0, 0.5, 0.25])
    }

    /// Policy-evaluation loss settings capped at 50 gradient steps with a 1e-8 stopping tolerance.
    pub fn control() -> Self {
        let mut cfg = Self::policy_evaluation();
        cfg.max_gradient_steps = 50;
        cfg.loss_tolerance = 1e-8;
        cfg
    }

    pub fn with_annealing(mut self, temps: Vec<f64>) -> Self {
        self.annealing = temps;
        self
    }

    pub fn with_debias(mut self, on: bool) -> Self {
        self.debias = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(Error::domain("h", self.h, "h > 0"));
        }
        if !(self.gradient_step_size > 0.0) {
            return Err(Error::domain(
                "gradient_step_size",
                self.gradient_step_size,
                "step size > 0",
            ));
        }
        if self.max_gradient_steps == 0 {
            return Err(Error::Config("max_gradient_steps must be >= 1".into()));
        }
        if !(self.loss_tolerance >= 0.0) {
            return Err(Error::domain(
                "loss_tolerance",
                self.loss_tolerance,
                "tolerance >= 0",
            ));
        }
        if self.annealing.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("annealing temperatures must be positive".into()));
        }
        Ok(())
    }

    fn stages(&self) -> Vec<f64> {
        if self.annealing.is_empty() {
            vec![self.epsilon_schedule.final_epsilon()]
        } else {
            self.annealing.clone()
        }
    }
}

/// Realizations of the distributional Bellman target, sorted non-decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct BellmanTarget {
    values: Vec<f64>,
}

impl BellmanTarget {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Ok(Self {
            values: ParticleSet::new(values)?.into_values(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl From<&ParticleSet> for BellmanTarget {
    fn from(p: &ParticleSet) -> Self {
        Self {
            values: p.values().to_vec(),
        }
    }
}

/// `T z[i] = r + gamma * z[i](s', a*)`. Pass `gamma = 0` on terminal transitions.
pub fn bellman_targets(reward: f64, gamma: f64, next: &ParticleSet) -> BellmanTarget {
    let mut values: Vec<f64> = next.values().iter().map(|z| reward + gamma * z).collect();
    values.sort_by(f64::total_cmp);
    BellmanTarget { values }
}

/// `F_T(z) = 1/(2N) sum_i (T z[i] - z[i])^2` with rank pairing.
pub fn potential_energy(targets: &BellmanTarget, z: &ParticleSet) -> Result<f64> {
    check_len(z.len(), targets.len())?;
    let sum: f64 = targets
        .values()
        .iter()
        .zip(z.values())
        .map(|(t, v)| (t - v) * (t - v))
        .sum();
    Ok(sum / (2.0 * z.len() as f64))
}

pub fn proximal_loss(
    z: &ParticleSet,
    z_prev: &ParticleSet,
    targets: &BellmanTarget,
    cfg: &ProximalConfig,
) -> Result<f64> {
    check_len(z.len(), z_prev.len())?;
    check_len(z.len(), targets.len())?;
    let anchor = Anchor::new(z_prev, targets, cfg, cfg.epsilon_schedule.clone(), None)?;
    Ok(anchor.evaluate(z, None)?.loss)
}

/// Euclidean gradient of [`proximal_loss`] in the sorted particle coordinates.
pub fn proximal_loss_gradient(
    z: &ParticleSet,
    z_prev: &ParticleSet,
    targets: &BellmanTarget,
    cfg: &ProximalConfig,
) -> Result<Vec<f64>> {
    check_len(z.len(), z_prev.len())?;
    check_len(z.len(), targets.len())?;
    let anchor = Anchor::new(z_prev, targets, cfg, cfg.epsilon_schedule.clone(), None)?;
    Ok(anchor.evaluate(z, None)?.grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximalOutcome {
    pub particles: ParticleSet,
    /// Loss after each accepted step; a new entry opens every temperature stage.
    pub losses: Vec<f64>,
    /// Index into `losses` where each temperature stage begins. The objective changes
    /// between stages, so the sequence is non-increasing within each stage only.
    pub stage_starts: Vec<usize>,
    pub gradient_steps: usize,
    /// Sinkhorn sweeps spent across all loss evaluations.
    pub transport_sweeps: usize,
}

/// Everything about one loss that stays fixed while `z` moves.
struct Anchor<'a> {
    z_prev: &'a ParticleSet,
    targets: &'a BellmanTarget,
    h: f64,
    schedule: AnnealingSchedule,
    /// `W_eps(z_prev, z_prev)` and its potential when the transport term is debiased.
    self_prev: Option<(f64, Vec<f64>)>,
    sweeps: usize,
}

struct Evaluation {
    loss: f64,
    grad: Vec<f64>,
    g_cross: Vec<f64>,
    g_self: Option<Vec<f64>>,
    sweeps: usize,
}

impl<'a> Anchor<'a> {
    fn new(
        z_prev: &'a ParticleSet,
        targets: &'a BellmanTarget,
        cfg: &ProximalConfig,
        schedule: AnnealingSchedule,
        self_warm: Option<&[f64]>,
    ) -> Result<Self> {
        let mut sweeps = 0;
        let self_prev = if cfg.debias {
            let t = sinkhorn_log_warm(z_prev, z_prev, &schedule, self_warm)?;
            sweeps += t.sweeps;
            Some((t.distance, t.g))
        } else {
            None
        };
        Ok(Self {
            z_prev,
            targets,
            h: cfg.h,
            schedule,
            self_prev,
            sweeps,
        })
    }

    fn evaluate(&self, z: &ParticleSet, warm: Option<&Evaluation>) -> Result<Evaluation> {
        let n = z.len() as f64;
        let cross = sinkhorn_log_warm(z, self.z_prev, &self.schedule, warm.map(|w| &w.g_cross[..]))?;
        let mut grad = sinkhorn_gradient_source(&cross, z, self.z_prev);
        let mut transport = cross.distance;
        let mut sweeps = cross.sweeps;
        let mut g_self = None;
        if let Some((self_prev, _)) = &self.self_prev {
            // S(z, y) = W(z, y) - W(z, z)/2 - W(y, y)/2. By symmetry the gradient of
            // W(z, z) is twice its source gradient.
            let own = sinkhorn_log_warm(
                z,
                z,
                &self.schedule,
                warm.and_then(|w| w.g_self.as_deref()),
            )?;
            for (gi, si) in grad.iter_mut().zip(sinkhorn_gradient_source(&own, z, z)) {
                *gi -= si;
            }
            transport -= 0.5 * (own.distance + *self_prev);
            sweeps += own.sweeps;
            g_self = Some(own.g);
        }
        for ((gi, zi), ti) in grad.iter_mut().zip(z.values()).zip(self.targets.values()) {
            *gi += 2.0 * self.h * (zi - ti) / n;
        }
        Ok(Evaluation {
            loss: transport + 2.0 * self.h * potential_energy(self.targets, z)?,
            grad,
            g_cross: cross.g,
            g_self,
            sweeps,
        })
    }
}

/// Approximate `argmin_z L(z)` by gradient descent starting from `z = z_prev`.
pub fn proximal_step(
    z_prev: &ParticleSet,
    targets: &BellmanTarget,
    cfg: &ProximalConfig,
) -> Result<ProximalOutcome> {
    check_len(z_prev.len(), targets.len())?;
    cfg.validate()?;
    let stages = cfg.stages();
    let per_stage = cfg.max_gradient_steps.div_ceil(stages.len());
    let n = z_prev.len() as f64;

    let mut z = z_prev.clone();
    let mut losses = Vec::new();
    let mut stage_starts = Vec::new();
    let mut warm: Option<Evaluation> = None;
    let mut self_warm: Option<Vec<f64>> = None;
    let mut step = 0usize;
    let mut sweeps = 0usize;

    for (k, &eps) in stages.iter().enumerate() {
        if step >= cfg.max_gradient_steps {
            break;
        }
        let budget = if k + 1 == stages.len() {
            cfg.max_gradient_steps - step
        } else {
            per_stage.min(cfg.max_gradient_steps - step)
        };
        let anchor = Anchor::new(
            z_prev,
            targets,
            cfg,
            cfg.epsilon_schedule.ending_at(eps)?,
            self_warm.as_deref(),
        )?;
        self_warm = anchor.self_prev.as_ref().map(|(_, g)| g.clone());
        sweeps += anchor.sweeps;
        let mut current = anchor.evaluate(&z, warm.as_ref())?;
        sweeps += current.sweeps;
        stage_starts.push(losses.len());
        losses.push(current.loss);
        // Each step first tries the last accepted step size of this stage.
        let mut eta_start = cfg.gradient_step_size;

        for _ in 0..budget {
            let grad_sq: f64 = current.grad.iter().map(|g| g * g).sum();
            if grad_sq == 0.0 {
                break;
            }
            step += 1;
            let mut eta = eta_start;
            let mut accepted = None;
            let mut least_increase = f64::INFINITY;
            for _ in 0..=cfg.max_backtracks {
                let moved: Vec<f64> = z
                    .values()
                    .iter()
                    .zip(&current.grad)
                    .map(|(zi, gi)| zi - eta * n * gi)
                    .collect();
                let candidate = ParticleSet::new(moved)?;
                let trial = anchor.evaluate(&candidate, Some(&current))?;
                sweeps += trial.sweeps;
                if trial.loss <= current.loss - ARMIJO * eta * n * grad_sq {
                    accepted = Some((candidate, trial));
                    break;
                }
                least_increase = least_increase.min(trial.loss - current.loss);
                eta *= 0.5;
            }
            let Some((candidate, trial)) = accepted else {
                // No trial decreased the loss. Within round-off this is a stationary point.
                if least_increase > 1e-9 * current.loss.abs().max(1.0) {
                    return Err(Error::Divergence { step });
                }
                break;
            };
            eta_start = eta;
            let change = current.loss - trial.loss;
            z = candidate;
            current = trial;
            losses.push(current.loss);
            if change.abs() < cfg.loss_tolerance {
                break;
            }
        }
        warm = Some(current);
    }

    Ok(ProximalOutcome {
        particles: z,
        losses,
        stage_starts,
        gradient_steps: step,
        transport_sweeps: sweeps,
    })
}

/// Per-iteration record of a [`proximal_flow`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub particles: ParticleSet,
    /// Entry 0 is the loss at the initial particles; entry `k` the loss after step `k`.
    pub losses: Vec<f64>,
    /// Particle mean before the first step and after each step.
    pub means: Vec<f64>,
}

/// Chains `iterations` JKO steps of one gradient step each, every step anchored at the
/// previous iterate. Temperatures from `cfg.annealing` are split evenly over the iterations.
pub fn proximal_flow(
    init: &ParticleSet,
    targets: &BellmanTarget,
    cfg: &ProximalConfig,
    iterations: usize,
) -> Result<FlowTrace> {
    check_len(init.len(), targets.len())?;
    cfg.validate()?;
    let stages = cfg.stages();
    let mut z = init.clone();
    let start = Anchor::new(init, targets, cfg, cfg.epsilon_schedule.ending_at(stages[0])?, None)?;
    let mut losses = vec![start.evaluate(init, None)?.loss];
    let mut means = vec![z.mean()];

    for it in 0..iterations {
        let eps = stages[(it * stages.len() / iterations.max(1)).min(stages.len() - 1)];
        let step_cfg = ProximalConfig {
            annealing: vec![eps],
            max_gradient_steps: 1,
            loss_tolerance: 0.0,
            ..cfg.clone()
        };
        let out = proximal_step(&z, targets, &step_cfg).map_err(|e| match e {
            Error::Divergence { .. } => Error::Divergence { step: it + 1 },
            other => other,
        })?;
        losses.push(*out.losses.last().expect("at least one loss per step"));
        z = out.particles;
        means.push(z.mean());
    }
    Ok(FlowTrace {
        particles: z,
        losses,
        means,
    })
}

fn check_len(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::SizeMismatch { left, right });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(v: &[f64]) -> ParticleSet {
        ParticleSet::new(v.to_vec()).unwrap()
    }

    fn cfg(h: f64, eps: f64) -> ProximalConfig {
        ProximalConfig::new(h, eps, 0.5, 200, 0.0).unwrap()
    }

    #[test]
    fn targets() {
        let next = ps(&[0.0, 2.0]);
        let t = bellman_targets(1.0, 0.9, &next);
        assert!((t.values()[0] - 1.0).abs() < 1e-15);
        assert!((t.values()[1] - 2.8).abs() < 1e-15);
        assert_eq!(bellman_targets(-100.0, 0.0, &next).values(), &[-100.0, -100.0]);
        let p = ps(&[-1.0, 0.5, 3.0]);
        assert_eq!(bellman_targets(0.0, 1.0, &p).values(), p.values());
    }

    #[test]
    fn potential() {
        let t = BellmanTarget::new(vec![1.0, 3.0]).unwrap();
        assert_eq!(potential_energy(&t, &ps(&[0.0, 2.0])).unwrap(), 0.5);
        let z = ps(&[0.1, 0.4]);
        assert_eq!(potential_energy(&BellmanTarget::from(&z), &z).unwrap(), 0.0);
        let t = BellmanTarget::new(vec![5.0]).unwrap();
        assert_eq!(potential_energy(&t, &ps(&[3.0])).unwrap(), 2.0);
        assert!(matches!(
            potential_energy(&t, &ps(&[3.0, 4.0])),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn loss_closed_forms() {
        let c = cfg(1.0, 0.01);
        let zero = ps(&[0.0]);
        let loss = proximal_loss(&zero, &zero, &BellmanTarget::new(vec![2.0]).unwrap(), &c).unwrap();
        assert!((loss - 4.0).abs() < 1e-6);
        let loss = proximal_loss(&ps(&[1.0]), &zero, &BellmanTarget::new(vec![1.0]).unwrap(), &c)
            .unwrap();
        assert!((loss - 1.0).abs() < 1e-6);
        let z = ps(&[0.0, 1.0, 2.5]);
        let loss = proximal_loss(&z, &z, &BellmanTarget::from(&z), &c).unwrap();
        assert!(loss <= 0.05, "{loss}");
    }

    #[test]
    fn gradient_closed_forms() {
        let c = cfg(1.0, 0.01);
        let zero = ps(&[0.0]);
        let g = proximal_loss_gradient(&zero, &zero, &BellmanTarget::new(vec![2.0]).unwrap(), &c)
            .unwrap();
        assert!((g[0] + 4.0).abs() < 1e-3);
        let z = ps(&[-1.0, 0.5, 2.0]);
        let g = proximal_loss_gradient(&z, &z, &BellmanTarget::from(&z), &c).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-2), "{g:?}");
    }

    #[test]
    fn single_particle_step_lands_on_minimizer() {
        // (x - 0)^2 + 2h * (1/2)(x - 2)^2 is minimized at x = 2h/(1+h).
        for h in [0.5, 1.0, 3.0] {
            let out = proximal_step(&ps(&[0.0]), &BellmanTarget::new(vec![2.0]).unwrap(), &cfg(h, 0.01))
                .unwrap();
            let x = out.particles.values()[0];
            assert!((x - 2.0 * h / (1.0 + h)).abs() < 1e-6, "h={h} x={x}");
        }
    }

    #[test]
    fn losses_never_increase() {
        let z_prev = ps(&[-2.0, -0.5, 0.3, 1.7]);
        let t = BellmanTarget::new(vec![-1.0, 0.0, 2.0, 4.0]).unwrap();
        let c = ProximalConfig::policy_evaluation();
        let out = proximal_step(&z_prev, &t, &c).unwrap();
        assert_eq!(out.stage_starts.len(), 3);
        let mut bounds = out.stage_starts.clone();
        bounds.push(out.losses.len());
        for b in bounds.windows(2) {
            let stage = &out.losses[b[0]..b[1]];
            assert!(stage.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{stage:?}");
        }
        assert!(
            potential_energy(&t, &out.particles).unwrap() <= potential_energy(&t, &z_prev).unwrap()
        );
    }

    #[test]
    fn rejects_bad_config() {
        assert!(ProximalConfig::new(0.0, 0.1, 0.5, 10, 0.0).is_err());
        assert!(ProximalConfig::new(1.0, 0.1, 0.0, 10, 0.0).is_err());
        assert!(ProximalConfig::new(1.0, 0.1, 0.5, 0, 0.0).is_err());
        assert!(ProximalConfig::new(1.0, 0.1, 0.5, 1, -1.0).is_err());
    }

    #[test]
    fn flow_tracks_target_mean() {
        let init = ps(&[-0.5, 0.0, 0.4, 1.1]);
        let t = BellmanTarget::new(vec![-9.0, -8.0, -7.5, -3.0]).unwrap();
        let trace = proximal_flow(&init, &t, &ProximalConfig::policy_evaluation(), 60).unwrap();
        let target_mean = t.values().iter().sum::<f64>() / 4.0;
        assert!((trace.particles.mean() - target_mean).abs() < 1e-6);
        assert_eq!(trace.losses.len(), 61);
        assert_eq!(trace.means.len(), 61);
    }

    #[test]
    fn matched_targets_are_a_fixed_point() {
        let z = ps(&[-1.3, -1.25, 0.0, 0.08, 2.0]);
        let c = cfg(1.0, 0.01);
        let out = proximal_step(&z, &BellmanTarget::from(&z), &c).unwrap();
        for (a, b) in out.particles.values().iter().zip(z.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        // The raw entropic form drags close neighbours together.
        let raw = c.with_debias(false);
        let g = proximal_loss_gradient(&z, &z, &BellmanTarget::from(&z), &raw).unwrap();
        assert!(g.iter().any(|v| v.abs() > 1e-3), "{g:?}");
    }
}

