use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::measures::ParticleSet;

/// How the particles of every table entry are first drawn.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Normal { mean: f64, std: f64 },
    Constant { value: f64 },
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Normal {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl InitSpec {
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<ParticleSet> {
        match *self {
            InitSpec::Normal { mean, std } => {
                let dist = Normal::new(mean, std).map_err(|e| {
                    Error::Config(format!("initial particles N({mean}, {std}): {e}"))
                })?;
                ParticleSet::new((0..n).map(|_| dist.sample(rng)).collect())
            }
            InitSpec::Constant { value } => ParticleSet::constant(value, n),
        }
    }
}

/// One particle set per `(state, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularReturnModel {
    table: Vec<ParticleSet>,
    num_states: usize,
    num_actions: usize,
    particles: usize,
}

impl TabularReturnModel {
    /// Draws every entry from `init`; entries of `absorbing` are fixed at zero.
    pub fn new<R: Rng + ?Sized>(
        num_states: usize,
        num_actions: usize,
        particles: usize,
        init: &InitSpec,
        absorbing: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        if particles == 0 {
            return Err(Error::Config("particle count must be >= 1".into()));
        }
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Config("model needs states and actions".into()));
        }
        let mut table = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            for _ in 0..num_actions {
                table.push(if Some(s) == absorbing {
                    ParticleSet::constant(0.0, particles)?
                } else {
                    init.draw(particles, rng)?
                });
            }
        }
        Ok(Self {
            table,
            num_states,
            num_actions,
            particles,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn particle_count(&self) -> usize {
        self.particles
    }

    pub fn get(&self, state: usize, action: usize) -> &ParticleSet {
        &self.table[state * self.num_actions + action]
    }

    /// The per-action distributions at `state`.
    pub fn row(&self, state: usize) -> &[ParticleSet] {
        &self.table[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn set(&mut self, state: usize, action: usize, particles: ParticleSet) -> Result<()> {
        if particles.len() != self.particles {
            return Err(Error::SizeMismatch {
                left: particles.len(),
                right: self.particles,
            });
        }
        self.table[state * self.num_actions + action] = particles;
        Ok(())
    }

    pub fn means(&self, state: usize) -> Vec<f64> {
        self.row(state).iter().map(ParticleSet::mean).collect()
    }
}
