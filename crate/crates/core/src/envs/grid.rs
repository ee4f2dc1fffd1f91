use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use super::{Environment, TransitionSample};
use crate::error::{Error, Result};

/// Reward emitted on entering a cell.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardSpec {
    Deterministic {
        value: f64,
    },
    /// Gaussian with standard deviation `std`, clipped to `[clip_low, clip_high]`.
    Gaussian {
        mean: f64,
        std: f64,
        clip_low: f64,
        clip_high: f64,
    },
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RewardSpec::Deterministic { value } if !value.is_finite() => {
                Err(Error::Config(format!("reward value {value} is not finite")))
            }
            RewardSpec::Gaussian {
                mean,
                std,
                clip_low,
                clip_high,
            } => {
                if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() {
                    return Err(Error::Config(format!(
                        "gaussian reward needs finite mean and std >= 0, got N({mean}, {std})"
                    )));
                }
                if !(clip_low <= clip_high) {
                    return Err(Error::Config(format!(
                        "clip_low {clip_low} exceeds clip_high {clip_high}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            RewardSpec::Deterministic { value } => value,
            RewardSpec::Gaussian { mean, .. } => mean,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RewardSpec::Deterministic { value } => value,
            RewardSpec::Gaussian {
                mean,
                std,
                clip_low,
                clip_high,
            } => {
                let draw = if std == 0.0 {
                    mean
                } else {
                    Normal::new(mean, std).expect("validated std").sample(rng)
                };
                draw.clamp(clip_low, clip_high)
            }
        }
    }
}

/// Inclusive rectangle of cells, `rows = [r0, r1]`, `cols = [c0, c1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub rows: [usize; 2],
    pub cols: [usize; 2],
}

impl Region {
    pub fn contains(&self, (r, c): (usize, usize)) -> bool {
        (self.rows[0]..=self.rows[1]).contains(&r) && (self.cols[0]..=self.cols[1]).contains(&c)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardRegion {
    pub rows: [usize; 2],
    pub cols: [usize; 2],
    pub reward: RewardSpec,
}

impl RewardRegion {
    pub fn region(&self) -> Region {
        Region {
            rows: self.rows,
            cols: self.cols,
        }
    }
}

/// Grid world description as written in config files.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub start: [usize; 2],
    pub goal: [usize; 2],
    #[serde(default)]
    pub cliff: Vec<Region>,
    /// Chance of falling into the cliff when acting from a cliff-adjacent cell.
    #[serde(default)]
    pub slip_probability: f64,
    pub cliff_penalty: f64,
    /// Reward for entering any cell not covered by `rewards`.
    pub step_reward: RewardSpec,
    /// Per-region overrides; later entries win.
    #[serde(default)]
    pub rewards: Vec<RewardRegion>,
    pub gamma: f64,
    pub horizon: usize,
}

/// Which half of the grid an episode mostly travelled through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathClass {
    Top,
    Bottom,
    /// No non-start cell visited, or an even split.
    Undetermined,
}

impl PathClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            PathClass::Top => "top",
            PathClass::Bottom => "bottom",
            PathClass::Undetermined => "none",
        }
    }
}

pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

/// Cliff-walk style grid. States are `row * cols + col`; state `rows * cols` is absorbing.
#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: GridSpec,
    cliff: Vec<bool>,
    slippery: Vec<bool>,
    rewards: Vec<RewardSpec>,
}

impl GridWorld {
    pub fn new(spec: GridSpec) -> Result<Self> {
        if spec.rows == 0 || spec.cols == 0 {
            return Err(Error::Config("grid needs at least one row and column".into()));
        }
        let inside = |[r, c]: [usize; 2]| r < spec.rows && c < spec.cols;
        if !inside(spec.start) || !inside(spec.goal) {
            return Err(Error::Config("start and goal must lie inside the grid".into()));
        }
        if spec.start == spec.goal {
            return Err(Error::Config("start and goal coincide".into()));
        }
        if !(0.0..=1.0).contains(&spec.slip_probability) {
            return Err(Error::Config(format!(
                "slip_probability {} is outside [0, 1]",
                spec.slip_probability
            )));
        }
        if !(0.0..=1.0).contains(&spec.gamma) {
            return Err(Error::Config(format!("gamma {} is outside [0, 1]", spec.gamma)));
        }
        if spec.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if !spec.cliff_penalty.is_finite() {
            return Err(Error::Config("cliff_penalty must be finite".into()));
        }
        spec.step_reward.validate()?;
        for r in &spec.rewards {
            r.reward.validate()?;
        }

        let n = spec.rows * spec.cols;
        let cell = |s: usize| (s / spec.cols, s % spec.cols);
        let cliff: Vec<bool> = (0..n)
            .map(|s| spec.cliff.iter().any(|reg| reg.contains(cell(s))))
            .collect();
        let at = |[r, c]: [usize; 2]| r * spec.cols + c;
        if cliff[at(spec.start)] || cliff[at(spec.goal)] {
            return Err(Error::Config("start and goal must not be cliff cells".into()));
        }
        let rewards = (0..n)
            .map(|s| {
                spec.rewards
                    .iter()
                    .rev()
                    .find(|reg| reg.region().contains(cell(s)))
                    .map_or(spec.step_reward, |reg| reg.reward)
            })
            .collect();
        let mut world = Self {
            slippery: vec![false; n],
            cliff,
            rewards,
            spec,
        };
        world.slippery = (0..n)
            .map(|s| !world.cliff[s] && (0..4).any(|a| world.cliff[world.neighbour(s, a)]))
            .collect();
        Ok(world)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn cell(&self, state: usize) -> (usize, usize) {
        (state / self.spec.cols, state % self.spec.cols)
    }

    pub fn state_of(&self, row: usize, col: usize) -> usize {
        row * self.spec.cols + col
    }

    pub fn goal(&self) -> usize {
        self.state_of(self.spec.goal[0], self.spec.goal[1])
    }

    pub fn is_cliff(&self, state: usize) -> bool {
        self.cliff.get(state).copied().unwrap_or(false)
    }

    pub fn is_cliff_adjacent(&self, state: usize) -> bool {
        self.slippery.get(state).copied().unwrap_or(false)
    }

    pub fn reward_spec(&self, state: usize) -> &RewardSpec {
        &self.rewards[state]
    }

    /// Cell reached by moving `action` from `state`, clamped at the border.
    pub fn neighbour(&self, state: usize, action: usize) -> usize {
        let (r, c) = self.cell(state);
        let (r, c) = match action {
            UP => (r.saturating_sub(1), c),
            RIGHT => (r, (c + 1).min(self.spec.cols - 1)),
            DOWN => ((r + 1).min(self.spec.rows - 1), c),
            LEFT => (r, c.saturating_sub(1)),
            _ => (r, c),
        };
        self.state_of(r, c)
    }

    /// Majority vote over the visited non-start cells: top half versus bottom half.
    pub fn classify_path(&self, visited: &[usize]) -> PathClass {
        let start = self.start();
        let half = self.spec.rows / 2;
        let (mut top, mut bottom) = (0usize, 0usize);
        for &s in visited {
            if s == start || s >= self.spec.rows * self.spec.cols {
                continue;
            }
            if self.cell(s).0 < half {
                top += 1;
            } else {
                bottom += 1;
            }
        }
        match top.cmp(&bottom) {
            std::cmp::Ordering::Greater => PathClass::Top,
            std::cmp::Ordering::Less => PathClass::Bottom,
            std::cmp::Ordering::Equal => PathClass::Undetermined,
        }
    }

    fn fall(&self, state: usize, action: usize) -> TransitionSample {
        TransitionSample {
            state,
            action,
            reward: self.spec.cliff_penalty,
            next_state: self.start(),
            terminal: false,
            fell: true,
        }
    }
}

impl Environment for GridWorld {
    fn num_states(&self) -> usize {
        self.spec.rows * self.spec.cols + 1
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn start(&self) -> usize {
        self.state_of(self.spec.start[0], self.spec.start[1])
    }

    fn absorbing(&self) -> usize {
        self.spec.rows * self.spec.cols
    }

    fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn step<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> TransitionSample {
        let absorbing = self.absorbing();
        if state == absorbing {
            return TransitionSample {
                state,
                action,
                reward: 0.0,
                next_state: absorbing,
                terminal: true,
                fell: false,
            };
        }
        if self.slippery[state]
            && self.spec.slip_probability > 0.0
            && rng.random::<f64>() < self.spec.slip_probability
        {
            return self.fall(state, action);
        }
        let next = self.neighbour(state, action);
        if self.cliff[next] {
            return self.fall(state, action);
        }
        let reward = self.rewards[next].sample(rng);
        let terminal = next == self.goal();
        TransitionSample {
            state,
            action,
            reward,
            next_state: if terminal { absorbing } else { next },
            terminal,
            fell: false,
        }
    }
}
