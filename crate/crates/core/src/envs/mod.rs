//! Finite MDPs and the synthetic regression source.

mod gmm;
mod grid;

pub use gmm::{sample_gmm, GmmSpec};
pub use grid::{GridSpec, GridWorld, PathClass, Region, RewardRegion, RewardSpec, DOWN, LEFT, RIGHT, UP};

use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};

/// One `(s, a, r, s', done)` interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionSample {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    /// The absorbing state whenever `terminal` is set.
    pub next_state: usize,
    pub terminal: bool,
    /// The agent fell into the cliff (by stepping in or slipping) and was sent back to start.
    pub fell: bool,
}

/// Tabular episodic MDP with an absorbing terminal state.
pub trait Environment {
    /// Includes the absorbing state.
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn start(&self) -> usize;
    fn absorbing(&self) -> usize;
    fn gamma(&self) -> f64;
    fn horizon(&self) -> usize;
    fn step<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> TransitionSample;
}

/// Parsed environment config: either a grid world or a mixture source.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Grid(GridSpec),
    Gmm(GmmSpec),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvFile {
    grid: Option<GridSpec>,
    gmm: Option<GmmSpec>,
}

impl EnvSpec {
    /// Parses a TOML document holding exactly one of a `[grid]` or `[gmm]` table.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: EnvFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("environment config: {e}")))?;
        match (file.grid, file.gmm) {
            (Some(grid), None) => {
                GridWorld::new(grid.clone())?;
                Ok(EnvSpec::Grid(grid))
            }
            (None, Some(gmm)) => {
                gmm.validate()?;
                Ok(EnvSpec::Gmm(gmm))
            }
            _ => Err(Error::Config(
                "environment config needs exactly one of [grid] or [gmm]".into(),
            )),
        }
    }

    pub fn grid(&self) -> Result<GridWorld> {
        match self {
            EnvSpec::Grid(spec) => GridWorld::new(spec.clone()),
            EnvSpec::Gmm(_) => Err(Error::Config("expected a grid environment".into())),
        }
    }

    pub fn gmm(&self) -> Result<&GmmSpec> {
        match self {
            EnvSpec::Gmm(spec) => Ok(spec),
            EnvSpec::Grid(_) => Err(Error::Config("expected a mixture source".into())),
        }
    }
}

pub const PRESET_NAMES: [&str; 3] = ["cliffwalk-standard", "cliffwalk-modified", "gmm-five"];

/// Raw TOML of a shipped preset.
pub fn preset_source(name: &str) -> Option<&'static str> {
    match name {
        "cliffwalk-standard" => Some(include_str!("../../presets/cliffwalk-standard.toml")),
        "cliffwalk-modified" => Some(include_str!("../../presets/cliffwalk-modified.toml")),
        "gmm-five" => Some(include_str!("../../presets/gmm-five.toml")),
        _ => None,
    }
}

pub fn preset(name: &str) -> Result<EnvSpec> {
    let text = preset_source(name).ok_or_else(|| {
        Error::Config(format!(
            "unknown preset {name:?} (available: {})",
            PRESET_NAMES.join(", ")
        ))
    })?;
    EnvSpec::from_toml(text)
}
