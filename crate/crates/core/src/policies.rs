//! Behavior operators: per-action return distributions in, an action out.

use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::measures::{ssd_dominates, ParticleSet};

pub const DEFAULT_TIE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum PolicyKind {
    #[serde(rename = "greedy")]
    Greedy,
    #[serde(rename = "egreedy")]
    EpsilonGreedy { epsilon: f64 },
    #[serde(rename = "ssd")]
    Ssd,
    #[serde(rename = "cvar")]
    Cvar {
        alpha: f64,
        #[serde(default)]
        epsilon_explore: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct PolicyConfig {
    #[serde(flatten)]
    pub kind: PolicyKind,
    /// Actions whose mean is within this of the best mean count as tied.
    #[serde(default = "default_tolerance")]
    pub value_tie_tolerance: f64,
}

fn default_tolerance() -> f64 {
    DEFAULT_TIE_TOLERANCE
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            value_tie_tolerance: DEFAULT_TIE_TOLERANCE,
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.value_tie_tolerance = tol;
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PolicyKind::Greedy => "greedy",
            PolicyKind::EpsilonGreedy { .. } => "egreedy",
            PolicyKind::Ssd => "ssd",
            PolicyKind::Cvar { .. } => "cvar",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.value_tie_tolerance >= 0.0) {
            return Err(Error::Config(format!(
                "value_tie_tolerance {} must be >= 0",
                self.value_tie_tolerance
            )));
        }
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        match self.kind {
            PolicyKind::EpsilonGreedy { epsilon } => unit("epsilon", epsilon),
            PolicyKind::Cvar {
                alpha,
                epsilon_explore,
            } => {
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(Error::Config(format!("cvar alpha = {alpha} is outside (0, 1]")));
                }
                unit("epsilon_explore", epsilon_explore)
            }
            PolicyKind::Greedy | PolicyKind::Ssd => Ok(()),
        }
    }

    pub fn select<R: Rng + ?Sized>(&self, dists: &[ParticleSet], rng: &mut R) -> Result<usize> {
        check_actions(dists)?;
        let tol = self.value_tie_tolerance;
        Ok(match self.kind {
            PolicyKind::Greedy => uniform_from(&greedy_set(dists, tol), rng),
            PolicyKind::EpsilonGreedy { epsilon } => epsilon_greedy_select(dists, epsilon, tol, rng),
            PolicyKind::Ssd => ssd_select(dists, tol, rng)?,
            PolicyKind::Cvar {
                alpha,
                epsilon_explore,
            } => {
                if epsilon_explore > 0.0 && rng.random::<f64>() < epsilon_explore {
                    rng.random_range(0..dists.len())
                } else {
                    cvar_select(dists, alpha, rng)?
                }
            }
        })
    }

    /// The probabilities with which [`PolicyConfig::select`] picks each action.
    pub fn distribution(&self, dists: &[ParticleSet]) -> Result<ActionDistribution> {
        check_actions(dists)?;
        let n = dists.len();
        let tol = self.value_tie_tolerance;
        let dist = match self.kind {
            PolicyKind::Greedy => ActionDistribution::uniform_over(&greedy_set(dists, tol), n),
            PolicyKind::EpsilonGreedy { epsilon } => ActionDistribution::mix(
                epsilon,
                &ActionDistribution::uniform_over(&greedy_set(dists, tol), n),
            ),
            PolicyKind::Ssd => ActionDistribution::uniform_over(&ssd_candidates(dists, tol)?, n),
            PolicyKind::Cvar {
                alpha,
                epsilon_explore,
            } => ActionDistribution::mix(
                epsilon_explore,
                &ActionDistribution::uniform_over(&cvar_candidates(dists, alpha)?, n),
            ),
        };
        Ok(dist)
    }
}

/// Normalized probabilities over the feasible actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probabilities: Vec<f64>,
}

impl ActionDistribution {
    fn uniform_over(set: &[usize], n: usize) -> Self {
        let mut probabilities = vec![0.0; n];
        let p = 1.0 / set.len() as f64;
        for &a in set {
            probabilities[a] = p;
        }
        Self { probabilities }
    }

    /// `eps * uniform + (1 - eps) * self`.
    fn mix(eps: f64, base: &Self) -> Self {
        let n = base.probabilities.len() as f64;
        Self {
            probabilities: base
                .probabilities
                .iter()
                .map(|p| eps / n + (1.0 - eps) * p)
                .collect(),
        }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
}

fn check_actions(dists: &[ParticleSet]) -> Result<()> {
    if dists.is_empty() {
        return Err(Error::Config("no feasible actions".into()));
    }
    Ok(())
}

fn uniform_from<R: Rng + ?Sized>(set: &[usize], rng: &mut R) -> usize {
    if set.len() == 1 {
        set[0]
    } else {
        set[rng.random_range(0..set.len())]
    }
}

/// Actions whose particle mean is within `tol` of the best mean, in index order.
pub fn greedy_set(dists: &[ParticleSet], tol: f64) -> Vec<usize> {
    let means: Vec<f64> = dists.iter().map(ParticleSet::mean).collect();
    let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..means.len()).filter(|&a| means[a] >= best - tol).collect()
}

/// First action attaining the largest mean.
pub fn argmax_mean(dists: &[ParticleSet]) -> usize {
    let mut best = 0;
    let mut best_mean = f64::NEG_INFINITY;
    for (a, d) in dists.iter().enumerate() {
        let m = d.mean();
        if m > best_mean {
            best = a;
            best_mean = m;
        }
    }
    best
}

/// Competitors that weakly dominate every other competitor, or all competitors if none does.
fn ssd_candidates(dists: &[ParticleSet], tol: f64) -> Result<Vec<usize>> {
    let competing = greedy_set(dists, tol);
    if competing.len() == 1 {
        return Ok(competing);
    }
    let mut dominant = Vec::new();
    'outer: for &a in &competing {
        for &b in &competing {
            if a != b && !ssd_dominates(&dists[a], &dists[b])? {
                continue 'outer;
            }
        }
        dominant.push(a);
    }
    Ok(if dominant.is_empty() { competing } else { dominant })
}

pub fn ssd_select<R: Rng + ?Sized>(dists: &[ParticleSet], tol: f64, rng: &mut R) -> Result<usize> {
    Ok(uniform_from(&ssd_candidates(dists, tol)?, rng))
}

fn cvar_candidates(dists: &[ParticleSet], alpha: f64) -> Result<Vec<usize>> {
    let values = dists
        .iter()
        .map(|d| d.cvar(alpha))
        .collect::<Result<Vec<f64>>>()?;
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((0..values.len()).filter(|&a| values[a] == best).collect())
}

/// Argmax of `CVaR_alpha` over all actions; exact ties are broken uniformly.
pub fn cvar_select<R: Rng + ?Sized>(dists: &[ParticleSet], alpha: f64, rng: &mut R) -> Result<usize> {
    Ok(uniform_from(&cvar_candidates(dists, alpha)?, rng))
}

pub fn epsilon_greedy_select<R: Rng + ?Sized>(
    dists: &[ParticleSet],
    epsilon: f64,
    tol: f64,
    rng: &mut R,
) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..dists.len())
    } else {
        uniform_from(&greedy_set(dists, tol), rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ps(v: &[f64]) -> ParticleSet {
        ParticleSet::new(v.to_vec()).unwrap()
    }

    fn counts(n: usize, draws: usize, mut pick: impl FnMut() -> usize) -> Vec<usize> {
        let mut c = vec![0; n];
        for _ in 0..draws {
            c[pick()] += 1;
        }
        c
    }

    fn within_3_sigma(count: usize, draws: usize, p: f64) -> bool {
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        (count as f64 - draws as f64 * p).abs() <= 3.0 * sd
    }

    #[test]
    fn greedy_sets() {
        let d = [ps(&[1.0]), ps(&[2.0]), ps(&[2.0])];
        assert_eq!(greedy_set(&d, 0.0), vec![1, 2]);
        let d = [ps(&[1.0]), ps(&[2.0]), ps(&[1.9999])];
        assert_eq!(greedy_set(&d, 1e-3), vec![1, 2]);
        assert_eq!(greedy_set(&[ps(&[-3.0])], 0.0), vec![0]);
        assert_eq!(argmax_mean(&[ps(&[1.0]), ps(&[2.0]), ps(&[2.0])]), 1);
    }

    #[test]
    fn ssd_prefers_the_dominating_competitor() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = [ps(&[1.0, 1.0]), ps(&[0.0, 2.0])];
        assert!((0..100).all(|_| ssd_select(&d, 0.0, &mut rng).unwrap() == 0));
        let d = [ps(&[0.0, 3.0]), ps(&[1.0, 2.0])];
        assert!((0..100).all(|_| ssd_select(&d, 0.0, &mut rng).unwrap() == 1));
    }

    #[test]
    fn ssd_falls_back_to_uniform() {
        // Equal means, crossing prefix sums: neither dominates.
        let d = [ps(&[0.0, 3.0, 3.0]), ps(&[1.0, 1.0, 4.0])];
        assert!(!ssd_dominates(&d[0], &d[1]).unwrap());
        assert!(!ssd_dominates(&d[1], &d[0]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 10_000;
        let c = counts(2, draws, || ssd_select(&d, 0.0, &mut rng).unwrap());
        assert!(within_3_sigma(c[0], draws, 0.5), "{c:?}");
    }

    #[test]
    fn cvar_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = [ps(&[1.0, 1.0]), ps(&[0.0, 2.0])];
        assert_eq!(cvar_select(&d, 0.5, &mut rng).unwrap(), 0);
        let d = [ps(&[0.0, 5.0]), ps(&[2.0, 2.0])];
        assert_eq!(cvar_select(&d, 1.0, &mut rng).unwrap(), 0);
        let same = [ps(&[0.0, 1.0]), ps(&[0.0, 1.0]), ps(&[0.0, 1.0])];
        let draws = 10_000;
        let c = counts(3, draws, || cvar_select(&same, 0.3, &mut rng).unwrap());
        assert!(c.iter().all(|&k| within_3_sigma(k, draws, 1.0 / 3.0)), "{c:?}");
    }

    #[test]
    fn epsilon_greedy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = [ps(&[0.0]), ps(&[5.0]), ps(&[5.0])];
        assert!((0..1000).all(|_| epsilon_greedy_select(&d, 0.0, 0.0, &mut rng) != 0));
        let draws = 10_000;
        let c = counts(3, draws, || epsilon_greedy_select(&d, 1.0, 0.0, &mut rng));
        assert!(c.iter().all(|&k| within_3_sigma(k, draws, 1.0 / 3.0)), "{c:?}");
        let d = [ps(&[0.0]), ps(&[5.0])];
        let c = counts(2, draws, || epsilon_greedy_select(&d, 0.1, 0.0, &mut rng));
        assert!(within_3_sigma(c[1], draws, 0.95), "{c:?}");
    }

    #[test]
    fn distributions_are_normalized() {
        let d = [ps(&[0.0, 3.0]), ps(&[1.0, 2.0]), ps(&[-4.0, 0.0])];
        let kinds = [
            PolicyKind::Greedy,
            PolicyKind::EpsilonGreedy { epsilon: 0.1 },
            PolicyKind::Ssd,
            PolicyKind::Cvar {
                alpha: 0.25,
                epsilon_explore: 0.05,
            },
        ];
        for kind in kinds {
            let p = PolicyConfig::new(kind).distribution(&d).unwrap();
            let total: f64 = p.probabilities().iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "{kind:?}");
        }
        let ssd = PolicyConfig::new(PolicyKind::Ssd).distribution(&d).unwrap();
        assert_eq!(ssd.probabilities(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn config_parsing_and_validation() {
        let p: PolicyConfig = toml::from_str("kind = \"cvar\"\nalpha = 0.05").unwrap();
        assert_eq!(
            p.kind,
            PolicyKind::Cvar {
                alpha: 0.05,
                epsilon_explore: 0.0
            }
        );
        assert_eq!(p.value_tie_tolerance, DEFAULT_TIE_TOLERANCE);
        let p: PolicyConfig =
            toml::from_str("kind = \"egreedy\"\nepsilon = 0.1\nvalue_tie_tolerance = 0.01").unwrap();
        assert_eq!(p.name(), "egreedy");
        assert_eq!(p.value_tie_tolerance, 0.01);
        assert!(PolicyConfig::new(PolicyKind::EpsilonGreedy { epsilon: 1.5 }).validate().is_err());
        assert!(PolicyConfig::new(PolicyKind::Cvar { alpha: 0.0, epsilon_explore: 0.0 })
            .validate()
            .is_err());
        assert!(PolicyConfig::new(PolicyKind::Ssd).with_tolerance(-1.0).validate().is_err());
        assert!(PolicyConfig::select(&PolicyConfig::new(PolicyKind::Greedy), &[], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
