use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::error::{Error, Result};

/// One-dimensional Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmSpec {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl GmmSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.stds.len() != k {
            return Err(Error::Config(format!(
                "mixture needs equal-length, non-empty weights/means/stds (got {}, {}, {})",
                k,
                self.means.len(),
                self.stds.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("mixture weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        if self.stds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("mixture stds must be positive".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("mixture means must be finite".into()));
        }
        Ok(())
    }

    /// `sum_k w_k mu_k`.
    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    /// `sum_k w_k (mu_k^2 + sigma_k^2)`.
    pub fn second_moment(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((w, m), s)| w * (m * m + s * s))
            .sum()
    }
}

/// Draws `n` samples: a component by weight, then a Gaussian draw from it.
pub fn sample_gmm<R: Rng + ?Sized>(spec: &GmmSpec, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    let pick = WeightedIndex::new(&spec.weights)
        .map_err(|e| Error::Config(format!("mixture weights: {e}")))?;
    let comps: Vec<Normal<f64>> = spec
        .means
        .iter()
        .zip(&spec.stds)
        .map(|(&m, &s)| Normal::new(m, s).expect("validated std"))
        .collect();
    Ok((0..n).map(|_| comps[pick.sample(rng)].sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_component() {
        let spec = GmmSpec {
            weights: vec![1.0],
            means: vec![0.0],
            stds: vec![1.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = sample_gmm(&spec, 100_000, &mut rng).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn zero_weight_component_is_never_drawn() {
        let spec = GmmSpec {
            weights: vec![1.0, 0.0],
            means: vec![3.0, 100.0],
            stds: vec![1.0, 1.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs = sample_gmm(&spec, 10_000, &mut rng).unwrap();
        assert!(xs.iter().all(|x| (x - 3.0).abs() < 6.0));
    }

    #[test]
    fn analytic_moments() {
        let spec = GmmSpec {
            weights: vec![0.5, 0.5],
            means: vec![-1.0, 3.0],
            stds: vec![1.0, 2.0],
        };
        assert_eq!(spec.mean(), 1.0);
        assert_eq!(spec.second_moment(), 0.5 * 2.0 + 0.5 * 13.0);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = [
            GmmSpec { weights: vec![], means: vec![], stds: vec![] },
            GmmSpec { weights: vec![0.5, 0.4], means: vec![0.0, 1.0], stds: vec![1.0, 1.0] },
            GmmSpec { weights: vec![1.0], means: vec![0.0], stds: vec![0.0] },
            GmmSpec { weights: vec![1.0], means: vec![0.0, 1.0], stds: vec![1.0] },
        ];
        for spec in bad {
            assert!(spec.validate().is_err(), "{spec:?}");
        }
    }
}
