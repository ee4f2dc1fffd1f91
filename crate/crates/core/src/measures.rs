//! Uniform-weight particle approximations of return distributions.
//!
//! A [`ParticleSet`] holds `N` equally likely diracs, kept in non-decreasing
//! order so that index `i` is always the `i`-th order statistic. Everything
//! the dominance test needs (prefix sums, cumulative quantiles, CVaR) is read
//! straight off that sorted layout.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    values: Vec<f64>,
}

impl ParticleSet {
    /// Builds a set from arbitrary-order samples. Values are sorted on entry.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyParticles);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn constant(value: f64, n: usize) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sorted particle locations.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn second_moment(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.len() as f64
    }

    /// `S_j = z[1] + ... + z[j]` over the order statistics, `j = 1..=N`.
    pub fn prefix_sums(&self) -> Vec<f64> {
        self.values
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }

    /// Empirical `F^(2)(alpha) = E[max(alpha - X, 0)]`, the integrated CDF.
    pub fn cumulative_cdf_f2(&self, alpha: f64) -> f64 {
        self.values.iter().map(|v| (alpha - v).max(0.0)).sum::<f64>() / self.len() as f64
    }

    /// Cumulative quantile `F^(-2)(tau)`, the integral of the quantile function on `[0, tau]`.
    ///
    /// Exact on the grid `tau = j/N`, where it equals `S_j / N`; piecewise
    /// linear in between (the quantile function is constant on each cell).
    pub fn cumulative_quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::domain("tau", tau, "0 < tau <= 1"));
        }
        let n = self.len();
        let pos = tau * n as f64;
        let cell = (pos.floor() as usize).min(n);
        let lower: f64 = self.values[..cell].iter().sum();
        let frac = pos - cell as f64;
        let partial = if cell < n { frac * self.values[cell] } else { 0.0 };
        Ok((lower + partial) / n as f64)
    }

    /// Conditional value at risk: mean of the worst `tau` fraction of outcomes.
    pub fn cvar(&self, tau: f64) -> Result<f64> {
        Ok(self.cumulative_quantile(tau)? / tau)
    }

    /// Every particle moved by `c`.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v + c).collect())
    }
}

impl TryFrom<Vec<f64>> for ParticleSet {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// Outcome of a two-way second-order dominance comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DominanceVerdict {
    FirstDominates,
    SecondDominates,
    Mutual,
    Incomparable,
}

/// Weak second-order dominance `a ⪰₂ b` through the prefix-sum test.
pub fn ssd_dominates(a: &ParticleSet, b: &ParticleSet) -> Result<bool> {
    ssd_dominates_with_slack(a, b, 0.0)
}

/// As [`ssd_dominates`], but each prefix comparison is `S_a[j] + slack >= S_b[j]`.
pub fn ssd_dominates_with_slack(a: &ParticleSet, b: &ParticleSet, slack: f64) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut sa = 0.0;
    let mut sb = 0.0;
    for (x, y) in a.values().iter().zip(b.values()) {
        sa += x;
        sb += y;
        if sa + slack < sb {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn compare(a: &ParticleSet, b: &ParticleSet, slack: f64) -> Result<DominanceVerdict> {
    let ab = ssd_dominates_with_slack(a, b, slack)?;
    let ba = ssd_dominates_with_slack(b, a, slack)?;
    Ok(match (ab, ba) {
        (true, true) => DominanceVerdict::Mutual,
        (true, false) => DominanceVerdict::FirstDominates,
        (false, true) => DominanceVerdict::SecondDominates,
        (false, false) => DominanceVerdict::Incomparable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(v: &[f64]) -> ParticleSet {
        ParticleSet::new(v.to_vec()).unwrap()
    }

    #[test]
    fn moments() {
        assert_eq!(ps(&[1.0, 2.0, 3.0]).mean(), 2.0);
        assert_eq!(ps(&[5.0]).mean(), 5.0);
        assert_eq!(ps(&[0.0, 0.0, 6.0]).mean(), 2.0);
        assert_eq!(ps(&[1.0, 1.0]).second_moment(), 1.0);
        assert_eq!(ps(&[0.0, 2.0]).second_moment(), 2.0);
        assert_eq!(ps(&[-1.0, 1.0]).second_moment(), 1.0);
    }

    #[test]
    fn prefix_sums_sort_first() {
        assert_eq!(ps(&[1.0, 2.0, 3.0]).prefix_sums(), vec![1.0, 3.0, 6.0]);
        assert_eq!(ps(&[0.0, 2.0, 4.0]).prefix_sums(), vec![0.0, 2.0, 6.0]);
        assert_eq!(ps(&[3.0, 1.0, 2.0]).prefix_sums(), vec![1.0, 3.0, 6.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(ParticleSet::new(vec![]), Err(Error::EmptyParticles));
        assert!(matches!(
            ParticleSet::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(ParticleSet::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn dominance_examples() {
        assert!(ssd_dominates(&ps(&[1.0, 2.0, 3.0]), &ps(&[0.0, 2.0, 4.0])).unwrap());
        assert!(ssd_dominates(&ps(&[1.0, 2.0]), &ps(&[1.0, 2.0])).unwrap());
        let a = ps(&[0.0, 4.0]);
        let b = ps(&[1.0, 2.0]);
        assert!(!ssd_dominates(&a, &b).unwrap());
        assert!(!ssd_dominates(&b, &a).unwrap());
        assert_eq!(compare(&a, &b, 0.0).unwrap(), DominanceVerdict::Incomparable);
        assert_eq!(compare(&b, &b, 0.0).unwrap(), DominanceVerdict::Mutual);
        assert_eq!(
            compare(&ps(&[1.0, 1.0]), &ps(&[0.0, 2.0]), 0.0).unwrap(),
            DominanceVerdict::FirstDominates
        );
    }

    #[test]
    fn dominance_size_mismatch() {
        assert_eq!(
            ssd_dominates(&ps(&[1.0]), &ps(&[1.0, 2.0])),
            Err(Error::SizeMismatch { left: 1, right: 2 })
        );
    }

    #[test]
    fn slack_relaxes_comparison() {
        let a = ps(&[0.0, 2.0]);
        let b = ps(&[0.01, 2.0]);
        assert!(!ssd_dominates(&a, &b).unwrap());
        assert!(ssd_dominates_with_slack(&a, &b, 0.02).unwrap());
    }

    #[test]
    fn integrated_cdf() {
        let p = ps(&[0.0, 2.0]);
        assert_eq!(p.cumulative_cdf_f2(1.0), 0.5);
        assert_eq!(p.cumulative_cdf_f2(-5.0), 0.0);
        assert_eq!(p.cumulative_cdf_f2(10.0), 9.0);
    }

    #[test]
    fn cumulative_quantile_and_cvar() {
        let p = ps(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(p.cumulative_quantile(0.5).unwrap(), 0.75);
        assert_eq!(p.cumulative_quantile(1.0).unwrap(), 2.5);
        assert_eq!(ps(&[7.0]).cumulative_quantile(1.0).unwrap(), 7.0);
        assert_eq!(p.cvar(0.5).unwrap(), 1.5);
        assert_eq!(p.cvar(1.0).unwrap(), 2.5);
        let flat = ps(&[5.0, 5.0, 5.0]);
        for j in 1..=3 {
            assert!((flat.cvar(j as f64 / 3.0).unwrap() - 5.0).abs() < 1e-12);
        }
        // between grid points: 0.375 = 1.5/4, halfway through the second cell
        assert!((p.cumulative_quantile(0.375).unwrap() - (1.0 + 0.5 * 2.0) / 4.0).abs() < 1e-15);
        assert!(p.cumulative_quantile(0.0).is_err());
        assert!(p.cvar(1.5).is_err());
    }
}
