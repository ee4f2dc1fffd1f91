use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Two-sided Student t critical value `t_{(1+level)/2, df}`.
pub fn t_critical(level: f64, df: usize) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain("level", level, "0 < level < 1"));
    }
    if df == 0 {
        return Err(Error::domain("df", 0.0, "df >= 1"));
    }
    let t = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::Config(format!("student t with {df} degrees of freedom: {e}")))?;
    Ok(t.inverse_cdf(0.5 + level / 2.0))
}

/// `(mean, half_width)` of the t-interval `mean ± t * s / sqrt(M)` with `M - 1` degrees of freedom.
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::domain("samples", m as f64, "at least two samples"));
    }
    let mean = samples.iter().sum::<f64>() / m as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    Ok((mean, t_critical(level, m - 1)? * (var / m as f64).sqrt()))
}

/// Root mean squared difference between estimates and one target value.
pub fn rmse(estimates: &[f64], target: f64) -> f64 {
    (estimates.iter().map(|e| (e - target).powi(2)).sum::<f64>() / estimates.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        assert!((t_critical(0.95, 49).unwrap() - 2.0096).abs() < 1e-3);
        assert!((t_critical(0.95, 1).unwrap() - 12.706).abs() < 1e-2);
        let (m, h) = confidence_interval(&[0.0, 2.0], 0.95).unwrap();
        assert_eq!(m, 1.0);
        assert!((h - 12.706).abs() < 1e-2);
    }

    #[test]
    fn degenerate_samples() {
        assert_eq!(confidence_interval(&[3.5; 7], 0.95).unwrap(), (3.5, 0.0));
        assert!(confidence_interval(&[1.0], 0.95).is_err());
        assert!(t_critical(1.0, 3).is_err());
        assert_eq!(rmse(&[1.0, 3.0], 2.0), 1.0);
    }
}
