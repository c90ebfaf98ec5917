//! Binomial intervals and goodness-of-fit helpers.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::InvalidArgument("wilson interval needs n >= 1".into()));
    }
    if successes > n {
        return Err(Error::InvalidArgument(format!("successes {successes} > n {n}")));
    }
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::InvalidArgument(format!("z must be > 0, got {z}")));
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let low = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if successes == n { 1.0 } else { (center + half).min(1.0) };
    Ok((low, high))
}

/// Whether `p` lies in the Wilson band of the observed counts.
pub fn within_wilson(p: f64, successes: u64, n: u64, z: f64) -> Result<bool> {
    let (lo, hi) = wilson_interval(successes, n, z)?;
    Ok(p >= lo - 1e-12 && p <= hi + 1e-12)
}

/// One-sided paired z statistic for `mean(a) - mean(b)` over matched samples.
/// Positive values favour `a`. Returns 0 when the paired differences are all
/// identical to zero.
pub fn paired_z(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let n = a.len() as f64;
    let (mut sum, mut sq) = (0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let d = x as i32 as f64 - y as i32 as f64;
        sum += d;
        sq += d * d;
    }
    let mean = sum / n;
    let var = (sq / n - mean * mean) * n / (n - 1.0).max(1.0);
    if var <= 0.0 {
        return if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
    }
    mean / (var / n).sqrt()
}

/// Total-variation distance between two discrete distributions given as
/// aligned probability vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Pearson chi-square goodness-of-fit p-value of `counts` against `probs`.
/// Cells with expected count below 5 are pooled into their neighbour.
pub fn chi_square_p_value(counts: &[u64], probs: &[f64]) -> Result<f64> {
    assert_eq!(counts.len(), probs.len());
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    let nf = n as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        obs += c as f64;
        exp += p * nf;
        if exp >= 5.0 {
            cells.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if exp > 0.0 || obs > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += obs;
                last.1 += exp;
            }
            None => cells.push((obs, exp)),
        }
    }
    if cells.len() < 2 {
        return Ok(1.0);
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (cells.len() - 1) as f64;
    let dist = ChiSquared::new(dof).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(1.0 - dist.cdf(stat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_boundaries() {
        let (lo, hi) = wilson_interval(0, 10, 1.96).unwrap();
        assert_eq!(lo, 0.0);
        // z^2/(n+z^2)
        assert!((hi - 1.96f64.powi(2) / (10.0 + 1.96f64.powi(2))).abs() < 1e-12);
        assert!((hi - 0.2775).abs() < 1e-4);
        assert_eq!(wilson_interval(10, 10, 1.96).unwrap().1, 1.0);
        let (lo, hi) = wilson_interval(5, 10, 1.96).unwrap();
        assert!(((lo + hi) / 2.0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn wilson_domain_errors() {
        assert!(wilson_interval(1, 0, 1.96).is_err());
        assert!(wilson_interval(11, 10, 1.96).is_err());
        assert!(wilson_interval(1, 10, 0.0).is_err());
    }

    #[test]
    fn wilson_contains_estimate() {
        for n in [1u64, 7, 100, 20_000] {
            for s in [0, n / 3, n / 2, n] {
                let (lo, hi) = wilson_interval(s, n, 2.576).unwrap();
                let p = s as f64 / n as f64;
                assert!(lo <= p && p <= hi);
            }
        }
    }

    #[test]
    fn chi_square_sanity() {
        let probs = [0.25, 0.25, 0.5];
        assert!(chi_square_p_value(&[250, 250, 500], &probs).unwrap() > 0.99);
        assert!(chi_square_p_value(&[400, 100, 500], &probs).unwrap() < 1e-6);
    }

    #[test]
    fn paired_z_direction() {
        let a = [true, true, true, false, true, true];
        let b = [true, false, false, false, true, false];
        assert!(paired_z(&a, &b) > 0.0);
        assert!(paired_z(&b, &a) < 0.0);
        assert_eq!(paired_z(&a, &a), 0.0);
    }
}
