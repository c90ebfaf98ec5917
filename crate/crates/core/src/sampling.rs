//! Truncated-Gaussian integer action model: exact probability mass, inverse-CDF
//! sampling, and analytic moments of the continuous (pre-rounding) law.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use rand::Rng;
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::domain::TruncatedGaussianSpec;
use crate::error::{Error, Result};

const MIN_NORMALIZER: f64 = 1e-300;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal upper tail `1 - Φ(x)`, accurate for large positive `x`.
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `Φ(b) - Φ(a)` for `a <= b`, computed on whichever tail keeps precision.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // one Newton step against the erfc-based CDF
    let density = std_normal_pdf(x);
    if density > 1e-280 {
        x - (std_normal_cdf(x) - p) / density
    } else {
        x
    }
}

/// Probability mass of the integer action law induced by a truncated Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPmf {
    spec: TruncatedGaussianSpec,
    masses: Vec<f64>,
}

impl ActionPmf {
    pub fn spec(&self) -> &TruncatedGaussianSpec {
        &self.spec
    }

    /// Mass at integer action `a`; zero outside the support.
    pub fn mass(&self, a: i64) -> f64 {
        if a < self.spec.lower() || a > self.spec.upper() {
            return 0.0;
        }
        self.masses[(a - self.spec.lower()) as usize]
    }

    /// `(action, mass)` pairs in increasing action order.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let lower = self.spec.lower();
        self.masses
            .iter()
            .enumerate()
            .map(move |(i, &m)| (lower + i as i64, m))
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn lower(&self) -> i64 {
        self.spec.lower()
    }

    pub fn upper(&self) -> i64 {
        self.spec.upper()
    }
}

/// A truncated Gaussian prepared for repeated sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedGaussian {
    spec: TruncatedGaussianSpec,
    // Standardized bounds, reflected so the sampled interval never lies
    // entirely in the upper tail.
    lo_z: f64,
    hi_z: f64,
    reflected: bool,
    cdf_lo: f64,
    mass: f64,
}

impl TruncatedGaussian {
    pub fn new(spec: TruncatedGaussianSpec) -> Result<Self> {
        let a = (spec.lower() as f64 - spec.mu()) / spec.sigma();
        let b = (spec.upper() as f64 - spec.mu()) / spec.sigma();
        let mass = normal_mass(a, b);
        if !(mass >= MIN_NORMALIZER) {
            return Err(Error::DegenerateNormalizer {
                mu: spec.mu(),
                sigma: spec.sigma(),
                lower: spec.lower(),
                upper: spec.upper(),
                normalizer: mass,
            });
        }
        let reflected = a > 0.0;
        let (lo_z, hi_z) = if reflected { (-b, -a) } else { (a, b) };
        Ok(Self {
            spec,
            lo_z,
            hi_z,
            reflected,
            cdf_lo: std_normal_cdf(lo_z),
            mass,
        })
    }

    pub fn spec(&self) -> &TruncatedGaussianSpec {
        &self.spec
    }

    /// Continuous draw on `[lower, upper]` from exactly one uniform variate.
    pub fn sample_continuous<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let p = self.cdf_lo + u * (std_normal_cdf(self.hi_z) - self.cdf_lo);
        let z = std_normal_quantile(p).clamp(self.lo_z, self.hi_z);
        let z = if self.reflected { -z } else { z };
        (self.spec.mu() + self.spec.sigma() * z)
            .clamp(self.spec.lower() as f64, self.spec.upper() as f64)
    }

    /// Integer action: continuous draw, rounded half away from zero, clipped.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let x = self.sample_continuous(rng);
        (x.round() as i64).clamp(self.spec.lower(), self.spec.upper())
    }

    pub fn pmf(&self) -> ActionPmf {
        let spec = self.spec;
        let (mu, sigma) = (spec.mu(), spec.sigma());
        let lo = spec.lower() as f64;
        let hi = spec.upper() as f64;
        let masses = spec
            .support()
            .map(|a| {
                let a = a as f64;
                let left = ((a - 0.5).max(lo) - mu) / sigma;
                let right = ((a + 0.5).min(hi) - mu) / sigma;
                (normal_mass(left, right) / self.mass).max(0.0)
            })
            .collect();
        ActionPmf { spec, masses }
    }

    /// Mean and variance of the continuous truncated normal.
    pub fn moments(&self) -> (f64, f64) {
        let spec = self.spec;
        let (mu, sigma) = (spec.mu(), spec.sigma());
        let a = (spec.lower() as f64 - mu) / sigma;
        let b = (spec.upper() as f64 - mu) / sigma;
        let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
        let z = self.mass;
        let shift = (pa - pb) / z;
        let mean = mu + sigma * shift;
        let variance = sigma * sigma * (1.0 + (a * pa - b * pb) / z - shift * shift);
        (mean, variance)
    }
}

/// Exact law of `clip(round(X))` for `X` truncated-normal on `[lower, upper]`.
pub fn action_pmf(spec: &TruncatedGaussianSpec) -> Result<ActionPmf> {
    Ok(TruncatedGaussian::new(*spec)?.pmf())
}

pub fn sample_action<R: Rng + ?Sized>(spec: &TruncatedGaussianSpec, rng: &mut R) -> Result<i64> {
    Ok(TruncatedGaussian::new(*spec)?.sample(rng))
}

pub fn truncated_moments(spec: &TruncatedGaussianSpec) -> Result<(f64, f64)> {
    Ok(TruncatedGaussian::new(*spec)?.moments())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{agents, build_linear_pool};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(mu: f64, sigma: f64, lo: i64, hi: i64) -> TruncatedGaussianSpec {
        TruncatedGaussianSpec::new(mu, sigma, lo, hi).unwrap()
    }

    #[test]
    fn cdf_reference_values() {
        // Tabulated standard normal values.
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((std_normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-13);
        assert!((std_normal_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-13);
        assert!((std_normal_cdf(-0.75) - 0.226_627_352_376_868_2).abs() < 1e-13);
        assert!((std_normal_cdf(-8.0) - 6.220_960_574_271_74e-16).abs() < 1e-27);
        assert!((std_normal_sf(8.0) - 6.220_960_574_271_74e-16).abs() < 1e-27);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-6, 0.01, 0.2, 0.5, 0.77, 0.999] {
            let x = std_normal_quantile(p);
            assert!((std_normal_cdf(x) - p).abs() <= 1e-14 * p.max(1e-3), "p={p}");
        }
    }

    #[test]
    fn small_agent_masses() {
        let pmf = action_pmf(&agents::small()).unwrap();
        let z = std_normal_cdf(1.0) - std_normal_cdf(-1.0);
        let m4 = (std_normal_cdf(-0.75) - std_normal_cdf(-1.0)) / z;
        let m6 = (std_normal_cdf(0.25) - std_normal_cdf(-0.25)) / z;
        assert!((pmf.mass(4) - m4).abs() < 1e-14);
        assert!((pmf.mass(6) - m6).abs() < 1e-14);
        assert!((pmf.mass(4) - 0.09956).abs() < 1e-5);
        assert!((pmf.mass(6) - 0.28917).abs() < 1e-5);
        assert_eq!(pmf.mass(3), 0.0);
        assert_eq!(pmf.mass(9), 0.0);
    }

    #[test]
    fn vanishing_sigma_concentrates() {
        let pmf = action_pmf(&spec(6.0, 0.001, 4, 8)).unwrap();
        assert!((pmf.mass(6) - 1.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = TruncatedGaussian::new(spec(6.0, 0.001, 4, 8)).unwrap();
        let hits = (0..10_000).filter(|_| s.sample(&mut rng) == 6).count();
        assert!(hits >= 9_990);
    }

    #[test]
    fn masses_sum_to_one_for_all_pools() {
        let mut specs = vec![agents::small(), agents::medium(), agents::large()];
        specs.extend(agents::pruning_pool().dists().iter().copied());
        specs.extend(build_linear_pool(10).unwrap().dists().iter().copied());
        for s in specs {
            let total: f64 = action_pmf(&s).unwrap().masses().iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "{s}: {total}");
        }
    }

    #[test]
    fn degenerate_interval_is_an_error() {
        let far = spec(0.0, 1.0, 60, 61);
        // mass ~ 1e-785: beyond double precision
        assert!(matches!(
            action_pmf(&far),
            Err(Error::DegenerateNormalizer { .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_action(&far, &mut rng).is_err());
    }

    #[test]
    fn upper_tail_intervals_stay_accurate() {
        // Interval 7..8 sigma above the mean: naive Φ differences cancel.
        let s = spec(0.0, 1.0, 7, 8);
        let pmf = action_pmf(&s).unwrap();
        let total: f64 = pmf.masses().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let t = TruncatedGaussian::new(s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let sevens = (0..n).filter(|_| t.sample(&mut rng) == 7).count() as f64 / n as f64;
        assert!((sevens - pmf.mass(7)).abs() < 0.01, "{sevens} vs {}", pmf.mass(7));
    }

    #[test]
    fn symmetric_spec_has_mirrored_pmf() {
        for s in [spec(6.0, 2.0, 4, 8), spec(10.0, 3.3, 5, 15), spec(3.5, 0.7, 1, 6)] {
            let pmf = action_pmf(&s).unwrap();
            let span = s.upper() - s.lower();
            for k in 0..=span {
                assert!((pmf.mass(s.lower() + k) - pmf.mass(s.upper() - k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_stream_same_draws() {
        let t = TruncatedGaussian::new(agents::small()).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64).map(|_| t.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(17), draw(17));
        assert_ne!(draw(17), draw(18));
    }

    #[test]
    fn symmetric_moments() {
        let (mean, var) = truncated_moments(&agents::small()).unwrap();
        assert!((mean - 6.0).abs() < 1e-12);
        // σ²(1 − 2φ(1)/Z) with Z = Φ(1) − Φ(−1)
        let z = std_normal_cdf(1.0) - std_normal_cdf(-1.0);
        let closed = 4.0 * (1.0 - 2.0 * std_normal_pdf(1.0) / z);
        assert!((var - closed).abs() < 1e-13, "{var}");
        assert!((var - 1.164_50).abs() < 1e-5, "{var}");
    }

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + h * i as f64);
        }
        acc * h / 3.0
    }

    #[test]
    fn moments_match_quadrature() {
        for s in [spec(4.0, 1.5, 2, 7), agents::medium(), agents::large(), spec(9.0, 0.8, 1, 8)] {
            let density = |x: f64| std_normal_pdf((x - s.mu()) / s.sigma()) / s.sigma();
            let (a, b) = (s.lower() as f64, s.upper() as f64);
            let n = 20_000;
            let z = simpson(density, a, b, n);
            let m1 = simpson(|x| x * density(x), a, b, n) / z;
            let m2 = simpson(|x| (x - m1).powi(2) * density(x), a, b, n) / z;
            let (mean, var) = truncated_moments(&s).unwrap();
            assert!((mean - m1).abs() < 1e-8, "{s}: {mean} vs {m1}");
            assert!((var - m2).abs() < 1e-8, "{s}: {var} vs {m2}");
        }
    }
}
