//! Distribution-selection policies and per-episode pool shaping.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionPool, GuidancePolicy};
use crate::error::{Error, Result};

/// Picks the pool index used for the next draw given the residual goal.
///
/// Deterministic policies break ties toward the lowest index.
/// `UniformRandom` consumes exactly one uniform variate; the others consume none.
pub fn select_action_dist<R: Rng + ?Sized>(
    pool: &ActionPool,
    residual: i64,
    policy: GuidancePolicy,
    rng: &mut R,
) -> Result<usize> {
    select_by_means(pool.dists().iter().map(|d| d.mu()), residual, policy, rng)
}

pub(crate) fn select_by_means<I, R>(
    means: I,
    residual: i64,
    policy: GuidancePolicy,
    rng: &mut R,
) -> Result<usize>
where
    I: ExactSizeIterator<Item = f64>,
    R: Rng + ?Sized,
{
    let n = means.len();
    if n == 0 {
        return Err(Error::EmptyPool);
    }
    let residual = residual as f64;
    let pick = match policy {
        GuidancePolicy::Aligned => extreme(means, residual, |gap, best| gap < best),
        GuidancePolicy::Misaligned => extreme(means, residual, |gap, best| gap > best),
        GuidancePolicy::UniformRandom => {
            let u: f64 = rng.random();
            ((u * n as f64) as usize).min(n - 1)
        }
    };
    Ok(pick)
}

/// Deterministic selection without an RNG; `None` for `UniformRandom`.
pub fn deterministic_choice(pool: &ActionPool, residual: i64, policy: GuidancePolicy) -> Option<usize> {
    let means = pool.dists().iter().map(|d| d.mu());
    let residual = residual as f64;
    match policy {
        GuidancePolicy::Aligned => Some(extreme(means, residual, |g, b| g < b)),
        GuidancePolicy::Misaligned => Some(extreme(means, residual, |g, b| g > b)),
        GuidancePolicy::UniformRandom => None,
    }
}

fn extreme<I: Iterator<Item = f64>>(means: I, residual: f64, better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    let mut best_gap = f64::NAN;
    for (i, mu) in means.enumerate() {
        let gap = (mu - residual).abs();
        if i == 0 || better(gap, best_gap) {
            best = i;
            best_gap = gap;
        }
    }
    best
}

/// Random pool restriction applied once at the start of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolShaping {
    /// Retain exactly N distributions.
    Keep(usize),
    /// Remove exactly m distributions.
    Remove(usize),
}

impl PoolShaping {
    /// Number of retained distributions for a pool of `len`.
    pub fn retained(&self, len: usize) -> Result<usize> {
        match *self {
            PoolShaping::Keep(n) if (1..=len).contains(&n) => Ok(n),
            PoolShaping::Keep(n) => Err(Error::ShapeOutOfRange(format!(
                "keep({n}) on a pool of {len}"
            ))),
            PoolShaping::Remove(m) if m < len => Ok(len - m),
            PoolShaping::Remove(m) => Err(Error::ShapeOutOfRange(format!(
                "remove({m}) on a pool of {len}"
            ))),
        }
    }
}

/// Uniformly random subset of the required size, original order preserved.
pub fn shape_pool<R: Rng + ?Sized>(pool: &ActionPool, mode: PoolShaping, rng: &mut R) -> Result<ActionPool> {
    let keep = shape_indices(pool.len(), mode, rng)?;
    ActionPool::new(keep.into_iter().map(|i| pool.dists()[i]).collect())
}

/// Indices retained by [`shape_pool`], ascending.
pub fn shape_indices<R: Rng + ?Sized>(len: usize, mode: PoolShaping, rng: &mut R) -> Result<Vec<usize>> {
    let keep = mode.retained(len)?;
    if keep == len {
        return Ok((0..len).collect());
    }
    let mut picked = rand::seq::index::sample(rng, len, keep).into_vec();
    picked.sort_unstable();
    Ok(picked)
}
