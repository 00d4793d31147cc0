//! Model interface shared by the Poisson and normal-means code paths.
//!
//! The hierarchical Bayes machinery and the regret harness only need a few
//! things from a prior: the log marginal density of an observation, the
//! single-prior Bayes rule, mixing several priors, and sampling.

use std::fmt::Debug;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::Result;
use crate::mixture::DiscretePrior;

/// A mixing distribution `G` together with its observation model.
pub trait Prior: Clone + Debug + Send + Sync {
    /// Observation type: counts for Poisson, reals for the normal-means model.
    type Obs: Copy + PartialOrd + Debug + Send + Sync;

    fn support_bound(&self) -> f64;

    /// `log f_G(x)` and `θ_G(x)`; the mean is `None` iff `f_G(x) = 0`.
    fn log_marginal_and_mean(&self, x: Self::Obs) -> (f64, Option<f64>);

    fn log_marginal(&self, x: Self::Obs) -> f64 {
        self.log_marginal_and_mean(x).0
    }

    /// `Σ_j c_j G_j` with mixing weights `c` summing to one.
    fn mixture(components: &[Self], mixing: &[f64]) -> Result<Self>;

    /// Draws `θ ~ G`.
    fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;

    /// Draws `X | θ`.
    fn sample_obs<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> Self::Obs;
}

/// Picks an index `j` with probability `weights[j]` (weights sum to one).
pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return j;
        }
    }
    // rounding left u above the cumulative sum: take the last positive weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Draws `X ~ Poi(λ)`; `λ = 0` yields `0`.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(lambda)
        .expect("positive finite rate")
        .sample(rng);
    draw as u64
}

impl Prior for DiscretePrior {
    type Obs = u64;

    fn support_bound(&self) -> f64 {
        DiscretePrior::support_bound(self)
    }

    fn log_marginal_and_mean(&self, x: u64) -> (f64, Option<f64>) {
        DiscretePrior::log_marginal_and_mean(self, x)
    }

    fn log_marginal(&self, x: u64) -> f64 {
        DiscretePrior::log_marginal(self, x)
    }

    fn mixture(components: &[Self], mixing: &[f64]) -> Result<Self> {
        DiscretePrior::mixture(components, mixing)
    }

    fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.atoms()[sample_index(self.weights(), rng)]
    }

    fn sample_obs<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> u64 {
        sample_poisson(theta, rng)
    }
}

/// Draws `X ~ N(θ, 1)`.
pub fn sample_unit_normal<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    theta + z
}

/// A sequence-to-sequence estimator `X^n ↦ θ̂^n`.
pub trait Estimator<O>: Send + Sync {
    /// Name used in reports. Must not contain commas or newlines.
    fn name(&self) -> String;

    fn estimate(&self, xs: &[O]) -> Result<Vec<f64>>;
}

impl<O, E: Estimator<O> + ?Sized> Estimator<O> for Box<E> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn estimate(&self, xs: &[O]) -> Result<Vec<f64>> {
        (**self).estimate(xs)
    }
}

/// Distinct values of `xs` (in increasing order) and, for each position of
/// `xs`, the index of its value in that list.
pub(crate) fn distinct_values<O: Copy + PartialOrd>(xs: &[O]) -> (Vec<O>, Vec<usize>) {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| {
        xs[a]
            .partial_cmp(&xs[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut values: Vec<O> = Vec::new();
    let mut slot = vec![0usize; xs.len()];
    for i in order {
        if values.last() != Some(&xs[i]) {
            values.push(xs[i]);
        }
        slot[i] = values.len() - 1;
    }
    (values, slot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distinct_values_maps_back() {
        let xs = [3u64, 1, 3, 0, 1];
        let (values, slot) = distinct_values(&xs);
        assert_eq!(values, vec![0, 1, 3]);
        for (i, x) in xs.iter().enumerate() {
            assert_eq!(values[slot[i]], *x);
        }
    }

    #[test]
    fn sample_index_respects_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(sample_index(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
    }

    #[test]
    fn poisson_zero_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_poisson(0.0, &mut rng), 0);
    }
}
