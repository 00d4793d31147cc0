//! Hierarchical Bayes under a prior-on-prior.
//!
//! Under `G ~ Π`, `θ_i | G ~ G` i.i.d. and `X_i | θ_i ~ p(· | θ_i)`, the
//! posterior mean of `θ_i` given the whole sequence is
//!
//! ```text
//! E_Π[θ_i | X^n] = Σ_j p_j θ_{G_j}(X_i),   p_j ∝ w_j Π_k f_{G_j}(X_k)
//! ```
//!
//! when `Π` is represented by candidates `G_j` with prior weights `w_j`. A
//! [`PosteriorState`] holds those candidates and (log) weights. Raising the
//! likelihood to a power `α ∈ (0, 1]` gives the α-posterior, which is exactly
//! what a length-`n` estimator computes on a length-`n_test` input with
//! `α = n / n_test` (see [`lengen_estimate`]).

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{EbError, Result};
use crate::mixture::{log_sum_exp, DiscretePrior, TruncatedPmf};
use crate::model::{distinct_values, Estimator, Prior};
use crate::pop::{sample_prior, PopKind, PopSpec};

pub const DEFAULT_MC_DRAWS: usize = 4096;

/// Candidate count above which per-candidate work is spread over threads.
const PARALLEL_CANDIDATES: usize = 256;

/// Finite representation of `Π^α(dG | data)`.
#[derive(Debug, Clone)]
pub struct PosteriorState<P: Prior> {
    priors: Arc<[P]>,
    log_weights: Vec<f64>,
    alpha: f64,
    train_n: usize,
}

impl<P: Prior> PosteriorState<P> {
    /// Uniform weights over `priors`.
    pub fn uniform(priors: Vec<P>, train_n: usize) -> Result<Self> {
        if priors.is_empty() {
            return Err(EbError::InvalidArgument(
                "posterior state needs at least one prior".into(),
            ));
        }
        if train_n == 0 {
            return Err(EbError::InvalidArgument(
                "train_n must be at least 1".into(),
            ));
        }
        let lw = -(priors.len() as f64).ln();
        Ok(Self {
            log_weights: vec![lw; priors.len()],
            priors: priors.into(),
            alpha: 1.0,
            train_n,
        })
    }

    /// Candidates with explicit (unnormalized) log-weights.
    pub fn with_log_weights(
        priors: Vec<P>,
        mut log_weights: Vec<f64>,
        train_n: usize,
    ) -> Result<Self> {
        if priors.len() != log_weights.len() {
            return Err(EbError::LengthMismatch {
                left: priors.len(),
                right: log_weights.len(),
            });
        }
        let mut state = Self::uniform(priors, train_n)?;
        normalize_log_weights(&mut log_weights)?;
        state.log_weights = log_weights;
        Ok(state)
    }

    pub fn priors(&self) -> &[P] {
        &self.priors
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn train_n(&self) -> usize {
        self.train_n
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }

    pub fn support_bound(&self) -> f64 {
        self.priors.iter().map(P::support_bound).fold(0.0, f64::max)
    }

    /// Draws a prior from the current weights.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> &P {
        let w = self.weights();
        &self.priors[crate::model::sample_index(&w, rng)]
    }

    fn derived(&self, log_weights: Vec<f64>, alpha: f64) -> Self {
        Self {
            priors: Arc::clone(&self.priors),
            log_weights,
            alpha,
            train_n: self.train_n,
        }
    }
}

/// Shifts log-weights so that they log-sum-exp to zero.
pub fn normalize_log_weights(log_weights: &mut [f64]) -> Result<()> {
    let total = log_sum_exp(log_weights.iter().copied());
    if !total.is_finite() {
        return Err(EbError::ZeroLikelihood);
    }
    log_weights.iter_mut().for_each(|l| *l -= total);
    Ok(())
}

/// Builds the finite representation of `Π`: the components themselves for a
/// finite PoP, otherwise `mc_draws` i.i.d. draws with uniform weights.
pub fn init_state<R: Rng + ?Sized>(
    spec: &PopSpec,
    mc_draws: usize,
    train_n: usize,
    rng: &mut R,
) -> Result<PosteriorState<DiscretePrior>> {
    spec.validate()?;
    let priors = match &spec.kind {
        PopKind::Finite { components } => components.clone(),
        _ => {
            if mc_draws == 0 {
                return Err(EbError::InvalidArgument(
                    "mc_draws must be at least 1".into(),
                ));
            }
            (0..mc_draws)
                .map(|_| sample_prior(spec, rng))
                .collect::<Result<Vec<_>>>()?
        }
    };
    PosteriorState::uniform(priors, train_n)
}

/// Per-candidate log marginals and Bayes rules at the distinct values of a
/// data sequence.
struct CandidateTable<O> {
    values: Vec<O>,
    slot: Vec<usize>,
    /// `log_f[j][v] = log f_{G_j}(values[v])`
    log_f: Vec<Vec<f64>>,
    /// `mean[j][v] = θ_{G_j}(values[v])`, `NaN` where `f_{G_j} = 0`
    mean: Vec<Vec<f64>>,
}

impl<O: Copy + PartialOrd + std::fmt::Debug + Send + Sync> CandidateTable<O> {
    fn build<P: Prior<Obs = O>>(priors: &[P], xs: &[O]) -> Self {
        let (values, slot) = distinct_values(xs);
        let row = |g: &P| -> (Vec<f64>, Vec<f64>) {
            values
                .iter()
                .map(|v| {
                    let (lf, m) = g.log_marginal_and_mean(*v);
                    (lf, m.unwrap_or(f64::NAN))
                })
                .unzip()
        };
        let rows: Vec<(Vec<f64>, Vec<f64>)> = if priors.len() >= PARALLEL_CANDIDATES {
            priors.par_iter().map(row).collect()
        } else {
            priors.iter().map(row).collect()
        };
        let (log_f, mean) = rows.into_iter().unzip();
        Self {
            values,
            slot,
            log_f,
            mean,
        }
    }

    fn counts(&self) -> Vec<usize> {
        let mut c = vec![0usize; self.values.len()];
        self.slot.iter().for_each(|&s| c[s] += 1);
        c
    }

    /// `Σ_j p_j θ_j(v)` for every distinct value `v`, given normalized
    /// log-weights.
    fn mixed_means(&self, log_weights: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.values.len()];
        for (j, lw) in log_weights.iter().enumerate() {
            let p = lw.exp();
            if p == 0.0 {
                continue;
            }
            for (v, acc) in out.iter_mut().enumerate() {
                let m = self.mean[j][v];
                if m.is_nan() {
                    return Err(EbError::DegenerateSupport {
                        x: format!("{:?}", self.values[v]),
                    });
                }
                *acc += p * m;
            }
        }
        Ok(out)
    }

    fn expand(&self, per_value: &[f64]) -> Vec<f64> {
        self.slot.iter().map(|&s| per_value[s]).collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(EbError::InvalidArgument(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )))
    }
}

/// `log_weights[j] += α · Σ_i log f_{G_j}(X_i)`, renormalized.
pub fn posterior_update<P: Prior>(
    state: &PosteriorState<P>,
    xs: &[P::Obs],
    alpha: f64,
) -> Result<PosteriorState<P>> {
    check_alpha(alpha)?;
    let (values, slot) = distinct_values(xs);
    let mut counts = vec![0usize; values.len()];
    slot.iter().for_each(|&s| counts[s] += 1);
    let loglik = |g: &P| -> f64 {
        values
            .iter()
            .zip(&counts)
            .map(|(v, &c)| c as f64 * g.log_marginal(*v))
            .sum()
    };
    let logliks: Vec<f64> = if state.len() >= PARALLEL_CANDIDATES {
        state.priors.par_iter().map(loglik).collect()
    } else {
        state.priors.iter().map(loglik).collect()
    };
    let mut lw: Vec<f64> = state
        .log_weights
        .iter()
        .zip(&logliks)
        .map(|(w, l)| {
            if *w == f64::NEG_INFINITY {
                *w
            } else {
                w + alpha * l
            }
        })
        .collect();
    normalize_log_weights(&mut lw)?;
    Ok(state.derived(lw, alpha))
}

/// `Σ_j p_j θ_{G_j}(X_i)` under the state's current weights (no update).
pub fn mixture_posterior_mean<P: Prior>(
    state: &PosteriorState<P>,
    xs: &[P::Obs],
) -> Result<Vec<f64>> {
    let table = CandidateTable::build(&state.priors, xs);
    Ok(table.expand(&table.mixed_means(&state.log_weights)?))
}

/// The HB estimate `E_Π[θ_i | X^n]`: a full (`α = 1`) update of `state` on
/// `xs` followed by the posterior average of single-prior Bayes rules.
pub fn hb_estimate<P: Prior>(state: &PosteriorState<P>, xs: &[P::Obs]) -> Result<Vec<f64>> {
    alpha_hb_estimate(state, xs, 1.0)
}

/// α-posterior HB: update with exponent `alpha`, then average Bayes rules.
pub fn alpha_hb_estimate<P: Prior>(
    state: &PosteriorState<P>,
    xs: &[P::Obs],
    alpha: f64,
) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let table = CandidateTable::build(&state.priors, xs);
    let counts = table.counts();
    let mut lw: Vec<f64> = state
        .log_weights
        .iter()
        .zip(&table.log_f)
        .map(|(w, lf)| {
            if *w == f64::NEG_INFINITY {
                return *w;
            }
            w + alpha
                * counts
                    .iter()
                    .zip(lf)
                    .map(|(&c, l)| c as f64 * l)
                    .sum::<f64>()
        })
        .collect();
    normalize_log_weights(&mut lw)?;
    Ok(table.expand(&table.mixed_means(&lw)?))
}

/// Leave-one-out form of the HB estimate: `θ_{G_i}(X_i)` with
/// `G_i = E[G | X_{∖i}]` the posterior-mean prior given the other observations.
///
/// Equal to [`hb_estimate`] by the tower property; computed through a
/// genuinely different path (explicit mixture priors).
pub fn hb_estimate_loo<P: Prior>(state: &PosteriorState<P>, xs: &[P::Obs]) -> Result<Vec<f64>> {
    let table = CandidateTable::build(&state.priors, xs);
    let counts = table.counts();
    let mut per_value = Vec::with_capacity(table.values.len());
    for (u, value) in table.values.iter().enumerate() {
        let mut lw: Vec<f64> = state
            .log_weights
            .iter()
            .zip(&table.log_f)
            .map(|(w, lf)| {
                if *w == f64::NEG_INFINITY {
                    return *w;
                }
                let mut acc = *w;
                for (v, &c) in counts.iter().enumerate() {
                    let c = if v == u { c - 1 } else { c };
                    if c > 0 {
                        acc += c as f64 * lf[v];
                    }
                }
                acc
            })
            .collect();
        normalize_log_weights(&mut lw)?;
        let (components, mixing): (Vec<P>, Vec<f64>) = state
            .priors
            .iter()
            .zip(&lw)
            .filter(|(_, l)| **l > f64::NEG_INFINITY)
            .map(|(g, l)| (g.clone(), l.exp()))
            .unzip();
        let g_u = P::mixture(&components, &mixing)?;
        let (_, mean) = g_u.log_marginal_and_mean(*value);
        per_value.push(mean.ok_or_else(|| EbError::DegenerateSupport {
            x: format!("{value:?}"),
        })?);
    }
    Ok(table.expand(&per_value))
}

/// Sparse empirical distribution `μ` of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure<O> {
    pub values: Vec<O>,
    pub counts: Vec<usize>,
    pub len: usize,
}

impl<O: Copy + PartialOrd> EmpiricalMeasure<O> {
    pub fn from_sequence(xs: &[O]) -> Self {
        let (values, slot) = distinct_values(xs);
        let mut counts = vec![0usize; values.len()];
        slot.iter().for_each(|&s| counts[s] += 1);
        Self {
            values,
            counts,
            len: xs.len(),
        }
    }

    /// `μ(values[v])`.
    pub fn mass(&self, v: usize) -> f64 {
        self.counts[v] as f64 / self.len as f64
    }
}

/// `f_{Π,n}(X_i, μ)`: the length-`n` HB map evaluated at the empirical
/// distribution of a sequence of any length,
///
/// ```text
/// f_{Π,n}(x, μ) = Σ_j q_j θ_{G_j}(x),  q_j ∝ w_j exp(n Σ_x μ(x) log f_{G_j}(x))
/// ```
///
/// with `n = state.train_n()`. Depends on the input only through `μ`, so
/// repeating the sequence leaves every output unchanged.
pub fn lengen_estimate<P: Prior>(state: &PosteriorState<P>, xs: &[P::Obs]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(EbError::InvalidArgument("empty input sequence".into()));
    }
    let mu = EmpiricalMeasure::from_sequence(xs);
    let n = state.train_n as f64;
    let row = |(g, w): (&P, &f64)| -> (f64, Vec<f64>) {
        let mut log_q = *w;
        let mut means = Vec::with_capacity(mu.values.len());
        for (v, x) in mu.values.iter().enumerate() {
            let (lf, m) = g.log_marginal_and_mean(*x);
            if log_q > f64::NEG_INFINITY {
                log_q += n * mu.mass(v) * lf;
            }
            means.push(m.unwrap_or(f64::NAN));
        }
        (log_q, means)
    };
    let pairs = state.priors.iter().zip(state.log_weights.iter());
    let rows: Vec<(f64, Vec<f64>)> = if state.len() >= PARALLEL_CANDIDATES {
        state
            .priors
            .par_iter()
            .zip(state.log_weights.par_iter())
            .map(row)
            .collect()
    } else {
        pairs.map(row).collect()
    };
    let log_norm = log_sum_exp(rows.iter().map(|r| r.0));
    if !log_norm.is_finite() {
        return Err(EbError::ZeroLikelihood);
    }
    let mut per_value = vec![0.0; mu.values.len()];
    for (log_q, means) in &rows {
        let q = (log_q - log_norm).exp();
        if q == 0.0 {
            continue;
        }
        for (acc, m) in per_value.iter_mut().zip(means) {
            *acc += q * m;
        }
    }
    let (_, slot) = distinct_values(xs);
    Ok(slot.iter().map(|&s| per_value[s]).collect())
}

/// Predictive pmf `Σ_j p_j f_{G_j}` on `0..=x_max` under the state's weights.
pub fn posterior_predictive(state: &PosteriorState<DiscretePrior>, x_max: u64) -> TruncatedPmf {
    let mut values = vec![0.0; x_max as usize + 1];
    for (g, lw) in state.priors.iter().zip(&state.log_weights) {
        let p = lw.exp();
        if p == 0.0 {
            continue;
        }
        for (x, acc) in values.iter_mut().enumerate() {
            *acc += p * g.marginal(x as u64);
        }
    }
    TruncatedPmf::from_values(values)
}

/// [`hb_estimate`] as an [`Estimator`].
#[derive(Debug, Clone)]
pub struct HbEstimator<P: Prior> {
    pub state: PosteriorState<P>,
}

impl<P: Prior> Estimator<P::Obs> for HbEstimator<P> {
    fn name(&self) -> String {
        "hb".into()
    }

    fn estimate(&self, xs: &[P::Obs]) -> Result<Vec<f64>> {
        hb_estimate(&self.state, xs)
    }
}

/// [`lengen_estimate`] as an [`Estimator`].
#[derive(Debug, Clone)]
pub struct LengenEstimator<P: Prior> {
    pub state: PosteriorState<P>,
}

impl<P: Prior> Estimator<P::Obs> for LengenEstimator<P> {
    fn name(&self) -> String {
        "hb_lengen".into()
    }

    fn estimate(&self, xs: &[P::Obs]) -> Result<Vec<f64>> {
        lengen_estimate(&self.state, xs)
    }
}

/// [`alpha_hb_estimate`] at a fixed exponent as an [`Estimator`].
#[derive(Debug, Clone)]
pub struct AlphaHbEstimator<P: Prior> {
    pub state: PosteriorState<P>,
    pub alpha: f64,
}

impl<P: Prior> Estimator<P::Obs> for AlphaHbEstimator<P> {
    fn name(&self) -> String {
        format!("hb_alpha_{}", self.alpha)
    }

    fn estimate(&self, xs: &[P::Obs]) -> Result<Vec<f64>> {
        alpha_hb_estimate(&self.state, xs, self.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{bayes_posterior_mean, poisson_logpmf};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pm(l: f64) -> DiscretePrior {
        DiscretePrior::point_mass(l, 6.0).unwrap()
    }

    #[test]
    fn init_state_finite_and_mc() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let two = init_state(&PopSpec::finite(vec![pm(1.0), pm(5.0)]), 0, 10, &mut rng).unwrap();
        assert_eq!(two.len(), 2);
        for w in two.weights() {
            assert!((w - 0.5).abs() < 1e-15);
        }
        let one = init_state(&PopSpec::finite(vec![pm(1.0)]), 0, 10, &mut rng).unwrap();
        assert_eq!(one.weights(), vec![1.0]);
        let mc = init_state(&PopSpec::uniform_dirichlet(5.0, 3), 4096, 10, &mut rng).unwrap();
        assert_eq!(mc.len(), 4096);
        assert!(init_state(&PopSpec::uniform_dirichlet(5.0, 3), 0, 10, &mut rng).is_err());
    }

    #[test]
    fn update_two_point_masses() {
        let state = PosteriorState::uniform(vec![pm(1.0), pm(5.0)], 3).unwrap();
        let xs = [1u64, 1, 1];
        let post = posterior_update(&state, &xs, 1.0).unwrap();
        let l1: f64 = (3.0 * poisson_logpmf(1, 1.0)).exp();
        let l2: f64 = (3.0 * poisson_logpmf(1, 5.0)).exp();
        let w = post.weights();
        assert!((w[0] - l1 / (l1 + l2)).abs() < 1e-14);
        assert_eq!(post.alpha(), 1.0);
    }

    #[test]
    fn update_single_prior_keeps_weight() {
        let state = PosteriorState::uniform(vec![pm(2.0)], 4).unwrap();
        let post = posterior_update(&state, &[0, 3, 7, 2], 0.5).unwrap();
        assert_eq!(post.weights(), vec![1.0]);
    }

    #[test]
    fn update_zero_likelihood_errors() {
        let state = PosteriorState::uniform(vec![pm(0.0), pm(0.0)], 2).unwrap();
        assert!(matches!(
            posterior_update(&state, &[0, 1], 1.0),
            Err(EbError::ZeroLikelihood)
        ));
        assert!(posterior_update(&state, &[0], 0.0).is_err());
        assert!(posterior_update(&state, &[0], 1.5).is_err());
    }

    #[test]
    fn tiny_alpha_recovers_prior_weights() {
        let init = PosteriorState::with_log_weights(
            vec![pm(0.5), pm(2.0), pm(4.0)],
            vec![0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()],
            5,
        )
        .unwrap();
        let post = posterior_update(&init, &[0, 4, 6, 2, 1], 1e-8).unwrap();
        for (a, b) in post.weights().iter().zip(init.weights()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn single_prior_hb_is_bayes_rule() {
        let g = DiscretePrior::new(vec![0.5, 3.0], vec![0.4, 0.6], 6.0).unwrap();
        let state = PosteriorState::uniform(vec![g.clone()], 4).unwrap();
        let xs = [0u64, 2, 5, 1];
        for est in [
            hb_estimate(&state, &xs).unwrap(),
            hb_estimate_loo(&state, &xs).unwrap(),
        ] {
            for (e, x) in est.iter().zip(&xs) {
                assert!((e - bayes_posterior_mean(&g, *x).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loo_single_observation_uses_prior_mixture() {
        let comps = vec![
            pm(1.0),
            pm(4.0),
            DiscretePrior::new(vec![0.0, 2.0], vec![0.5, 0.5], 6.0).unwrap(),
        ];
        let state = PosteriorState::uniform(comps.clone(), 1).unwrap();
        let mix = DiscretePrior::mixture(&comps, &[1.0 / 3.0; 3]).unwrap();
        for x in 0..6u64 {
            let got = hb_estimate_loo(&state, &[x]).unwrap()[0];
            assert!((got - bayes_posterior_mean(&mix, x).unwrap()).abs() < 1e-12);
            assert!((got - hb_estimate(&state, &[x]).unwrap()[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn lengen_at_train_length_is_hb() {
        let state = PosteriorState::uniform(vec![pm(1.0), pm(2.5), pm(4.0)], 5).unwrap();
        let xs = [2u64, 0, 3, 3, 1];
        let a = lengen_estimate(&state, &xs).unwrap();
        let b = hb_estimate(&state, &xs).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_candidate_is_ignored_after_update() {
        // δ_0 cannot produce X = 2, so it drops out of the posterior
        let state = PosteriorState::uniform(vec![pm(0.0), pm(3.0)], 2).unwrap();
        let out = hb_estimate(&state, &[2, 0]).unwrap();
        assert!((out[0] - 3.0).abs() < 1e-12);
        let loo = hb_estimate_loo(&state, &[2, 0]).unwrap();
        assert!((loo[0] - out[0]).abs() < 1e-12);
        assert!((loo[1] - out[1]).abs() < 1e-12);
    }
}
