//! Comparison estimators for the Poisson model.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bench::Dataset;
use crate::error::{EbError, Result};
use crate::mixture::{log_sum_exp, poisson_logpmf, DiscretePrior};
use crate::model::{distinct_values, Estimator, Prior};

/// `θ_{G0}(X_i)` coordinatewise.
pub fn oracle_bayes<P: Prior>(g0: &P, xs: &[P::Obs]) -> Result<Vec<f64>> {
    let (values, slot) = distinct_values(xs);
    let means = values
        .iter()
        .map(|v| {
            g0.log_marginal_and_mean(*v)
                .1
                .ok_or_else(|| EbError::DegenerateSupport {
                    x: format!("{v:?}"),
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(slot.iter().map(|&s| means[s]).collect())
}

#[derive(Debug, Clone)]
pub struct OracleBayes<P: Prior> {
    pub prior: P,
}

impl<P: Prior> Estimator<P::Obs> for OracleBayes<P> {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn estimate(&self, xs: &[P::Obs]) -> Result<Vec<f64>> {
        oracle_bayes(&self.prior, xs)
    }
}

/// Robbins' rule `(x + 1) N(x + 1) / max(N(x), 1)` clipped to
/// `[0, clip_bound]`, with `clip_bound = max(X) + 1` when not given.
pub fn robbins(xs: &[u64], clip_bound: Option<f64>) -> Vec<f64> {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for &x in xs {
        *counts.entry(x).or_default() += 1;
    }
    let clip = clip_bound.unwrap_or_else(|| xs.iter().max().map_or(1.0, |m| *m as f64 + 1.0));
    let count = |x: u64| counts.get(&x).copied().unwrap_or(0) as f64;
    xs.iter()
        .map(|&x| {
            let v = (x as f64 + 1.0) * count(x + 1) / count(x).max(1.0);
            v.clamp(0.0, clip)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Robbins {
    pub clip_bound: Option<f64>,
}

impl Estimator<u64> for Robbins {
    fn name(&self) -> String {
        "robbins".into()
    }

    fn estimate(&self, xs: &[u64]) -> Result<Vec<f64>> {
        Ok(robbins(xs, self.clip_bound))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpmleConfig {
    pub grid_step: f64,
    pub max_iters: usize,
    /// Stop once the KKT residual is at most `1 + tol`.
    pub tol: f64,
}

impl NpmleConfig {
    /// Step `0.025·A`, at most 20000 iterations, KKT tolerance `1e-4`.
    pub fn for_support(support_bound: f64) -> Self {
        Self {
            grid_step: 0.025 * support_bound,
            max_iters: 20_000,
            tol: 1e-4,
        }
    }

    pub fn validate(&self, support_bound: f64) -> Result<()> {
        if !(self.grid_step > 0.0 && self.grid_step <= support_bound) {
            return Err(EbError::InvalidArgument(format!(
                "grid step {} must lie in (0, A]",
                self.grid_step
            )));
        }
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(EbError::InvalidArgument(
                "max_iters >= 1 and tol > 0 required".into(),
            ));
        }
        Ok(())
    }
}

/// Result of [`npmle_grid`].
#[derive(Debug, Clone)]
pub struct NpmleFit {
    /// Fitted prior on the full grid (zero weights kept).
    pub prior: DiscretePrior,
    /// `Σ_i log f_G(X_i)` at the start and after every EM step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

/// `{0, step, 2·step, …}` up to and including `A`.
fn npmle_grid_atoms(support_bound: f64, step: f64) -> Vec<f64> {
    let count = (support_bound / step).round() as usize;
    let mut atoms: Vec<f64> = (0..=count)
        .map(|j| (j as f64 * step).min(support_bound))
        .collect();
    if *atoms.last().unwrap() < support_bound {
        atoms.push(support_bound);
    }
    atoms
}

/// Grid NPMLE of the mixing distribution by EM.
///
/// The EM map `w_l ← w_l · (1/n) Σ_i Poi(X_i; λ_l) / f_w(X_i)` never decreases
/// the log-likelihood; its fixed points satisfy the KKT conditions checked by
/// [`npmle_kkt_residual`].
pub fn npmle_grid(xs: &[u64], cfg: &NpmleConfig, support_bound: f64) -> Result<NpmleFit> {
    if xs.is_empty() {
        return Err(EbError::InvalidArgument(
            "NPMLE needs at least one observation".into(),
        ));
    }
    cfg.validate(support_bound)?;
    let atoms = npmle_grid_atoms(support_bound, cfg.grid_step);
    let (values, slot) = distinct_values(xs);
    let mut counts = vec![0.0f64; values.len()];
    slot.iter().for_each(|&s| counts[s] += 1.0);
    let n = xs.len() as f64;

    // log Poi(values[v]; atoms[l])
    let log_lik: Vec<Vec<f64>> = values
        .iter()
        .map(|&x| atoms.iter().map(|&a| poisson_logpmf(x, a)).collect())
        .collect();

    let m = atoms.len();
    let mut log_w = vec![-(m as f64).ln(); m];
    let log_marginals = |log_w: &[f64]| -> Vec<f64> {
        log_lik
            .iter()
            .map(|row| log_sum_exp(row.iter().zip(log_w).map(|(l, w)| l + w)))
            .collect()
    };
    let objective = |lf: &[f64]| -> f64 { lf.iter().zip(&counts).map(|(l, c)| c * l).sum() };

    let mut lf = log_marginals(&log_w);
    let mut trace = vec![objective(&lf)];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        // log of (1/n) Σ_i Poi(X_i; λ_l) / f(X_i); its maximum is the KKT residual
        let log_ratio: Vec<f64> = (0..m)
            .map(|l| {
                log_sum_exp(
                    log_lik
                        .iter()
                        .zip(&lf)
                        .zip(&counts)
                        .map(|((row, f), c)| c.ln() + row[l] - f),
                ) - n.ln()
            })
            .collect();
        let residual = log_ratio
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            .exp();
        if residual <= 1.0 + cfg.tol {
            break;
        }
        for (lw, r) in log_w.iter_mut().zip(&log_ratio) {
            if *lw > f64::NEG_INFINITY {
                *lw += r;
            }
        }
        let total = log_sum_exp(log_w.iter().copied());
        log_w.iter_mut().for_each(|w| *w -= total);
        lf = log_marginals(&log_w);
        trace.push(objective(&lf));
        iterations += 1;
    }
    let weights: Vec<f64> = log_w.iter().map(|w| w.exp()).collect();
    Ok(NpmleFit {
        prior: DiscretePrior::from_unnormalized(atoms, weights, support_bound)?,
        log_likelihood: trace,
        iterations,
    })
}

/// `max_λ (1/n) Σ_i Poi(X_i; λ) / f_G(X_i)` over the given atoms. Equals one
/// at an exact NPMLE over those atoms, and is at least one otherwise.
pub fn npmle_kkt_residual(xs: &[u64], prior: &DiscretePrior, atoms: &[f64]) -> f64 {
    let (values, slot) = distinct_values(xs);
    let mut counts = vec![0.0f64; values.len()];
    slot.iter().for_each(|&s| counts[s] += 1.0);
    let lf: Vec<f64> = values.iter().map(|&x| prior.log_marginal(x)).collect();
    let n = xs.len() as f64;
    atoms
        .iter()
        .map(|&a| {
            values
                .iter()
                .zip(&lf)
                .zip(&counts)
                .map(|((&x, f), c)| c * (poisson_logpmf(x, a) - f).exp())
                .sum::<f64>()
                / n
        })
        .fold(0.0, f64::max)
}

/// NPMLE plug-in: `θ_{Ĝ}(X_i)` with `Ĝ` fitted on the same sequence.
#[derive(Debug, Clone)]
pub struct NpmleEstimator {
    pub config: NpmleConfig,
    pub support_bound: f64,
}

impl Estimator<u64> for NpmleEstimator {
    fn name(&self) -> String {
        "npmle".into()
    }

    fn estimate(&self, xs: &[u64]) -> Result<Vec<f64>> {
        let fit = npmle_grid(xs, &self.config, self.support_bound)?;
        oracle_bayes(&fit.prior, xs)
    }
}

/// Indices of `xs` sorted by value, ties broken by position.
fn sorting_permutation(xs: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by_key(|&i| (xs[i], i));
    order
}

/// Closed-form minimizer of the squared training error over all
/// permutation-equivariant functions, for a finite training set.
///
/// Batches are indexed by their type (sorted values). A query is answered by
/// averaging the aligned `θ` of every training batch of the same type; with
/// no such batch, the pooled mean of all training `θ` is returned.
#[derive(Debug, Clone)]
pub struct ErmTypeMatch {
    n: usize,
    support_bound: f64,
    by_type: HashMap<Vec<u64>, Vec<Vec<f64>>>,
    fallback: f64,
}

impl ErmTypeMatch {
    pub fn new(train: &Dataset) -> Self {
        let mut by_type: HashMap<Vec<u64>, Vec<Vec<f64>>> = HashMap::new();
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in &train.batches {
            let order = sorting_permutation(&batch.x);
            let key: Vec<u64> = order.iter().map(|&i| batch.x[i]).collect();
            // θ listed in sorted-x order
            let aligned: Vec<f64> = order.iter().map(|&i| batch.theta[i]).collect();
            by_type.entry(key).or_default().push(aligned);
            total += batch.theta.iter().sum::<f64>();
            count += batch.theta.len();
        }
        Self {
            n: train.n,
            support_bound: train.pop.support_bound,
            by_type,
            fallback: if count > 0 { total / count as f64 } else { 0.0 },
        }
    }

    /// Number of training batches sharing the type of `xs`.
    pub fn matches(&self, xs: &[u64]) -> usize {
        let mut key = xs.to_vec();
        key.sort_unstable();
        self.by_type.get(&key).map_or(0, Vec::len)
    }

    pub fn estimate(&self, xs: &[u64]) -> Result<Vec<f64>> {
        if xs.len() != self.n {
            return Err(EbError::LengthMismatch {
                left: xs.len(),
                right: self.n,
            });
        }
        let order = sorting_permutation(xs);
        let key: Vec<u64> = order.iter().map(|&i| xs[i]).collect();
        let Some(batches) = self.by_type.get(&key) else {
            return Ok(vec![self.fallback.clamp(0.0, self.support_bound); xs.len()]);
        };
        let mut out = vec![0.0; xs.len()];
        for aligned in batches {
            for (rank, &i) in order.iter().enumerate() {
                out[i] += aligned[rank];
            }
        }
        let m = batches.len() as f64;
        out.iter_mut()
            .for_each(|v| *v = (*v / m).clamp(0.0, self.support_bound));
        Ok(out)
    }
}

impl Estimator<u64> for ErmTypeMatch {
    fn name(&self) -> String {
        "erm_type_match".into()
    }

    fn estimate(&self, xs: &[u64]) -> Result<Vec<f64>> {
        ErmTypeMatch::estimate(self, xs)
    }
}

/// Convenience wrapper: build the type index and answer a single query.
pub fn erm_type_match(train: &Dataset, xs: &[u64]) -> Result<Vec<f64>> {
    ErmTypeMatch::new(train).estimate(xs)
}
