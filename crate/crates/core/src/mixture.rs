//! Poisson mixtures over discrete priors.
//!
//! A [`DiscretePrior`] `G = Σ_j w_j δ_{λ_j}` induces the marginal pmf
//! `f_G(x) = Σ_j w_j Poi(x; λ_j)` and the Bayes rule under squared loss
//! `θ_G(x) = E_G[θ | X = x]`. Everything likelihood-related is evaluated in the
//! log domain; probabilities are only materialized in [`TruncatedPmf`].

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{EbError, Result};

/// Tolerance on `Σ w_j = 1` accepted by the constructors before renormalizing.
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// `ln(x!)`.
#[inline]
pub fn ln_factorial(x: u64) -> f64 {
    statrs::function::factorial::ln_factorial(x)
}

/// `log Poi(x; λ)`. `λ = 0` is the point mass at zero, so the result is `0`
/// for `x = 0` and `-∞` otherwise.
pub fn poisson_logpmf(x: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if x == 0 {
        return -lambda;
    }
    -lambda + x as f64 * lambda.ln() - ln_factorial(x)
}

/// Numerically stable `log Σ exp(v)`. Returns `-∞` for an empty input or when
/// every term is `-∞`.
pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let max = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = iter.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Default truncation point for pmfs of Poisson mixtures with atoms in `[0, A]`.
///
/// `⌈A + 20·√(A+1) + 50⌉` leaves a Poisson tail below `1e-12` for every rate
/// `λ ≤ A`.
pub fn default_x_max(support_bound: f64) -> u64 {
    (support_bound + 20.0 * (support_bound + 1.0).sqrt() + 50.0).ceil() as u64
}

#[derive(Debug, Clone, Deserialize)]
struct RawPrior {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    support_bound: f64,
}

impl TryFrom<RawPrior> for DiscretePrior {
    type Error = EbError;

    fn try_from(raw: RawPrior) -> Result<Self> {
        DiscretePrior::new(raw.atoms, raw.weights, raw.support_bound)
    }
}

/// A finitely supported prior on `[0, A]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrior")]
pub struct DiscretePrior {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    support_bound: f64,
}

impl DiscretePrior {
    /// Builds a prior, renormalizing weights whose sum is within `1e-9` of one.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>, support_bound: f64) -> Result<Self> {
        let sum = validate_weights(&atoms, &weights)?;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(EbError::InvalidPrior(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Self::build(atoms, weights, sum, support_bound)
    }

    /// Builds a prior from nonnegative weights of any positive total.
    pub fn from_unnormalized(
        atoms: Vec<f64>,
        weights: Vec<f64>,
        support_bound: f64,
    ) -> Result<Self> {
        let sum = validate_weights(&atoms, &weights)?;
        if sum <= 0.0 {
            return Err(EbError::InvalidPrior("weights sum to zero".into()));
        }
        Self::build(atoms, weights, sum, support_bound)
    }

    pub fn point_mass(lambda: f64, support_bound: f64) -> Result<Self> {
        Self::new(vec![lambda], vec![1.0], support_bound)
    }

    /// Equal weights on the given atoms.
    pub fn uniform(atoms: Vec<f64>, support_bound: f64) -> Result<Self> {
        let k = atoms.len();
        Self::from_unnormalized(atoms, vec![1.0; k], support_bound)
    }

    fn build(atoms: Vec<f64>, mut weights: Vec<f64>, sum: f64, support_bound: f64) -> Result<Self> {
        if !(support_bound > 0.0 && support_bound.is_finite()) {
            return Err(EbError::InvalidPrior(format!(
                "support bound must be positive and finite, got {support_bound}"
            )));
        }
        if let Some(bad) = atoms
            .iter()
            .find(|a| !(a.is_finite() && **a >= 0.0 && **a <= support_bound))
        {
            return Err(EbError::InvalidPrior(format!(
                "atom {bad} outside [0, {support_bound}]"
            )));
        }
        if sum != 1.0 {
            weights.iter_mut().for_each(|w| *w /= sum);
        }
        Ok(Self {
            atoms,
            weights,
            support_bound,
        })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn support_bound(&self) -> f64 {
        self.support_bound
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn min_atom(&self) -> f64 {
        self.atoms.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_atom(&self) -> f64 {
        self.atoms.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `E_G[θ^p]`.
    pub fn moment(&self, p: u32) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * a.powi(p as i32))
            .sum()
    }

    /// The same measure with atoms sorted and exact duplicates merged.
    /// Zero-weight atoms are dropped unless nothing else remains.
    pub fn simplified(&self) -> Self {
        let mut pairs: Vec<(f64, f64)> = self
            .atoms
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .filter(|(_, w)| *w > 0.0)
            .collect();
        if pairs.is_empty() {
            return self.clone();
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (a, w) in pairs {
            if atoms.last() == Some(&a) {
                *weights.last_mut().unwrap() += w;
            } else {
                atoms.push(a);
                weights.push(w);
            }
        }
        Self {
            atoms,
            weights,
            support_bound: self.support_bound,
        }
    }

    /// `Σ_j c_j G_j` for mixing weights `c` (normalized internally).
    pub fn mixture(components: &[DiscretePrior], mixing: &[f64]) -> Result<Self> {
        if components.len() != mixing.len() {
            return Err(EbError::LengthMismatch {
                left: components.len(),
                right: mixing.len(),
            });
        }
        let support_bound = components
            .iter()
            .map(|g| g.support_bound)
            .fold(0.0, f64::max);
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for (g, c) in components.iter().zip(mixing) {
            for (a, w) in g.atoms.iter().zip(&g.weights) {
                atoms.push(*a);
                weights.push(c * w);
            }
        }
        Self::from_unnormalized(atoms, weights, support_bound)
    }

    /// `log f_G(x)`.
    pub fn log_marginal(&self, x: u64) -> f64 {
        log_sum_exp(
            self.atoms
                .iter()
                .zip(&self.weights)
                .map(|(a, w)| w.ln() + poisson_logpmf(x, *a)),
        )
    }

    /// `f_G(x)`.
    pub fn marginal(&self, x: u64) -> f64 {
        self.log_marginal(x).exp()
    }

    /// `log Σ_j w_j λ_j^p Poi(x; λ_j)`, the unnormalized log posterior moment.
    fn log_moment_numerator(&self, x: u64, p: u32) -> f64 {
        log_sum_exp(
            self.atoms
                .iter()
                .zip(&self.weights)
                .filter(|(a, _)| **a > 0.0 || p == 0)
                .map(|(a, w)| w.ln() + p as f64 * a.ln() + poisson_logpmf(x, *a)),
        )
    }

    /// `log f_G(x)` together with `θ_G(x)` (or `None` when `f_G(x) = 0`).
    pub fn log_marginal_and_mean(&self, x: u64) -> (f64, Option<f64>) {
        let log_f = self.log_marginal(x);
        if log_f == f64::NEG_INFINITY {
            return (log_f, None);
        }
        let mean = (self.log_moment_numerator(x, 1) - log_f).exp();
        (log_f, Some(mean.clamp(self.min_atom(), self.max_atom())))
    }
}

fn validate_weights(atoms: &[f64], weights: &[f64]) -> Result<f64> {
    if atoms.len() != weights.len() {
        return Err(EbError::LengthMismatch {
            left: atoms.len(),
            right: weights.len(),
        });
    }
    if atoms.is_empty() {
        return Err(EbError::InvalidPrior(
            "prior needs at least one atom".into(),
        ));
    }
    if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(EbError::InvalidPrior(format!("invalid weight {bad}")));
    }
    Ok(weights.iter().sum())
}

/// Probabilities of a distribution on `{0, …, x_max}` plus the mass left
/// beyond `x_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedPmf {
    pub values: Vec<f64>,
    pub x_max: u64,
    pub tail_mass_bound: f64,
}

impl TruncatedPmf {
    /// Wraps probabilities of a distribution whose total mass is one; the
    /// tail is what `values` leaves unaccounted for.
    pub fn from_values(values: Vec<f64>) -> Self {
        let total: f64 = values.iter().sum();
        let x_max = values.len().saturating_sub(1) as u64;
        Self {
            values,
            x_max,
            tail_mass_bound: (1.0 - total).max(0.0),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() + self.tail_mass_bound
    }
}

/// `f_G` on `0..=x_max`.
pub fn marginal_pmf(prior: &DiscretePrior, x_max: u64) -> TruncatedPmf {
    let values = (0..=x_max).map(|x| prior.marginal(x)).collect();
    TruncatedPmf::from_values(values)
}

/// `θ_G(x) = Σ_j w_j λ_j Poi(x; λ_j) / f_G(x)`.
pub fn bayes_posterior_mean(prior: &DiscretePrior, x: u64) -> Result<f64> {
    posterior_moment(prior, x, 1)
}

/// `θ_G(x) = (x + 1) f_G(x + 1) / f_G(x)`, the ratio form of the Bayes rule.
pub fn bayes_posterior_mean_ratio(prior: &DiscretePrior, x: u64) -> Result<f64> {
    let log_f = prior.log_marginal(x);
    if log_f == f64::NEG_INFINITY {
        return Err(EbError::DegenerateSupport { x: x.to_string() });
    }
    let log_next = prior.log_marginal(x + 1);
    Ok(((x as f64 + 1.0).ln() + log_next - log_f).exp())
}

/// `E_G[θ^p | X = x]`.
pub fn posterior_moment(prior: &DiscretePrior, x: u64, p: u32) -> Result<f64> {
    let log_f = prior.log_marginal(x);
    if log_f == f64::NEG_INFINITY {
        return Err(EbError::DegenerateSupport { x: x.to_string() });
    }
    Ok((prior.log_moment_numerator(x, p) - log_f).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DivergenceKind {
    /// Total variation `½ Σ |p − q|`.
    Tv,
    /// Squared Hellinger `Σ (√p − √q)²`, ranging over `[0, 2]`.
    H2,
    /// Kullback-Leibler `Σ p log(p/q)`.
    Kl,
    /// Pearson `χ²(P‖Q) = Σ (p − q)² / q`.
    Chi2,
}

/// Divergence between two pmfs on the same truncation range. KL and χ² are
/// `+∞` whenever `Q(x) = 0 < P(x)`; terms with `P(x) = Q(x) = 0` vanish.
pub fn divergence(p: &TruncatedPmf, q: &TruncatedPmf, kind: DivergenceKind) -> Result<f64> {
    if p.values.len() != q.values.len() {
        return Err(EbError::LengthMismatch {
            left: p.values.len(),
            right: q.values.len(),
        });
    }
    let pairs = p.values.iter().zip(&q.values);
    let value = match kind {
        DivergenceKind::Tv => 0.5 * pairs.map(|(a, b)| (a - b).abs()).sum::<f64>(),
        DivergenceKind::H2 => pairs.map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum(),
        DivergenceKind::Kl => {
            let mut acc = 0.0;
            for (&a, &b) in pairs {
                if a == 0.0 {
                    continue;
                }
                if b == 0.0 {
                    return Ok(f64::INFINITY);
                }
                acc += a * (a / b).ln();
            }
            acc.max(0.0)
        }
        DivergenceKind::Chi2 => {
            let mut acc = 0.0;
            for (&a, &b) in pairs {
                if b == 0.0 {
                    if a == 0.0 {
                        continue;
                    }
                    return Ok(f64::INFINITY);
                }
                acc += (a - b).powi(2) / b;
            }
            acc
        }
    };
    Ok(value)
}

/// Upper bound on `TV(Poi(μ), Poi(ν))`, exact up to the (tiny) tail beyond
/// the default truncation point, which is counted in full.
pub fn poisson_tv(mu: f64, nu: f64) -> f64 {
    if mu == nu {
        return 0.0;
    }
    let x_max = default_x_max(mu.max(nu));
    let mut diff = 0.0;
    let mut mass_p = 0.0;
    let mut mass_q = 0.0;
    for x in 0..=x_max {
        let p = poisson_logpmf(x, mu).exp();
        let q = poisson_logpmf(x, nu).exp();
        diff += (p - q).abs();
        mass_p += p;
        mass_q += q;
    }
    let tail = (1.0 - mass_p).max(0.0) + (1.0 - mass_q).max(0.0);
    (0.5 * (diff + tail)).min(1.0)
}

/// Closed form `χ²(Poi(λ) ‖ Poi(λ')) = exp((λ − λ')² / λ') − 1`.
pub fn poisson_chi2(lambda: f64, lambda_ref: f64) -> f64 {
    if lambda_ref == 0.0 {
        return if lambda == 0.0 { 0.0 } else { f64::INFINITY };
    }
    ((lambda - lambda_ref).powi(2) / lambda_ref).exp_m1()
}

/// `χ²(w ‖ w')` between two weight vectors of equal length.
fn weights_chi2(w: &[f64], w_ref: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in w.iter().zip(w_ref) {
        if b == 0.0 {
            if a == 0.0 {
                continue;
            }
            return f64::INFINITY;
        }
        acc += a * a / b;
    }
    (acc - 1.0).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureBounds {
    pub tv_bound: f64,
    pub chi2_bound: f64,
}

/// Index-paired bounds on `TV(f_{G1}, f_{G2})` and `χ²(f_{G1} ‖ f_{G2})` for
/// two priors with the same number of atoms.
pub fn mixture_divergence_bounds(g1: &DiscretePrior, g2: &DiscretePrior) -> Result<MixtureBounds> {
    if g1.len() != g2.len() {
        return Err(EbError::LengthMismatch {
            left: g1.len(),
            right: g2.len(),
        });
    }
    let weight_l1: f64 = g1
        .weights
        .iter()
        .zip(&g2.weights)
        .map(|(a, b)| (a - b).abs())
        .sum();
    let max_tv = g1
        .atoms
        .iter()
        .zip(&g2.atoms)
        .map(|(a, b)| poisson_tv(*a, *b))
        .fold(0.0, f64::max);
    let max_chi2 = g1
        .atoms
        .iter()
        .zip(&g2.atoms)
        .map(|(a, b)| poisson_chi2(*a, *b))
        .fold(0.0, f64::max);
    // (1 + a)(1 + b) - 1 without cancellation
    let weight_chi2 = weights_chi2(&g1.weights, &g2.weights);
    let chi2_bound = if weight_chi2.is_infinite() || max_chi2.is_infinite() {
        f64::INFINITY
    } else {
        weight_chi2 + max_chi2 + weight_chi2 * max_chi2
    };
    Ok(MixtureBounds {
        tv_bound: weight_l1 + max_tv,
        chi2_bound,
    })
}

/// Relative size of a Lanczos coefficient below which the measure is treated
/// as exhausted.
const LANCZOS_BREAKDOWN: f64 = 1e-10;

/// A prior with at most `⌈(L+1)/2⌉` atoms whose moments of order `0..=L`
/// coincide with those of `prior`.
///
/// The nodes and weights are the Gauss quadrature rule of `prior`, obtained
/// from its Jacobi matrix. The recurrence coefficients come from a Lanczos
/// iteration with full reorthogonalization run directly on the atoms of
/// `prior`, which is the three-term recurrence of its orthogonal polynomials
/// without forming the ill-conditioned Hankel moment matrix. If the prior has
/// no more distinct atoms than requested nodes it is returned (merged) as is.
pub fn moment_match(prior: &DiscretePrior, matched_moments: u32) -> Result<DiscretePrior> {
    if matched_moments == 0 {
        return Err(EbError::InvalidArgument(
            "number of matched moments must be at least 1".into(),
        ));
    }
    let base = prior.simplified();
    let nodes = (matched_moments as usize + 2) / 2;
    if base.len() <= nodes {
        return Ok(base);
    }

    // Lanczos on diag(atoms) with starting vector sqrt(weights).
    let s = base.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(nodes);
    let mut diag = Vec::with_capacity(nodes);
    let mut off = Vec::with_capacity(nodes);
    let scale = base.max_atom().max(1e-300);
    let mut q: Vec<f64> = base.weights.iter().map(|w| w.sqrt()).collect();
    for step in 0..nodes {
        let mut v: Vec<f64> = q.iter().zip(&base.atoms).map(|(qi, a)| qi * a).collect();
        let a_k: f64 = v.iter().zip(&q).map(|(x, y)| x * y).sum();
        diag.push(a_k);
        basis.push(q.clone());
        if step + 1 == nodes {
            break;
        }
        // two passes of Gram-Schmidt against every previous vector
        for _ in 0..2 {
            for b in &basis {
                let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b_k = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if b_k <= LANCZOS_BREAKDOWN * scale {
            return Ok(base);
        }
        off.push(b_k);
        q = v.into_iter().map(|x| x / b_k).collect();
    }
    debug_assert_eq!(basis.len(), nodes);
    debug_assert!(s > nodes);

    let mut jacobi = DMatrix::<f64>::zeros(nodes, nodes);
    for i in 0..nodes {
        jacobi[(i, i)] = diag[i];
        if i + 1 < nodes {
            jacobi[(i, i + 1)] = off[i];
            jacobi[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let (lo, hi) = (base.min_atom(), base.max_atom());
    let atoms: Vec<f64> = eig.eigenvalues.iter().map(|t| t.clamp(lo, hi)).collect();
    let weights: Vec<f64> = (0..nodes)
        .map(|i| eig.eigenvectors[(0, i)].powi(2))
        .collect();
    DiscretePrior::from_unnormalized(atoms, weights, base.support_bound)
}
