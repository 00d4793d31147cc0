//! Normal-means model: `X | θ ~ N(θ, 1)` with `θ ~ G` on `[−A, A]`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{regret_eval, RegretReport};
use crate::error::{EbError, Result};
use crate::hb::PosteriorState;
use crate::mixture::log_sum_exp;
use crate::model::{sample_index, sample_unit_normal, Estimator, Prior};
use crate::pop::{sample_prior, PopKind, PopSpec};

const WEIGHT_TOL: f64 = 1e-12;

fn ln_phi(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

/// Standard normal density.
pub fn phi(z: f64) -> f64 {
    ln_phi(z).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGaussianPrior")]
pub struct GaussianPrior {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    support_bound: f64,
}

#[derive(Deserialize)]
struct RawGaussianPrior {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    support_bound: f64,
}

impl TryFrom<RawGaussianPrior> for GaussianPrior {
    type Error = EbError;

    fn try_from(raw: RawGaussianPrior) -> Result<Self> {
        GaussianPrior::new(raw.atoms, raw.weights, raw.support_bound)
    }
}

impl GaussianPrior {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>, support_bound: f64) -> Result<Self> {
        if !(support_bound > 0.0 && support_bound.is_finite()) {
            return Err(EbError::InvalidPrior(format!(
                "support bound {support_bound} must be positive"
            )));
        }
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(EbError::InvalidPrior(
                "atoms and weights must be nonempty and of equal length".into(),
            ));
        }
        if let Some(a) = atoms.iter().find(|a| !(a.abs() <= support_bound)) {
            return Err(EbError::InvalidPrior(format!(
                "atom {a} outside [-{support_bound}, {support_bound}]"
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(EbError::InvalidPrior("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(EbError::InvalidPrior(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self {
            atoms,
            weights: weights.iter().map(|w| w / total).collect(),
            support_bound,
        })
    }

    pub fn from_unnormalized(
        atoms: Vec<f64>,
        weights: Vec<f64>,
        support_bound: f64,
    ) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(EbError::InvalidPrior(
                "weights must have positive finite sum".into(),
            ));
        }
        Self::new(
            atoms,
            weights.iter().map(|w| w / total).collect(),
            support_bound,
        )
    }

    pub fn point_mass(lambda: f64, support_bound: f64) -> Result<Self> {
        Self::new(vec![lambda], vec![1.0], support_bound)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The prior reflected through zero.
    pub fn reflected(&self) -> Self {
        Self {
            atoms: self.atoms.iter().map(|a| -a).collect(),
            ..self.clone()
        }
    }

    fn log_terms(&self, x: f64) -> impl Iterator<Item = f64> + Clone + '_ {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(move |(a, w)| w.ln() + ln_phi(x - a))
    }
}

impl Prior for GaussianPrior {
    type Obs = f64;

    fn support_bound(&self) -> f64 {
        self.support_bound
    }

    fn log_marginal_and_mean(&self, x: f64) -> (f64, Option<f64>) {
        let lf = log_sum_exp(self.log_terms(x));
        if lf == f64::NEG_INFINITY {
            return (lf, None);
        }
        let mean: f64 = self
            .atoms
            .iter()
            .zip(self.log_terms(x))
            .map(|(a, l)| a * (l - lf).exp())
            .sum();
        let lo = self.atoms.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.atoms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lf, Some(mean.clamp(lo, hi)))
    }

    fn mixture(components: &[Self], mixing: &[f64]) -> Result<Self> {
        if components.len() != mixing.len() || components.is_empty() {
            return Err(EbError::LengthMismatch {
                left: components.len(),
                right: mixing.len(),
            });
        }
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for (g, c) in components.iter().zip(mixing) {
            if *c == 0.0 {
                continue;
            }
            atoms.extend_from_slice(&g.atoms);
            weights.extend(g.weights.iter().map(|w| w * c));
        }
        let bound = components
            .iter()
            .map(|g| g.support_bound)
            .fold(0.0, f64::max);
        Self::from_unnormalized(atoms, weights, bound)
    }

    fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.atoms[sample_index(&self.weights, rng)]
    }

    fn sample_obs<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> f64 {
        sample_unit_normal(theta, rng)
    }
}

/// `f_G(x) = Σ_j w_j φ(x − λ_j)`.
pub fn gaussian_marginal(g: &GaussianPrior, x: f64) -> f64 {
    log_sum_exp(g.log_terms(x)).exp()
}

/// `f_G'(x) = Σ_j w_j (λ_j − x) φ(x − λ_j)`.
pub fn gaussian_marginal_derivative(g: &GaussianPrior, x: f64) -> f64 {
    g.atoms
        .iter()
        .zip(&g.weights)
        .map(|(a, w)| w * (a - x) * phi(x - a))
        .sum()
}

/// Posterior mean `Σ_j w_j λ_j φ(x − λ_j) / f_G(x)`.
pub fn gaussian_bayes(g: &GaussianPrior, x: f64) -> f64 {
    g.log_marginal_and_mean(x)
        .1
        .expect("normal mixtures have positive density")
}

/// `x + f_G'(x) / f_G(x)`.
pub fn gaussian_bayes_tweedie(g: &GaussianPrior, x: f64) -> f64 {
    x + gaussian_marginal_derivative(g, x) / gaussian_marginal(g, x)
}

/// `x + f_G'(x) / max(f_G(x), ρ)`; identical to [`gaussian_bayes`] wherever
/// `f_G(x) ≥ ρ`.
pub fn gaussian_bayes_reg(g: &GaussianPrior, x: f64, rho: f64) -> f64 {
    let f = gaussian_marginal(g, x);
    if f >= rho {
        gaussian_bayes(g, x)
    } else {
        x + gaussian_marginal_derivative(g, x) / rho
    }
}

/// `ρ = e^{−4A²} / (n² √(2π))`.
pub fn default_regularization(support_bound: f64, n: usize) -> f64 {
    (-4.0 * support_bound * support_bound).exp() / ((n as f64).powi(2) * (2.0 * PI).sqrt())
}

/// Draws a prior on `[−A, A]` from a PoP on `[0, A]` via `λ ↦ 2λ − A`.
pub fn sample_gaussian_prior<R: Rng + ?Sized>(
    spec: &PopSpec,
    rng: &mut R,
) -> Result<GaussianPrior> {
    let g = sample_prior(spec, rng)?;
    let a = spec.support_bound;
    GaussianPrior::from_unnormalized(
        g.atoms()
            .iter()
            .map(|l| (2.0 * l - a).clamp(-a, a))
            .collect(),
        g.weights().to_vec(),
        a,
    )
}

/// Normal-means counterpart of [`crate::hb::init_state`].
pub fn gaussian_init_state<R: Rng + ?Sized>(
    spec: &PopSpec,
    mc_draws: usize,
    train_n: usize,
    rng: &mut R,
) -> Result<PosteriorState<GaussianPrior>> {
    spec.validate()?;
    let draws = match &spec.kind {
        PopKind::Finite { components } => components.len(),
        _ => mc_draws,
    };
    if draws == 0 {
        return Err(EbError::InvalidArgument(
            "mc_draws must be at least 1".into(),
        ));
    }
    let priors = match &spec.kind {
        PopKind::Finite { components } => components
            .iter()
            .map(|g| {
                GaussianPrior::new(
                    g.atoms()
                        .iter()
                        .map(|l| 2.0 * l - spec.support_bound)
                        .collect(),
                    g.weights().to_vec(),
                    spec.support_bound,
                )
            })
            .collect::<Result<Vec<_>>>()?,
        _ => (0..draws)
            .map(|_| sample_gaussian_prior(spec, rng))
            .collect::<Result<Vec<_>>>()?,
    };
    PosteriorState::uniform(priors, train_n)
}

/// Regularized Bayes rule of a fixed prior as an estimator.
#[derive(Debug, Clone)]
pub struct RegularizedBayes {
    pub prior: GaussianPrior,
    pub rho: f64,
}

impl Estimator<f64> for RegularizedBayes {
    fn name(&self) -> String {
        "bayes_reg".into()
    }

    fn estimate(&self, xs: &[f64]) -> Result<Vec<f64>> {
        Ok(xs
            .iter()
            .map(|&x| gaussian_bayes_reg(&self.prior, x, self.rho))
            .collect())
    }
}

/// [`regret_eval`] with `X_i ~ N(θ_i, 1)`.
pub fn gaussian_regret_eval<E: Estimator<f64> + ?Sized>(
    estimator: &E,
    g0: &GaussianPrior,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<RegretReport> {
    regret_eval(estimator, g0, n, reps, seed)
}
