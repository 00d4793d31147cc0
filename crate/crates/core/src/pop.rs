//! Priors-on-priors (PoPs).
//!
//! A [`PopSpec`] describes a distribution over [`DiscretePrior`]s. Four
//! families are supported: uniform locations with flat Dirichlet weights (the
//! universal training PoP), flat Dirichlet weights on a fixed grid (the
//! multinomial test PoP), pushforwards of a uniform grid through random
//! two-layer perceptrons (the neural test PoP), and a finite uniform mixture
//! of given priors.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EbError, Result};
use crate::mixture::{default_x_max, divergence, marginal_pmf, DiscretePrior, DivergenceKind};

pub const DEFAULT_GRID_STEP: f64 = 0.1;
pub const DEFAULT_NEURAL_MIXTURE_COUNT: usize = 4;
pub const DEFAULT_NEURAL_HIDDEN_DIM: usize = 16;
pub const DEFAULT_NEURAL_GRID_POINTS: usize = 512;

fn default_grid_step() -> f64 {
    DEFAULT_GRID_STEP
}
fn default_mixture_count() -> usize {
    DEFAULT_NEURAL_MIXTURE_COUNT
}
fn default_hidden_dim() -> usize {
    DEFAULT_NEURAL_HIDDEN_DIM
}
fn default_grid_points() -> usize {
    DEFAULT_NEURAL_GRID_POINTS
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PopKind {
    /// `k` atoms i.i.d. uniform on `[0, A]`, weights `~ Dir(1, …, 1)`.
    UniformDirichlet { k: usize },
    /// Atoms `{step·j : j = 1..A/step}`, weights `~ Dir(1, …, 1)`.
    GridMultinomial {
        #[serde(default = "default_grid_step")]
        grid_step: f64,
    },
    /// Uniform mixture of `mixture_count` random perceptron pushforwards.
    Neural {
        #[serde(default = "default_mixture_count")]
        mixture_count: usize,
        #[serde(default = "default_hidden_dim")]
        hidden_dim: usize,
        #[serde(default = "default_grid_points")]
        grid_points: usize,
        /// Multiply the `[0, 1]`-valued outputs by `A`.
        #[serde(default = "default_true")]
        scale_to_support: bool,
    },
    /// Uniform choice among fixed priors (`Π_m = (1/m) Σ G_i^{⊗n}`).
    Finite { components: Vec<DiscretePrior> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopSpec {
    pub support_bound: f64,
    #[serde(flatten)]
    pub kind: PopKind,
}

impl PopSpec {
    pub fn uniform_dirichlet(support_bound: f64, k: usize) -> Self {
        Self {
            support_bound,
            kind: PopKind::UniformDirichlet { k },
        }
    }

    pub fn grid_multinomial(support_bound: f64, grid_step: f64) -> Self {
        Self {
            support_bound,
            kind: PopKind::GridMultinomial { grid_step },
        }
    }

    pub fn neural(support_bound: f64) -> Self {
        Self {
            support_bound,
            kind: PopKind::Neural {
                mixture_count: DEFAULT_NEURAL_MIXTURE_COUNT,
                hidden_dim: DEFAULT_NEURAL_HIDDEN_DIM,
                grid_points: DEFAULT_NEURAL_GRID_POINTS,
                scale_to_support: true,
            },
        }
    }

    /// The finite PoP over `components`; its support bound is the largest of
    /// theirs.
    pub fn finite(components: Vec<DiscretePrior>) -> Self {
        let support_bound = components
            .iter()
            .map(DiscretePrior::support_bound)
            .fold(0.0, f64::max);
        Self {
            support_bound,
            kind: PopKind::Finite { components },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(EbError::InvalidArgument(msg));
        if !(self.support_bound > 0.0 && self.support_bound.is_finite()) {
            return bad(format!(
                "support bound must be positive, got {}",
                self.support_bound
            ));
        }
        match &self.kind {
            PopKind::UniformDirichlet { k } if *k == 0 => bad("k must be at least 1".into()),
            PopKind::GridMultinomial { grid_step }
                if !(*grid_step > 0.0 && *grid_step <= self.support_bound) =>
            {
                bad(format!("grid step {grid_step} must lie in (0, A]"))
            }
            PopKind::Neural {
                mixture_count,
                hidden_dim,
                grid_points,
                ..
            } if *mixture_count == 0 || *hidden_dim == 0 || *grid_points < 2 => {
                bad("neural PoP needs mixture_count >= 1, hidden_dim >= 1, grid_points >= 2".into())
            }
            PopKind::Finite { components } if components.is_empty() => {
                bad("finite PoP needs at least one component".into())
            }
            PopKind::Finite { components } => {
                if components.iter().any(|g| g.max_atom() > self.support_bound) {
                    return bad("finite PoP component exceeds the support bound".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Flat Dirichlet draw via normalized unit-rate exponentials.
pub fn sample_flat_dirichlet<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Draws `G ~ Π`.
pub fn sample_prior<R: Rng + ?Sized>(spec: &PopSpec, rng: &mut R) -> Result<DiscretePrior> {
    let a = spec.support_bound;
    match &spec.kind {
        PopKind::UniformDirichlet { k } => {
            let atoms: Vec<f64> = (0..*k).map(|_| rng.random::<f64>() * a).collect();
            let weights = sample_flat_dirichlet(*k, rng);
            DiscretePrior::from_unnormalized(atoms, weights, a)
        }
        PopKind::GridMultinomial { grid_step } => {
            let atoms = grid_atoms(a, *grid_step);
            let weights = sample_flat_dirichlet(atoms.len(), rng);
            DiscretePrior::from_unnormalized(atoms, weights, a)
        }
        PopKind::Neural {
            mixture_count,
            hidden_dim,
            grid_points,
            scale_to_support,
        } => {
            let maps: Vec<Perceptron> = (0..*mixture_count)
                .map(|_| Perceptron::random(*hidden_dim, rng))
                .collect();
            neural_prior_from_maps(&maps, a, *grid_points, *scale_to_support)
        }
        PopKind::Finite { components } => {
            let j = rng.random_range(0..components.len());
            Ok(components[j].clone())
        }
    }
}

/// `{step·j : j = 1..round(A/step)}`, clipped to `A`.
fn grid_atoms(support_bound: f64, step: f64) -> Vec<f64> {
    let count = ((support_bound / step).round() as usize).max(1);
    (1..=count)
        .map(|j| (step * j as f64).min(support_bound))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Gelu,
    Relu,
    Selu,
    Celu,
    Silu,
    Tanh,
    Tanhshrink,
}

impl Activation {
    pub const ALL: [Activation; 7] = [
        Activation::Gelu,
        Activation::Relu,
        Activation::Selu,
        Activation::Celu,
        Activation::Silu,
        Activation::Tanh,
        Activation::Tanhshrink,
    ];

    pub fn apply(self, x: f64) -> f64 {
        const SELU_SCALE: f64 = 1.050_700_987_355_480_5;
        const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
        match self {
            Activation::Gelu => {
                0.5 * x * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
            }
            Activation::Relu => x.max(0.0),
            Activation::Selu => SELU_SCALE * if x > 0.0 { x } else { SELU_ALPHA * x.exp_m1() },
            Activation::Celu => x.max(0.0) + x.exp_m1().min(0.0),
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Tanhshrink => x - x.tanh(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `φ(u) = Sigmoid(10 · W2 · σ(W1 · u))` on the normalized input `u = x/A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perceptron {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub activation: Activation,
}

impl Perceptron {
    /// `W1 ~ N(0, 1)`, `W2 ~ N(0, 1/hidden_dim)`, activation uniform.
    pub fn random<R: Rng + ?Sized>(hidden_dim: usize, rng: &mut R) -> Self {
        let w1 = (0..hidden_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let scale = (hidden_dim as f64).sqrt().recip();
        let w2 = (0..hidden_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect();
        let activation = Activation::ALL[rng.random_range(0..Activation::ALL.len())];
        Self { w1, w2, activation }
    }

    pub fn eval(&self, u: f64) -> f64 {
        let hidden: f64 = self
            .w1
            .iter()
            .zip(&self.w2)
            .map(|(a, b)| b * self.activation.apply(a * u))
            .sum();
        sigmoid(10.0 * hidden)
    }
}

/// Random neural prior: a uniform mixture of `mixture_count` perceptron
/// pushforwards of a `grid_points`-point uniform grid on `[0, A]`, scaled to
/// `[0, A]`.
pub fn neural_prior<R: Rng + ?Sized>(
    rng: &mut R,
    support_bound: f64,
    hidden_dim: usize,
    grid_points: usize,
    mixture_count: usize,
) -> Result<DiscretePrior> {
    let maps: Vec<Perceptron> = (0..mixture_count)
        .map(|_| Perceptron::random(hidden_dim, rng))
        .collect();
    neural_prior_from_maps(&maps, support_bound, grid_points, true)
}

/// Empirical distribution of the grid images under the given maps, each map
/// carrying equal mass.
pub fn neural_prior_from_maps(
    maps: &[Perceptron],
    support_bound: f64,
    grid_points: usize,
    scale_to_support: bool,
) -> Result<DiscretePrior> {
    if maps.is_empty() || grid_points < 2 {
        return Err(EbError::InvalidArgument(
            "neural prior needs at least one map and two grid points".into(),
        ));
    }
    let factor = if scale_to_support { support_bound } else { 1.0 };
    let mut atoms = Vec::with_capacity(maps.len() * grid_points);
    for map in maps {
        for i in 0..grid_points {
            let u = i as f64 / (grid_points - 1) as f64;
            atoms.push((map.eval(u) * factor).clamp(0.0, support_bound));
        }
    }
    Ok(DiscretePrior::uniform(atoms, support_bound)?.simplified())
}

/// `G[· | θ ≤ cutoff]`.
pub fn truncate_prior(prior: &DiscretePrior, cutoff: f64) -> Result<DiscretePrior> {
    let (atoms, weights): (Vec<f64>, Vec<f64>) = prior
        .atoms()
        .iter()
        .zip(prior.weights())
        .filter(|(a, _)| **a <= cutoff)
        .map(|(a, w)| (*a, *w))
        .unzip();
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(EbError::EmptySupport { cutoff });
    }
    if atoms.len() == prior.len() {
        return Ok(prior.clone());
    }
    DiscretePrior::from_unnormalized(atoms, weights, prior.support_bound())
}

/// Monte-Carlo estimate of `Π{G' : χ²(f_target ‖ f_{G'}) ≤ eps}`.
///
/// Only meaningful at relaxed thresholds; the masses at polynomially small
/// `eps` are far below what sampling can resolve.
pub fn pop_mass_estimate<R: Rng + ?Sized>(
    spec: &PopSpec,
    target: &DiscretePrior,
    eps: f64,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(eps > 0.0) || draws == 0 {
        return Err(EbError::InvalidArgument(
            "pop_mass_estimate needs eps > 0 and draws >= 1".into(),
        ));
    }
    if eps == f64::INFINITY {
        return Ok(1.0);
    }
    let x_max = default_x_max(spec.support_bound.max(target.support_bound()));
    let reference = marginal_pmf(target, x_max);
    let mut hits = 0usize;
    for _ in 0..draws {
        let g = sample_prior(spec, rng)?;
        let chi2 = divergence(&reference, &marginal_pmf(&g, x_max), DivergenceKind::Chi2)?;
        if chi2 <= eps {
            hits += 1;
        }
    }
    Ok(hits as f64 / draws as f64)
}
