//! Empirical Bayes in the Poisson and normal-means models.
//!
//! The centerpiece is the hierarchical Bayes (HB) estimator under a
//! prior-on-prior (PoP): given observations `X^n`, it averages single-prior
//! Bayes rules `θ_G(X_i)` over the posterior on candidate priors `G`. The crate
//! also ships the classical baselines (oracle Bayes, Robbins, grid NPMLE,
//! permutation-invariant type matching) and the Monte-Carlo machinery used to
//! measure regret, length generalization and posterior contraction.
//!
//! Module map:
//!
//! - [`mixture`]: Poisson pmf arithmetic, discrete priors, posterior means,
//!   divergences and moment matching.
//! - [`pop`]: priors-on-priors and their samplers.
//! - [`hb`]: posterior states over candidate priors, α-posteriors and the
//!   length-generalization map.
//! - [`baselines`]: comparison estimators.
//! - [`bench`]: data generation and experiment drivers.
//! - [`gaussian`]: the normal-means counterpart.
//! - [`dataset_io`]: binary and CSV persistence of generated datasets.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod dataset_io;
mod error;
pub mod gaussian;
pub mod hb;
pub mod mixture;
pub mod model;
pub mod pop;
pub mod seed;

pub use error::{EbError, Result};
pub use mixture::{DiscretePrior, TruncatedPmf};
pub use model::{Estimator, Prior};
pub use pop::PopSpec;
