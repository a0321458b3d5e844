//! Mixture models and their closed-form marginal likelihoods.

pub mod betabin;
pub mod dirmult;

use serde::Serialize;

use crate::error::Result;
use crate::numerics::special::log_sum_exp_unchecked;

pub use betabin::{BetaBinHypers, BetaBinModel, CountPair, ProportionSummary, Sidedness};
pub use dirmult::{DirMultHypers, DirMultModel, MultiCountPair, MultiProportionSummary};

/// Per-subject log marginal likelihoods under the null and alternative components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginals {
    pub ln_l0: f64,
    pub ln_l1: f64,
}

impl Marginals {
    /// `ln[(1 - w) L0 + w L1]`
    pub fn ln_mixture(&self, w: f64) -> f64 {
        if w <= 0.0 {
            return self.ln_l0;
        }
        if w >= 1.0 {
            return self.ln_l1;
        }
        log_sum_exp_unchecked(&[(1.0 - w).ln() + self.ln_l0, w.ln() + self.ln_l1])
    }

    pub fn responsibility(&self, w: f64) -> f64 {
        betabin::responsibility_from_logs(w, self.ln_l0, self.ln_l1)
    }
}

/// The interface the EM and MCMC engines need from a two-component mixture.
///
/// Hyperparameters split into positive shape parameters, handled as a flat
/// vector, and the mixing weight `w`.
pub trait MixtureModel: Sync {
    type Hypers: Clone + std::fmt::Debug + Serialize;

    fn n_subjects(&self) -> usize;
    fn subject_id(&self, i: usize) -> &str;
    fn n_shapes(&self) -> usize;
    /// Groups of shape indices updated jointly by the MCMC sampler.
    fn shape_blocks(&self) -> Vec<Vec<usize>>;
    fn shape_names(&self) -> Vec<String>;
    fn shapes_of(h: &Self::Hypers) -> Vec<f64>;
    fn weight_of(h: &Self::Hypers) -> f64;
    fn assemble(&self, shapes: &[f64], w: f64) -> Self::Hypers;
    fn log_marginals(&self, shapes: &[f64]) -> Result<Vec<Marginals>>;
}

/// Observed-data log-likelihood `Σ ln[(1 - w) L0 + w L1]`.
pub fn observed_loglik(marginals: &[Marginals], w: f64) -> f64 {
    marginals.iter().map(|m| m.ln_mixture(w)).sum()
}

/// Expected complete-data log-likelihood given responsibilities.
pub fn expected_complete_loglik(marginals: &[Marginals], resp: &[f64], w: f64) -> f64 {
    let mut total = 0.0;
    for (m, &r) in marginals.iter().zip(resp) {
        total += weighted(1.0 - r, m.ln_l0) + weighted(r, m.ln_l1);
        total += weighted(r, w.ln()) + weighted(1.0 - r, (1.0 - w).ln());
    }
    total
}

/// `weight * value` with `0 · (-∞) = 0`.
pub(crate) fn weighted(weight: f64, value: f64) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * value
    }
}
