//! Mixture models of beta-binomial and Dirichlet-multinomial distributions for
//! calling differential expression between paired stimulated and unstimulated
//! single-cell count samples.

pub mod baselines;
pub mod cli;
pub mod em;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod mcmc;
pub mod model;
pub mod numerics;
pub mod simulate;

pub use error::{MimosaError, Result};
