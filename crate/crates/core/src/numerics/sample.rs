//! Samplers for the distribution families used by the simulators and MCMC.
//!
//! Beta, Gamma, Binomial and Exponential draws come from `rand_distr`;
//! Dirichlet is normalized Gammas, Multinomial is sequential conditional
//! Binomials, and the truncated normal is inverse-CDF on the truncated range.

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Exp, Gamma};
use statrs::function::erf::{erfc, erfc_inv};

use super::rng::SeededRng;
use crate::error::{MimosaError, Result};

/// A distribution family with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum DistSpec {
    Beta { a: f64, b: f64 },
    Gamma { shape: f64, scale: f64 },
    Dirichlet { alpha: Vec<f64> },
    Binomial { n: u64, p: f64 },
    Multinomial { n: u64, probs: Vec<f64> },
    Bernoulli { p: f64 },
    Uniform { lo: f64, hi: f64 },
    Exponential { rate: f64 },
    /// Normal(mu, sigma) restricted to (lo, hi).
    TruncatedNormal { mu: f64, sigma: f64, lo: f64, hi: f64 },
}

/// One draw from a [`DistSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum Draw {
    Real(f64),
    Count(u64),
    Flag(bool),
    Vector(Vec<f64>),
    Counts(Vec<u64>),
}

pub fn sample(dist: &DistSpec, rng: &mut SeededRng) -> Result<Draw> {
    Ok(match dist {
        DistSpec::Beta { a, b } => Draw::Real(beta(rng, *a, *b)?),
        DistSpec::Gamma { shape, scale } => Draw::Real(gamma(rng, *shape, *scale)?),
        DistSpec::Dirichlet { alpha } => Draw::Vector(dirichlet(rng, alpha)?),
        DistSpec::Binomial { n, p } => Draw::Count(binomial(rng, *n, *p)?),
        DistSpec::Multinomial { n, probs } => Draw::Counts(multinomial(rng, *n, probs)?),
        DistSpec::Bernoulli { p } => Draw::Flag(bernoulli(rng, *p)?),
        DistSpec::Uniform { lo, hi } => {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(MimosaError::domain(format!("invalid uniform range ({lo}, {hi})")));
            }
            Draw::Real(lo + (hi - lo) * rng.random::<f64>())
        }
        DistSpec::Exponential { rate } => Draw::Real(exponential(rng, *rate)?),
        DistSpec::TruncatedNormal { mu, sigma, lo, hi } => {
            Draw::Real(truncated_normal(rng, *mu, *sigma, *lo, *hi)?)
        }
    })
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(MimosaError::domain(format!("{name} must be positive, got {v}")))
    }
}

fn probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(MimosaError::domain(format!("probability must lie in [0, 1], got {p}")))
    }
}

pub fn beta(rng: &mut SeededRng, a: f64, b: f64) -> Result<f64> {
    positive("beta shape a", a)?;
    positive("beta shape b", b)?;
    let d = Beta::new(a, b).map_err(|e| MimosaError::domain(e.to_string()))?;
    Ok(d.sample(rng))
}

pub fn gamma(rng: &mut SeededRng, shape: f64, scale: f64) -> Result<f64> {
    positive("gamma shape", shape)?;
    positive("gamma scale", scale)?;
    let d = Gamma::new(shape, scale).map_err(|e| MimosaError::domain(e.to_string()))?;
    Ok(d.sample(rng))
}

pub fn dirichlet(rng: &mut SeededRng, alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() < 2 {
        return Err(MimosaError::domain("Dirichlet needs at least two components"));
    }
    let mut draws = Vec::with_capacity(alpha.len());
    for &a in alpha {
        draws.push(gamma(rng, a, 1.0)?);
    }
    let total: f64 = draws.iter().sum();
    if total <= 0.0 {
        // every gamma underflowed; fall back to a point mass on the largest shape
        let k = alpha
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        let mut out = vec![0.0; alpha.len()];
        out[k] = 1.0;
        return Ok(out);
    }
    draws.iter_mut().for_each(|d| *d /= total);
    Ok(draws)
}

pub fn binomial(rng: &mut SeededRng, n: u64, p: f64) -> Result<u64> {
    probability(p)?;
    let d = Binomial::new(n, p).map_err(|e| MimosaError::domain(e.to_string()))?;
    Ok(d.sample(rng))
}

pub fn multinomial(rng: &mut SeededRng, n: u64, probs: &[f64]) -> Result<Vec<u64>> {
    if probs.is_empty() {
        return Err(MimosaError::domain("multinomial needs at least one category"));
    }
    if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(MimosaError::domain("multinomial probabilities must be non-negative"));
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(MimosaError::domain("multinomial probabilities sum to zero"));
    }
    let mut out = vec![0u64; probs.len()];
    let mut remaining_n = n;
    let mut remaining_p = total;
    for (k, &p) in probs.iter().enumerate() {
        if remaining_n == 0 {
            break;
        }
        if k + 1 == probs.len() {
            out[k] = remaining_n;
            break;
        }
        let cond = if remaining_p > 0.0 { (p / remaining_p).clamp(0.0, 1.0) } else { 0.0 };
        let x = binomial(rng, remaining_n, cond)?;
        out[k] = x;
        remaining_n -= x;
        remaining_p -= p;
    }
    Ok(out)
}

pub fn bernoulli(rng: &mut SeededRng, p: f64) -> Result<bool> {
    probability(p)?;
    // p = 0 and p = 1 are deterministic
    Ok(rng.random::<f64>() < p)
}

pub fn exponential(rng: &mut SeededRng, rate: f64) -> Result<f64> {
    positive("exponential rate", rate)?;
    let d = Exp::new(rate).map_err(|e| MimosaError::domain(e.to_string()))?;
    Ok(d.sample(rng))
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub(crate) fn std_normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

pub fn truncated_normal(rng: &mut SeededRng, mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<f64> {
    positive("truncated normal sigma", sigma)?;
    if !(lo < hi) || !mu.is_finite() {
        return Err(MimosaError::domain(format!("invalid truncated normal ({mu}, {sigma}) on ({lo}, {hi})")));
    }
    let mut alpha = (lo - mu) / sigma;
    let mut beta = (hi - mu) / sigma;
    // Work in the lower tail where the CDF is resolved to full relative precision.
    let flip = alpha > 0.0;
    if flip {
        (alpha, beta) = (-beta, -alpha);
    }
    let cdf_lo = std_normal_cdf(alpha);
    let cdf_hi = std_normal_cdf(beta);
    if !(cdf_hi > cdf_lo) {
        return Err(MimosaError::domain("truncation interval has no normal mass"));
    }
    let u: f64 = rng.random();
    let z = std_normal_quantile(cdf_lo + u * (cdf_hi - cdf_lo)).clamp(alpha, beta);
    let z = if flip { -z } else { z };
    Ok((mu + sigma * z).clamp(lo, hi))
}
