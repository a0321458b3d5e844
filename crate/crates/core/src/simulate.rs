//! Labelled synthetic datasets: beta and truncated-normal proportion
//! generators for the paired design, and Dirichlet generators with mean-shift
//! effects for the multi-category design.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MimosaError, Result};
use crate::model::{CountPair, MultiCountPair, Sidedness};
use crate::numerics::beta_ineq::beta_gt_prob;
use crate::numerics::optim::{nelder_mead, NelderMeadOptions};
use crate::numerics::rng::SeededRng;
use crate::numerics::sample::{self, std_normal_cdf};

/// Rejection sampling gives up below this acceptance rate.
const MIN_ACCEPTANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Beta,
    /// Truncated normals on (0, 1) with the beta's mean and variance.
    TruncNormalMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SimHypers {
    Betabin { alpha_u: f64, beta_u: f64, alpha_s: f64, beta_s: f64 },
    /// Responders draw stimulated proportions from a Dirichlet with the same
    /// concentration as `alpha_u` and mean shifted by `effect_deltas`.
    Dirmult { alpha_u: Vec<f64>, effect_deltas: Vec<f64> },
}

impl Default for SimHypers {
    fn default() -> Self {
        SimHypers::Betabin { alpha_u: 8.0, beta_u: 4e4, alpha_s: 40.0, beta_s: 4e4 }
    }
}

impl SimHypers {
    /// Eight categories with effects of ±2.5e-3 in the first and last.
    pub fn eight_category_default() -> Self {
        let mean = [0.985, 0.004, 0.003, 0.002, 0.002, 0.0015, 0.0015, 0.001];
        let concentration = 3000.0;
        let mut deltas = vec![0.0; 8];
        deltas[0] = -2.5e-3;
        deltas[7] = 2.5e-3;
        SimHypers::Dirmult { alpha_u: mean.iter().map(|m| m * concentration).collect(), effect_deltas: deltas }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub n_subjects: usize,
    pub w: f64,
    /// Cells per sample, shared by both conditions.
    pub total_counts: u64,
    pub hypers: SimHypers,
    pub sidedness: Sidedness,
    pub generator: Generator,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            n_subjects: 200,
            w: 0.6,
            total_counts: 5000,
            hypers: SimHypers::default(),
            sidedness: Sidedness::OneSidedIncrease,
            generator: Generator::Beta,
            replicates: 10,
            seed: 0,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(MimosaError::Parameter("n_subjects must be at least 2".into()));
        }
        if self.total_counts < 1 {
            return Err(MimosaError::Parameter("total_counts must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(MimosaError::Parameter(format!("w must lie in [0, 1], got {}", self.w)));
        }
        match &self.hypers {
            SimHypers::Betabin { alpha_u, beta_u, alpha_s, beta_s } => {
                if [alpha_u, beta_u, alpha_s, beta_s].iter().any(|v| !(**v > 0.0 && v.is_finite())) {
                    return Err(MimosaError::Parameter("beta shape parameters must be positive".into()));
                }
            }
            SimHypers::Dirmult { alpha_u, effect_deltas } => {
                if alpha_u.len() < 2 || alpha_u.len() != effect_deltas.len() {
                    return Err(MimosaError::Parameter(
                        "alpha_u and effect_deltas must share a length of at least 2".into(),
                    ));
                }
                if alpha_u.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                    return Err(MimosaError::Parameter("Dirichlet parameters must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelledDataset<R> {
    pub records: Vec<R>,
    pub true_z: Vec<bool>,
    pub spec: SimSpec,
    pub replicate_index: usize,
}

fn subject_id(i: usize) -> String {
    format!("S{i:04}")
}

fn replicate_rng(spec: &SimSpec, replicate: usize) -> SeededRng {
    SeededRng::for_path(spec.seed, &[replicate as u64])
}

/// Truncated-normal moments on (0, 1): `(mean, variance)`.
fn truncated_normal_moments(mu: f64, sigma: f64) -> (f64, f64) {
    let a = -mu / sigma;
    let b = (1.0 - mu) / sigma;
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    // difference of CDFs taken in whichever tail keeps relative precision
    let z = if a > 0.0 { std_normal_cdf(-a) - std_normal_cdf(-b) } else { std_normal_cdf(b) - std_normal_cdf(a) };
    let (pa, pb) = (pdf(a), pdf(b));
    let shift = (pa - pb) / z;
    let mean = mu + sigma * shift;
    let var = sigma * sigma * (1.0 + (a * pa - b * pb) / z - shift * shift);
    (mean, var)
}

/// Normal location and scale whose truncation to (0, 1) has the mean and
/// variance of Beta(a, b).
pub fn match_truncated_normal(a: f64, b: f64) -> Result<(f64, f64)> {
    if !(a > 0.0 && b > 0.0) {
        return Err(MimosaError::Parameter(format!("cannot match Beta({a}, {b})")));
    }
    let m = a / (a + b);
    let v = m * (1.0 - m) / (a + b + 1.0);
    // the uniform (variance 1/12) is the limit sigma -> infinity
    if v > 1.0 / 12.0 + 1e-12 {
        return Err(MimosaError::Parameter(format!(
            "Beta({a}, {b}) has variance {v}, beyond any truncated normal on (0, 1)"
        )));
    }
    let sd = v.sqrt();
    // search over (mu / sd, ln sigma) so both coordinates are order one
    let max_ln_sigma = 1e3f64.ln();
    let objective = |x: &[f64]| {
        let mu = x[0] * sd;
        let sigma = x[1].min(max_ln_sigma).exp();
        let (mean, var) = truncated_normal_moments(mu, sigma);
        ((mean - m) / m).powi(2) + ((var.max(0.0).sqrt() - sd) / sd).powi(2)
    };
    let opts = NelderMeadOptions { tol: 1e-24, max_evals: 20_000, initial_step: 0.2, restarts: 3 };
    let best = nelder_mead(objective, &[m / sd, sd.ln()], &opts)?;
    if !(best.fmin < 1e-8) {
        return Err(MimosaError::Parameter(format!(
            "moment matching for Beta({a}, {b}) did not converge (residual {})",
            best.fmin
        )));
    }
    Ok((best.argmin[0] * sd, best.argmin[1].min(max_ln_sigma).exp()))
}

enum ProportionSampler {
    Beta { a: f64, b: f64 },
    TruncNormal { mu: f64, sigma: f64 },
}

impl ProportionSampler {
    fn new(generator: Generator, a: f64, b: f64) -> Result<Self> {
        Ok(match generator {
            Generator::Beta => ProportionSampler::Beta { a, b },
            Generator::TruncNormalMatched => {
                let (mu, sigma) = match_truncated_normal(a, b)?;
                ProportionSampler::TruncNormal { mu, sigma }
            }
        })
    }

    fn draw(&self, rng: &mut SeededRng) -> Result<f64> {
        match *self {
            ProportionSampler::Beta { a, b } => sample::beta(rng, a, b),
            ProportionSampler::TruncNormal { mu, sigma } => sample::truncated_normal(rng, mu, sigma, 0.0, 1.0),
        }
    }
}

/// One replicate of the paired univariate design.
pub fn simulate_univariate(spec: &SimSpec, replicate: usize) -> Result<LabelledDataset<CountPair>> {
    spec.validate()?;
    let SimHypers::Betabin { alpha_u, beta_u, alpha_s, beta_s } = spec.hypers else {
        return Err(MimosaError::Parameter("univariate simulation needs beta-binomial hyperparameters".into()));
    };
    let unstim = ProportionSampler::new(spec.generator, alpha_u, beta_u)?;
    let stim = ProportionSampler::new(spec.generator, alpha_s, beta_s)?;
    let one_sided = spec.sidedness == Sidedness::OneSidedIncrease;
    if one_sided && spec.generator == Generator::Beta && spec.w > 0.0 {
        let mass = beta_gt_prob(alpha_s, beta_s, alpha_u, beta_u)?;
        if mass < MIN_ACCEPTANCE {
            return Err(MimosaError::DegenerateConstraint(format!(
                "Pr(p_s > p_u) = {mass:e} under the prior; rejection sampling would stall"
            )));
        }
    }
    let max_attempts = (1.0 / MIN_ACCEPTANCE) as usize * 100;
    let n = spec.total_counts;
    let mut rng = replicate_rng(spec, replicate);
    let mut records = Vec::with_capacity(spec.n_subjects);
    let mut true_z = Vec::with_capacity(spec.n_subjects);
    for i in 0..spec.n_subjects {
        let z = sample::bernoulli(&mut rng, spec.w)?;
        let (p_u, p_s) = if z {
            let mut attempts = 0;
            loop {
                let p_u = unstim.draw(&mut rng)?;
                let p_s = stim.draw(&mut rng)?;
                if !one_sided || p_s > p_u {
                    break (p_u, p_s);
                }
                attempts += 1;
                if attempts >= max_attempts {
                    return Err(MimosaError::DegenerateConstraint(format!(
                        "no draw with p_s > p_u in {max_attempts} attempts"
                    )));
                }
            }
        } else {
            let p = unstim.draw(&mut rng)?;
            (p, p)
        };
        let n_u = sample::binomial(&mut rng, n, p_u)?;
        let n_s = sample::binomial(&mut rng, n, p_s)?;
        records.push(CountPair { subject_id: subject_id(i), n_u, total_u: n, n_s, total_s: n });
        true_z.push(z);
    }
    Ok(LabelledDataset { records, true_z, spec: spec.clone(), replicate_index: replicate })
}

/// One replicate with truncated-normal proportions; `spec.generator` is overridden.
pub fn simulate_misspecified(spec: &SimSpec, replicate: usize) -> Result<LabelledDataset<CountPair>> {
    let spec = SimSpec { generator: Generator::TruncNormalMatched, ..spec.clone() };
    simulate_univariate(&spec, replicate)
}

/// One replicate of the multi-category design.
pub fn simulate_multivariate(spec: &SimSpec, replicate: usize) -> Result<LabelledDataset<MultiCountPair>> {
    spec.validate()?;
    let SimHypers::Dirmult { alpha_u, effect_deltas } = &spec.hypers else {
        return Err(MimosaError::Parameter("multivariate simulation needs Dirichlet hyperparameters".into()));
    };
    let total_delta: f64 = effect_deltas.iter().sum();
    if total_delta.abs() > 1e-12 {
        return Err(MimosaError::Parameter(format!("effect deltas must sum to zero, got {total_delta:e}")));
    }
    let conc: f64 = alpha_u.iter().sum();
    let shifted: Vec<f64> = alpha_u.iter().zip(effect_deltas).map(|(a, d)| a / conc + d).collect();
    if let Some(k) = shifted.iter().position(|&p| p <= 0.0) {
        return Err(MimosaError::Parameter(format!("effect delta makes the mean of category {k} non-positive")));
    }
    let sum: f64 = shifted.iter().sum();
    let alpha_s: Vec<f64> = shifted.iter().map(|p| conc * p / sum).collect();
    let labels: Vec<String> = (0..alpha_u.len()).map(|k| format!("c{k}")).collect();

    let n = spec.total_counts;
    let mut rng = replicate_rng(spec, replicate);
    let mut records = Vec::with_capacity(spec.n_subjects);
    let mut true_z = Vec::with_capacity(spec.n_subjects);
    for i in 0..spec.n_subjects {
        let z = sample::bernoulli(&mut rng, spec.w)?;
        let p_u = sample::dirichlet(&mut rng, alpha_u)?;
        let p_s = if z { sample::dirichlet(&mut rng, &alpha_s)? } else { p_u.clone() };
        let n_u = sample::multinomial(&mut rng, n, &p_u)?;
        let n_s = sample::multinomial(&mut rng, n, &p_s)?;
        records.push(MultiCountPair { subject_id: subject_id(i), n_s, n_u, category_labels: labels.clone() });
        true_z.push(z);
    }
    Ok(LabelledDataset { records, true_z, spec: spec.clone(), replicate_index: replicate })
}

/// All `spec.replicates` univariate replicates, generated in parallel.
pub fn simulate_replicates(spec: &SimSpec) -> Result<Vec<LabelledDataset<CountPair>>> {
    (0..spec.replicates).into_par_iter().map(|r| simulate_univariate(spec, r)).collect()
}

/// All `spec.replicates` multivariate replicates, generated in parallel.
pub fn simulate_replicates_mv(spec: &SimSpec) -> Result<Vec<LabelledDataset<MultiCountPair>>> {
    (0..spec.replicates).into_par_iter().map(|r| simulate_multivariate(spec, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_weight_gives_no_responders() {
        let spec = SimSpec { w: 0.0, n_subjects: 50, ..Default::default() };
        let d = simulate_univariate(&spec, 0).unwrap();
        assert!(d.true_z.iter().all(|z| !z));
    }

    #[test]
    fn one_sided_never_decreases() {
        // responders drawn with identical priors: half the draws are rejected
        let spec = SimSpec {
            w: 1.0,
            n_subjects: 500,
            total_counts: 100_000_000,
            hypers: SimHypers::Betabin { alpha_u: 5.0, beta_u: 500.0, alpha_s: 5.0, beta_s: 500.0 },
            ..Default::default()
        };
        let d = simulate_univariate(&spec, 3).unwrap();
        let ups = d.records.iter().filter(|y| y.n_s > y.n_u).count();
        assert!(ups >= 495, "{ups}");
    }

    #[test]
    fn degenerate_constraint_detected() {
        let spec = SimSpec {
            hypers: SimHypers::Betabin { alpha_u: 500.0, beta_u: 500.0, alpha_s: 5.0, beta_s: 5000.0 },
            ..Default::default()
        };
        assert!(matches!(simulate_univariate(&spec, 0), Err(MimosaError::DegenerateConstraint(_))));
    }

    #[test]
    fn reproducible() {
        let spec = SimSpec { n_subjects: 30, ..Default::default() };
        assert_eq!(simulate_univariate(&spec, 1).unwrap(), simulate_univariate(&spec, 1).unwrap());
        assert_ne!(simulate_univariate(&spec, 1).unwrap().records, simulate_univariate(&spec, 2).unwrap().records);
    }

    #[test]
    fn matching_recovers_moments() {
        for (a, b) in [(1.0, 1.0), (2.0, 5.0), (50.0, 5e4), (8.0, 4e4)] {
            let (mu, sigma) = match_truncated_normal(a, b).unwrap();
            let (mean, var) = truncated_normal_moments(mu, sigma);
            let m = a / (a + b);
            let v = m * (1.0 - m) / (a + b + 1.0);
            assert!(((mean - m) / m).abs() < 1e-4, "{a} {b}: {mean} vs {m}");
            assert!(((var - v) / v).abs() < 1e-3, "{a} {b}: {var} vs {v}");
        }
    }

    #[test]
    fn unbalanced_deltas_rejected() {
        let spec = SimSpec {
            hypers: SimHypers::Dirmult { alpha_u: vec![10.0, 10.0, 10.0], effect_deltas: vec![0.1, 0.0, 0.0] },
            ..Default::default()
        };
        assert!(matches!(simulate_multivariate(&spec, 0), Err(MimosaError::Parameter(_))));
        let spec = SimSpec {
            hypers: SimHypers::Dirmult { alpha_u: vec![10.0, 10.0, 10.0], effect_deltas: vec![0.5, -0.5, 0.0] },
            ..Default::default()
        };
        assert!(matches!(simulate_multivariate(&spec, 0), Err(MimosaError::Parameter(_))));
    }

    #[test]
    fn multivariate_shapes() {
        let spec = SimSpec { hypers: SimHypers::eight_category_default(), total_counts: 1500, n_subjects: 20, ..Default::default() };
        let d = simulate_multivariate(&spec, 0).unwrap();
        assert_eq!(d.records.len(), 20);
        for y in &d.records {
            assert_eq!(y.total_s(), 1500);
            assert_eq!(y.total_u(), 1500);
            assert_eq!(y.n_categories(), 8);
        }
    }
}
