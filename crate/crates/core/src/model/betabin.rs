//! Beta-binomial mixture: one biomarker, paired stimulated/unstimulated counts.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Marginals, MixtureModel};
use crate::error::{MimosaError, Result};
use crate::numerics::beta_ineq::beta_greater_unchecked;
use crate::numerics::special::{ln_beta_unchecked, log_choose, IncBeta};

/// One subject's 2×2 table: positive cells and totals under each condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountPair {
    pub subject_id: String,
    pub n_u: u64,
    #[serde(rename = "N_u")]
    pub total_u: u64,
    pub n_s: u64,
    #[serde(rename = "N_s")]
    pub total_s: u64,
}

impl CountPair {
    pub fn new(subject_id: impl Into<String>, n_s: u64, total_s: u64, n_u: u64, total_u: u64) -> Result<Self> {
        let y = CountPair { subject_id: subject_id.into(), n_u, total_u, n_s, total_s };
        y.validate()?;
        Ok(y)
    }

    /// Checks `n ≤ N` in both conditions.
    pub fn validate(&self) -> Result<()> {
        if self.n_s > self.total_s {
            return Err(MimosaError::domain(format!(
                "subject {}: n_s = {} exceeds N_s = {}",
                self.subject_id, self.n_s, self.total_s
            )));
        }
        if self.n_u > self.total_u {
            return Err(MimosaError::domain(format!(
                "subject {}: n_u = {} exceeds N_u = {}",
                self.subject_id, self.n_u, self.total_u
            )));
        }
        Ok(())
    }

    /// A record is fittable when both conditions have at least one cell.
    pub fn is_fittable(&self) -> bool {
        self.total_s >= 1 && self.total_u >= 1
    }

    fn key(&self) -> (u64, u64, u64, u64) {
        (self.n_s, self.total_s, self.n_u, self.total_u)
    }

    fn ln_binomial_coefs(&self) -> f64 {
        log_choose(self.total_u, self.n_u) + log_choose(self.total_s, self.n_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    TwoSided,
    /// Alternative restricted to `p_s > p_u`.
    OneSidedIncrease,
}

/// Shared hyperparameters `(α_u, β_u, α_s, β_s, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaBinHypers {
    pub alpha_u: f64,
    pub beta_u: f64,
    pub alpha_s: f64,
    pub beta_s: f64,
    pub w: f64,
}

impl BetaBinHypers {
    pub fn new(alpha_u: f64, beta_u: f64, alpha_s: f64, beta_s: f64, w: f64) -> Result<Self> {
        let h = BetaBinHypers { alpha_u, beta_u, alpha_s, beta_s, w };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_u", self.alpha_u),
            ("beta_u", self.beta_u),
            ("alpha_s", self.alpha_s),
            ("beta_s", self.beta_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MimosaError::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(MimosaError::domain(format!("w must lie in [0, 1], got {}", self.w)));
        }
        Ok(())
    }
}

fn ln_l0_unchecked(h: &BetaBinHypers, y: &CountPair) -> f64 {
    let pos = (y.n_s + y.n_u) as f64;
    let neg = ((y.total_s - y.n_s) + (y.total_u - y.n_u)) as f64;
    y.ln_binomial_coefs() + ln_beta_unchecked(pos + h.alpha_u, neg + h.beta_u) - ln_beta_unchecked(h.alpha_u, h.beta_u)
}

fn ln_unstim_factor(h: &BetaBinHypers, y: &CountPair) -> f64 {
    ln_beta_unchecked(y.n_u as f64 + h.alpha_u, (y.total_u - y.n_u) as f64 + h.beta_u)
        - ln_beta_unchecked(h.alpha_u, h.beta_u)
}

fn ln_stim_factor(h: &BetaBinHypers, y: &CountPair) -> f64 {
    ln_beta_unchecked(y.n_s as f64 + h.alpha_s, (y.total_s - y.n_s) as f64 + h.beta_s)
        - ln_beta_unchecked(h.alpha_s, h.beta_s)
}

fn ln_l1_two_unchecked(h: &BetaBinHypers, y: &CountPair) -> f64 {
    y.ln_binomial_coefs() + ln_unstim_factor(h, y) + ln_stim_factor(h, y)
}

fn posterior_betas(h: &BetaBinHypers, y: &CountPair) -> (IncBeta, IncBeta) {
    let stim = IncBeta::new_unchecked(y.n_s as f64 + h.alpha_s, (y.total_s - y.n_s) as f64 + h.beta_s);
    let unstim = IncBeta::new_unchecked(y.n_u as f64 + h.alpha_u, (y.total_u - y.n_u) as f64 + h.beta_u);
    (stim, unstim)
}

/// `ln Pr(p_s > p_u)` under the prior; errors when the constraint has no mass.
fn ln_prior_constraint_mass(h: &BetaBinHypers) -> Result<f64> {
    let stim = IncBeta::new_unchecked(h.alpha_s, h.beta_s);
    let unstim = IncBeta::new_unchecked(h.alpha_u, h.beta_u);
    let mass = beta_greater_unchecked(&stim, &unstim);
    if mass < 1e-300 {
        return Err(MimosaError::DegenerateConstraint(format!(
            "prior mass of p_s > p_u is {:e} at alpha_s={}, beta_s={}, alpha_u={}, beta_u={}",
            mass, h.alpha_s, h.beta_s, h.alpha_u, h.beta_u
        )));
    }
    Ok(mass.ln())
}

fn ln_l1_one_with_prior_mass(h: &BetaBinHypers, y: &CountPair, ln_prior_mass: f64) -> f64 {
    let (stim, unstim) = posterior_betas(h, y);
    let post = beta_greater_unchecked(&stim, &unstim);
    ln_l1_two_unchecked(h, y) + post.ln() - ln_prior_mass
}

fn check(h: &BetaBinHypers, y: &CountPair) -> Result<()> {
    h.validate()?;
    y.validate()
}

/// Null marginal likelihood: `p_s = p_u ~ Beta(α_u, β_u)` integrated out.
pub fn log_l0(h: &BetaBinHypers, y: &CountPair) -> Result<f64> {
    check(h, y)?;
    Ok(ln_l0_unchecked(h, y))
}

/// Alternative marginal likelihood with independent beta priors.
pub fn log_l1_two_sided(h: &BetaBinHypers, y: &CountPair) -> Result<f64> {
    check(h, y)?;
    Ok(ln_l1_two_unchecked(h, y))
}

/// Alternative marginal likelihood with the prior truncated to `p_s > p_u`:
/// the unconstrained marginal times posterior over prior constraint mass.
pub fn log_l1_one_sided(h: &BetaBinHypers, y: &CountPair) -> Result<f64> {
    check(h, y)?;
    let ln_prior = ln_prior_constraint_mass(h)?;
    Ok(ln_l1_one_with_prior_mass(h, y, ln_prior))
}

pub fn log_l1(h: &BetaBinHypers, y: &CountPair, side: Sidedness) -> Result<f64> {
    match side {
        Sidedness::TwoSided => log_l1_two_sided(h, y),
        Sidedness::OneSidedIncrease => log_l1_one_sided(h, y),
    }
}

/// `w L1 / ((1 - w) L0 + w L1)` evaluated in the log domain.
pub fn responsibility_from_logs(w: f64, ln_l0: f64, ln_l1: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    if w >= 1.0 {
        return 1.0;
    }
    let a = (1.0 - w).ln() + ln_l0;
    let b = w.ln() + ln_l1;
    if b == f64::NEG_INFINITY {
        return 0.0;
    }
    if a == f64::NEG_INFINITY {
        return 1.0;
    }
    // logistic of b - a, evaluated on the side that cannot overflow
    let d = a - b;
    if d > 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

/// Posterior probability that the subject is a responder.
pub fn responsibility(h: &BetaBinHypers, y: &CountPair, side: Sidedness) -> Result<f64> {
    check(h, y)?;
    if h.w <= 0.0 {
        return Ok(0.0);
    }
    if h.w >= 1.0 {
        return Ok(1.0);
    }
    let l0 = ln_l0_unchecked(h, y);
    let l1 = log_l1(h, y, side)?;
    Ok(responsibility_from_logs(h.w, l0, l1))
}

/// Mixture-weighted posterior means of the two proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionSummary {
    pub mean_p_u: f64,
    pub mean_p_s: f64,
    pub mean_diff: f64,
}

pub fn posterior_proportion_summaries(h: &BetaBinHypers, y: &CountPair, side: Sidedness) -> Result<ProportionSummary> {
    let z = responsibility(h, y, side)?;
    proportion_summary_given(h, y, side, z)
}

/// As [`posterior_proportion_summaries`] with the response probability `z`
/// supplied, e.g. from a posterior sample.
pub fn proportion_summary_given(h: &BetaBinHypers, y: &CountPair, side: Sidedness, z: f64) -> Result<ProportionSummary> {
    check(h, y)?;
    if !(0.0..=1.0).contains(&z) {
        return Err(MimosaError::domain(format!("response probability must lie in [0, 1], got {z}")));
    }
    let pooled_a = (y.n_s + y.n_u) as f64 + h.alpha_u;
    let pooled_b = ((y.total_s - y.n_s) + (y.total_u - y.n_u)) as f64 + h.beta_u;
    let null_mean = pooled_a / (pooled_a + pooled_b);

    let (stim, unstim) = posterior_betas(h, y);
    let stim_mean = stim.a() / (stim.a() + stim.b());
    let unstim_mean = unstim.a() / (unstim.a() + unstim.b());
    let (alt_s, alt_u) = match side {
        Sidedness::TwoSided => (stim_mean, unstim_mean),
        Sidedness::OneSidedIncrease => {
            // E[p 1{p_s > p_u}] via the size-biased shift a -> a + 1 of the beta density.
            let mass = beta_greater_unchecked(&stim, &unstim);
            if mass <= 0.0 {
                (stim_mean, unstim_mean)
            } else {
                let stim_up = IncBeta::new_unchecked(stim.a() + 1.0, stim.b());
                let unstim_up = IncBeta::new_unchecked(unstim.a() + 1.0, unstim.b());
                let s = stim_mean * beta_greater_unchecked(&stim_up, &unstim) / mass;
                let u = unstim_mean * beta_greater_unchecked(&stim, &unstim_up) / mass;
                (s, u)
            }
        }
    };
    let mean_p_s = (1.0 - z) * null_mean + z * alt_s;
    let mean_p_u = (1.0 - z) * null_mean + z * alt_u;
    Ok(ProportionSummary { mean_p_u, mean_p_s, mean_diff: z * (alt_s - alt_u) })
}

/// Subjects prepared for repeated likelihood evaluation. Subjects sharing the
/// same four counts are evaluated once.
#[derive(Debug, Clone)]
pub struct BetaBinModel {
    records: Vec<CountPair>,
    side: Sidedness,
    unique: Vec<CountPair>,
    group_of: Vec<usize>,
}

impl BetaBinModel {
    pub fn new(records: Vec<CountPair>, side: Sidedness) -> Result<Self> {
        let mut index: BTreeMap<(u64, u64, u64, u64), usize> = BTreeMap::new();
        for y in &records {
            y.validate()?;
            if !y.is_fittable() {
                return Err(MimosaError::domain(format!(
                    "subject {} has a zero total and cannot be fitted",
                    y.subject_id
                )));
            }
            let next = index.len();
            index.entry(y.key()).or_insert(next);
        }
        let mut unique = vec![None; index.len()];
        for y in &records {
            let g = index[&y.key()];
            if unique[g].is_none() {
                unique[g] = Some(y.clone());
            }
        }
        let unique: Vec<CountPair> = unique.into_iter().map(|u| u.expect("every group has a member")).collect();
        let group_of = records.iter().map(|y| index[&y.key()]).collect();
        Ok(BetaBinModel { records, side, unique, group_of })
    }

    pub fn records(&self) -> &[CountPair] {
        &self.records
    }

    pub fn sidedness(&self) -> Sidedness {
        self.side
    }

    pub fn n_unique(&self) -> usize {
        self.unique.len()
    }

    pub fn hypers_from(shapes: &[f64], w: f64) -> BetaBinHypers {
        BetaBinHypers { alpha_u: shapes[0], beta_u: shapes[1], alpha_s: shapes[2], beta_s: shapes[3], w }
    }

    fn group_marginals(&self, h: &BetaBinHypers) -> Result<Vec<Marginals>> {
        match self.side {
            Sidedness::TwoSided => Ok(self
                .unique
                .iter()
                .map(|y| Marginals { ln_l0: ln_l0_unchecked(h, y), ln_l1: ln_l1_two_unchecked(h, y) })
                .collect()),
            Sidedness::OneSidedIncrease => {
                let ln_prior = ln_prior_constraint_mass(h)?;
                Ok(self
                    .unique
                    .par_iter()
                    .map(|y| Marginals {
                        ln_l0: ln_l0_unchecked(h, y),
                        ln_l1: ln_l1_one_with_prior_mass(h, y, ln_prior),
                    })
                    .collect())
            }
        }
    }
}

impl MixtureModel for BetaBinModel {
    type Hypers = BetaBinHypers;

    fn n_subjects(&self) -> usize {
        self.records.len()
    }

    fn subject_id(&self, i: usize) -> &str {
        &self.records[i].subject_id
    }

    fn n_shapes(&self) -> usize {
        4
    }

    fn shape_blocks(&self) -> Vec<Vec<usize>> {
        vec![vec![0, 1], vec![2, 3]]
    }

    fn shape_names(&self) -> Vec<String> {
        ["alpha_u", "beta_u", "alpha_s", "beta_s"].iter().map(|s| s.to_string()).collect()
    }

    fn shapes_of(h: &BetaBinHypers) -> Vec<f64> {
        vec![h.alpha_u, h.beta_u, h.alpha_s, h.beta_s]
    }

    fn weight_of(h: &BetaBinHypers) -> f64 {
        h.w
    }

    fn assemble(&self, shapes: &[f64], w: f64) -> BetaBinHypers {
        Self::hypers_from(shapes, w)
    }

    fn log_marginals(&self, shapes: &[f64]) -> Result<Vec<Marginals>> {
        let h = Self::hypers_from(shapes, 0.5);
        h.validate()?;
        let groups = self.group_marginals(&h)?;
        Ok(self.group_of.iter().map(|&g| groups[g]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(n_s: u64, total_s: u64, n_u: u64, total_u: u64) -> CountPair {
        CountPair::new("s", n_s, total_s, n_u, total_u).unwrap()
    }

    fn ln_choose_f(n: u64, k: u64) -> f64 {
        log_choose(n, k)
    }

    #[test]
    fn empty_tables_have_unit_likelihood() {
        let h = BetaBinHypers::new(2.0, 3.0, 4.0, 5.0, 0.5).unwrap();
        let y = CountPair { subject_id: "e".into(), n_u: 0, total_u: 0, n_s: 0, total_s: 0 };
        assert!(log_l0(&h, &y).unwrap().abs() < 1e-14);
        assert!(log_l1_two_sided(&h, &y).unwrap().abs() < 1e-14);
    }

    #[test]
    fn uniform_prior_null_identity() {
        let h = BetaBinHypers::new(1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        for &(n_s, total_s, n_u, total_u) in &[(3, 10, 1, 12), (0, 5, 5, 5), (7, 7, 0, 9)] {
            let y = pair(n_s, total_s, n_u, total_u);
            let expected = ln_choose_f(total_u, n_u) + ln_choose_f(total_s, n_s)
                - ((total_u + total_s + 1) as f64).ln()
                - ln_choose_f(total_u + total_s, n_u + n_s);
            assert!((log_l0(&h, &y).unwrap() - expected).abs() < 1e-12);
            let alt = -(((total_u + 1) * (total_s + 1)) as f64).ln();
            assert!((log_l1_two_sided(&h, &y).unwrap() - alt).abs() < 1e-12);
        }
    }

    #[test]
    fn no_unstimulated_cells_reduces_to_single_sample() {
        let h = BetaBinHypers::new(2.5, 9.0, 4.0, 7.0, 0.5).unwrap();
        let y = CountPair { subject_id: "x".into(), n_u: 0, total_u: 0, n_s: 4, total_s: 11 };
        let single = log_choose(11, 4) + ln_beta_unchecked(4.0 + 4.0, 7.0 + 7.0) - ln_beta_unchecked(4.0, 7.0);
        assert!((log_l1_two_sided(&h, &y).unwrap() - single).abs() < 1e-12);
    }

    #[test]
    fn symmetric_one_sided_equals_two_sided() {
        let h = BetaBinHypers::new(3.0, 50.0, 3.0, 50.0, 0.5).unwrap();
        let y = pair(4, 100, 4, 100);
        let one = log_l1_one_sided(&h, &y).unwrap();
        let two = log_l1_two_sided(&h, &y).unwrap();
        assert!((one - two).abs() < 1e-9, "{one} vs {two}");
    }

    #[test]
    fn separated_posteriors_limit() {
        let h = BetaBinHypers::new(2.0, 200.0, 2.0, 100.0, 0.5).unwrap();
        let y = pair(400, 1000, 2, 1000);
        let prior = ln_prior_constraint_mass(&h).unwrap();
        let one = log_l1_one_sided(&h, &y).unwrap();
        let two = log_l1_two_sided(&h, &y).unwrap();
        assert!((one - (two - prior)).abs() < 1e-9);
    }

    #[test]
    fn degenerate_constraint_is_error() {
        let h = BetaBinHypers::new(1e6, 1.0, 1.0, 1e6, 0.5).unwrap();
        let y = pair(1, 10, 1, 10);
        assert!(matches!(log_l1_one_sided(&h, &y), Err(MimosaError::DegenerateConstraint(_))));
    }

    #[test]
    fn responsibility_limits() {
        let y = pair(5, 100, 1, 100);
        let h0 = BetaBinHypers::new(1.0, 20.0, 2.0, 20.0, 0.0).unwrap();
        assert_eq!(responsibility(&h0, &y, Sidedness::TwoSided).unwrap(), 0.0);
        let h1 = BetaBinHypers { w: 1.0, ..h0 };
        assert_eq!(responsibility(&h1, &y, Sidedness::OneSidedIncrease).unwrap(), 1.0);
        assert_eq!(responsibility_from_logs(0.5, -3.2, -3.2), 0.5);
    }

    #[test]
    fn responsibility_monotone_in_weight() {
        let y = pair(9, 500, 3, 450);
        let mut last = 0.0;
        for k in 0..=20 {
            let w = k as f64 / 20.0;
            let h = BetaBinHypers::new(2.0, 300.0, 6.0, 300.0, w).unwrap();
            let r = responsibility(&h, &y, Sidedness::OneSidedIncrease).unwrap();
            assert!(r >= last - 1e-15);
            last = r;
        }
    }

    #[test]
    fn summaries_null_weight_has_no_difference() {
        let h = BetaBinHypers::new(2.0, 100.0, 5.0, 100.0, 0.0).unwrap();
        let s = posterior_proportion_summaries(&h, &pair(10, 200, 1, 200), Sidedness::TwoSided).unwrap();
        assert_eq!(s.mean_diff, 0.0);
    }

    #[test]
    fn summaries_conjugate_mean() {
        let h = BetaBinHypers::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let s = posterior_proportion_summaries(&h, &pair(7, 20, 3, 30), Sidedness::TwoSided).unwrap();
        assert!((s.mean_p_s - 8.0 / 22.0).abs() < 1e-14);
        assert!((s.mean_p_u - 4.0 / 32.0).abs() < 1e-14);
    }

    #[test]
    fn model_groups_duplicate_counts() {
        let recs = vec![
            CountPair::new("a", 1, 100, 0, 100).unwrap(),
            CountPair::new("b", 1, 100, 0, 100).unwrap(),
            CountPair::new("c", 4, 100, 0, 100).unwrap(),
        ];
        let m = BetaBinModel::new(recs.clone(), Sidedness::OneSidedIncrease).unwrap();
        assert_eq!(m.n_unique(), 2);
        let shapes = [2.0, 50.0, 3.0, 40.0];
        let lm = m.log_marginals(&shapes).unwrap();
        let h = BetaBinModel::hypers_from(&shapes, 0.5);
        for (y, l) in recs.iter().zip(&lm) {
            assert_eq!(l.ln_l0, log_l0(&h, y).unwrap());
            assert!((l.ln_l1 - log_l1_one_sided(&h, y).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_records_rejected() {
        assert!(CountPair::new("bad", 5, 4, 0, 1).is_err());
        let zero = CountPair { subject_id: "z".into(), n_u: 0, total_u: 0, n_s: 0, total_s: 3 };
        assert!(BetaBinModel::new(vec![zero], Sidedness::TwoSided).is_err());
    }
}
