//! Dirichlet-multinomial mixture over biomarker-combination categories.

use serde::{Deserialize, Serialize};

use super::betabin::responsibility_from_logs;
use super::{Marginals, MixtureModel};
use crate::error::{MimosaError, Result};
use crate::numerics::special::{ln_mv_beta_unchecked, log_multinomial_coef};

/// Largest supported number of categories (eight biomarkers).
pub const MAX_CATEGORIES: usize = 256;

/// One subject's stimulated and unstimulated category counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiCountPair {
    pub subject_id: String,
    pub n_s: Vec<u64>,
    pub n_u: Vec<u64>,
    pub category_labels: Vec<String>,
}

impl MultiCountPair {
    pub fn new(subject_id: impl Into<String>, n_s: Vec<u64>, n_u: Vec<u64>, category_labels: Vec<String>) -> Result<Self> {
        let y = MultiCountPair { subject_id: subject_id.into(), n_s, n_u, category_labels };
        y.validate()?;
        Ok(y)
    }

    /// Anonymous category labels `c0, c1, ...`.
    pub fn with_default_labels(subject_id: impl Into<String>, n_s: Vec<u64>, n_u: Vec<u64>) -> Result<Self> {
        let labels = (0..n_s.len()).map(|k| format!("c{k}")).collect();
        Self::new(subject_id, n_s, n_u, labels)
    }

    pub fn n_categories(&self) -> usize {
        self.n_s.len()
    }

    pub fn total_s(&self) -> u64 {
        self.n_s.iter().sum()
    }

    pub fn total_u(&self) -> u64 {
        self.n_u.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_s.len();
        if m < 2 || self.n_u.len() != m || self.category_labels.len() != m {
            return Err(MimosaError::domain(format!(
                "subject {}: count vectors and labels must share a length of at least 2 (got {}, {}, {})",
                self.subject_id,
                self.n_s.len(),
                self.n_u.len(),
                self.category_labels.len()
            )));
        }
        if m > MAX_CATEGORIES {
            return Err(MimosaError::domain(format!("{m} categories exceeds the limit of {MAX_CATEGORIES}")));
        }
        if self.total_s() == 0 || self.total_u() == 0 {
            return Err(MimosaError::domain(format!("subject {}: both conditions need at least one cell", self.subject_id)));
        }
        Ok(())
    }

    fn ln_multinomial_coefs(&self) -> f64 {
        log_multinomial_coef(&self.n_s) + log_multinomial_coef(&self.n_u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirMultHypers {
    pub alpha_u: Vec<f64>,
    pub alpha_s: Vec<f64>,
    pub w: f64,
}

impl DirMultHypers {
    pub fn new(alpha_u: Vec<f64>, alpha_s: Vec<f64>, w: f64) -> Result<Self> {
        let h = DirMultHypers { alpha_u, alpha_s, w };
        h.validate()?;
        Ok(h)
    }

    pub fn n_categories(&self) -> usize {
        self.alpha_u.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_u.len() < 2 || self.alpha_u.len() != self.alpha_s.len() {
            return Err(MimosaError::domain("alpha_u and alpha_s must share a length of at least 2"));
        }
        if self.alpha_u.iter().chain(&self.alpha_s).any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(MimosaError::domain("Dirichlet parameters must be positive"));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(MimosaError::domain(format!("w must lie in [0, 1], got {}", self.w)));
        }
        Ok(())
    }
}

fn check(h: &DirMultHypers, y: &MultiCountPair) -> Result<()> {
    h.validate()?;
    y.validate()?;
    if h.n_categories() != y.n_categories() {
        return Err(MimosaError::domain(format!(
            "hyperparameters have {} categories but subject {} has {}",
            h.n_categories(),
            y.subject_id,
            y.n_categories()
        )));
    }
    Ok(())
}

fn ln_shifted_ratio(alpha: &[f64], counts: &[&[u64]], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(alpha.iter().enumerate().map(|(k, a)| a + counts.iter().map(|c| c[k] as f64).sum::<f64>()));
    ln_mv_beta_unchecked(scratch) - ln_mv_beta_unchecked(alpha)
}

fn ln_l0_unchecked(alpha_u: &[f64], y: &MultiCountPair, scratch: &mut Vec<f64>) -> f64 {
    ln_shifted_ratio(alpha_u, &[&y.n_u, &y.n_s], scratch) + y.ln_multinomial_coefs()
}

fn ln_l1_unchecked(alpha_u: &[f64], alpha_s: &[f64], y: &MultiCountPair, scratch: &mut Vec<f64>) -> f64 {
    ln_shifted_ratio(alpha_u, &[&y.n_u], scratch) + ln_shifted_ratio(alpha_s, &[&y.n_s], scratch) + y.ln_multinomial_coefs()
}

/// Null marginal: both count vectors share one `Dir(α_u)` proportion vector.
pub fn log_l0_mv(h: &DirMultHypers, y: &MultiCountPair) -> Result<f64> {
    check(h, y)?;
    Ok(ln_l0_unchecked(&h.alpha_u, y, &mut Vec::new()))
}

/// Alternative marginal: independent `Dir(α_u)` and `Dir(α_s)` proportion vectors.
pub fn log_l1_mv(h: &DirMultHypers, y: &MultiCountPair) -> Result<f64> {
    check(h, y)?;
    Ok(ln_l1_unchecked(&h.alpha_u, &h.alpha_s, y, &mut Vec::new()))
}

pub fn responsibility_mv(h: &DirMultHypers, y: &MultiCountPair) -> Result<f64> {
    check(h, y)?;
    let mut scratch = Vec::new();
    let l0 = ln_l0_unchecked(&h.alpha_u, y, &mut scratch);
    let l1 = ln_l1_unchecked(&h.alpha_u, &h.alpha_s, y, &mut scratch);
    Ok(responsibility_from_logs(h.w, l0, l1))
}

/// Per-category posterior mean proportions, mixed over the two components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiProportionSummary {
    pub mean_p_u: Vec<f64>,
    pub mean_p_s: Vec<f64>,
    pub mean_diff: Vec<f64>,
}

pub fn posterior_proportion_summaries_mv(h: &DirMultHypers, y: &MultiCountPair) -> Result<MultiProportionSummary> {
    let z = responsibility_mv(h, y)?;
    proportion_summary_given_mv(h, y, z)
}

/// As [`posterior_proportion_summaries_mv`] with the response probability supplied.
pub fn proportion_summary_given_mv(h: &DirMultHypers, y: &MultiCountPair, z: f64) -> Result<MultiProportionSummary> {
    check(h, y)?;
    if !(0.0..=1.0).contains(&z) {
        return Err(MimosaError::domain(format!("response probability must lie in [0, 1], got {z}")));
    }
    let posterior_mean = |alpha: &[f64], counts: &[&[u64]]| -> Vec<f64> {
        let shifted: Vec<f64> =
            alpha.iter().enumerate().map(|(k, a)| a + counts.iter().map(|c| c[k] as f64).sum::<f64>()).collect();
        let total: f64 = shifted.iter().sum();
        shifted.iter().map(|v| v / total).collect()
    };
    let null = posterior_mean(&h.alpha_u, &[&y.n_u, &y.n_s]);
    let alt_u = posterior_mean(&h.alpha_u, &[&y.n_u]);
    let alt_s = posterior_mean(&h.alpha_s, &[&y.n_s]);
    let mix = |alt: &[f64]| -> Vec<f64> { null.iter().zip(alt).map(|(n, a)| (1.0 - z) * n + z * a).collect() };
    Ok(MultiProportionSummary {
        mean_p_u: mix(&alt_u),
        mean_p_s: mix(&alt_s),
        mean_diff: alt_s.iter().zip(&alt_u).map(|(s, u)| z * (s - u)).collect(),
    })
}

/// Multivariate subjects prepared for repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub struct DirMultModel {
    records: Vec<MultiCountPair>,
    n_categories: usize,
    ln_coefs: Vec<f64>,
}

impl DirMultModel {
    pub fn new(records: Vec<MultiCountPair>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| MimosaError::domain("no multivariate records supplied"))?;
        let m = first.n_categories();
        for y in &records {
            y.validate()?;
            if y.n_categories() != m {
                return Err(MimosaError::domain(format!(
                    "subject {} has {} categories, expected {m}",
                    y.subject_id,
                    y.n_categories()
                )));
            }
        }
        let ln_coefs = records.iter().map(|y| y.ln_multinomial_coefs()).collect();
        Ok(DirMultModel { records, n_categories: m, ln_coefs })
    }

    pub fn records(&self) -> &[MultiCountPair] {
        &self.records
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }
}

impl MixtureModel for DirMultModel {
    type Hypers = DirMultHypers;

    fn n_subjects(&self) -> usize {
        self.records.len()
    }

    fn subject_id(&self, i: usize) -> &str {
        &self.records[i].subject_id
    }

    fn n_shapes(&self) -> usize {
        2 * self.n_categories
    }

    fn shape_blocks(&self) -> Vec<Vec<usize>> {
        let m = self.n_categories;
        vec![(0..m).collect(), (m..2 * m).collect()]
    }

    fn shape_names(&self) -> Vec<String> {
        let m = self.n_categories;
        (0..m).map(|k| format!("alpha_u_{k}")).chain((0..m).map(|k| format!("alpha_s_{k}"))).collect()
    }

    fn shapes_of(h: &DirMultHypers) -> Vec<f64> {
        h.alpha_u.iter().chain(&h.alpha_s).copied().collect()
    }

    fn weight_of(h: &DirMultHypers) -> f64 {
        h.w
    }

    fn assemble(&self, shapes: &[f64], w: f64) -> DirMultHypers {
        let m = self.n_categories;
        DirMultHypers { alpha_u: shapes[..m].to_vec(), alpha_s: shapes[m..2 * m].to_vec(), w }
    }

    fn log_marginals(&self, shapes: &[f64]) -> Result<Vec<Marginals>> {
        let m = self.n_categories;
        if shapes.len() != 2 * m || shapes.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(MimosaError::domain("Dirichlet parameters must be positive"));
        }
        let (alpha_u, alpha_s) = shapes.split_at(m);
        let base_u = ln_mv_beta_unchecked(alpha_u);
        let base_s = ln_mv_beta_unchecked(alpha_s);
        let mut scratch = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(self.records.len());
        for (y, coef) in self.records.iter().zip(&self.ln_coefs) {
            scratch.clear();
            scratch.extend(alpha_u.iter().zip(y.n_u.iter().zip(&y.n_s)).map(|(a, (u, s))| a + (u + s) as f64));
            let pooled = ln_mv_beta_unchecked(&scratch) - base_u;
            scratch.clear();
            scratch.extend(alpha_u.iter().zip(&y.n_u).map(|(a, u)| a + *u as f64));
            let unstim = ln_mv_beta_unchecked(&scratch) - base_u;
            scratch.clear();
            scratch.extend(alpha_s.iter().zip(&y.n_s).map(|(a, s)| a + *s as f64));
            let stim = ln_mv_beta_unchecked(&scratch) - base_s;
            out.push(Marginals { ln_l0: pooled + coef, ln_l1: unstim + stim + coef });
        }
        Ok(out)
    }
}
