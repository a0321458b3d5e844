//! Empirical-Bayes EM for the beta-binomial and Dirichlet-multinomial mixtures.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::baselines::{fisher_exact, log_fold_change, multi_category_test, MultiTestConfig};
use crate::error::{MimosaError, Result};
use crate::model::{
    expected_complete_loglik, observed_loglik, BetaBinHypers, BetaBinModel, CountPair, DirMultHypers, DirMultModel,
    MixtureModel, MultiCountPair, Sidedness,
};
use crate::numerics::optim::{nelder_mead, NelderMeadOptions};

/// Lower bound on every shape parameter during optimization.
pub const SHAPE_FLOOR: f64 = 1e-6;
/// Upper bound on the prior concentration chosen at initialization.
const MAX_INIT_CONCENTRATION: f64 = 1e6;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iters: usize,
    pub loglik_tol: f64,
    pub init_pvalue_threshold: f64,
    pub optimizer_tol: f64,
    pub optimizer_max_evals: usize,
    pub sidedness: Sidedness,
    /// Monte Carlo resamples for the multivariate Fisher test at initialization.
    pub init_resamples: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 200,
            loglik_tol: 1e-6,
            init_pvalue_threshold: 0.05,
            optimizer_tol: 1e-8,
            optimizer_max_evals: 2000,
            sidedness: Sidedness::OneSidedIncrease,
            init_resamples: 2000,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(MimosaError::Config("max_iters must be positive".into()));
        }
        if !(self.loglik_tol > 0.0) || !(self.optimizer_tol > 0.0) {
            return Err(MimosaError::Config("EM tolerances must be positive".into()));
        }
        if !(self.init_pvalue_threshold > 0.0 && self.init_pvalue_threshold < 1.0) {
            return Err(MimosaError::Config("init_pvalue_threshold must lie in (0, 1)".into()));
        }
        if self.optimizer_max_evals == 0 {
            return Err(MimosaError::Config("optimizer_max_evals must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmFit<H> {
    pub hypers: H,
    /// One per subject, in input order.
    pub responsibilities: Vec<f64>,
    pub observed_loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Initialization fell back to fold-change quartiles.
    pub init_fallback: bool,
    /// M-steps whose shape update was rejected for failing to improve the objective.
    pub rejected_m_steps: usize,
}

/// Starting point for EM.
#[derive(Debug, Clone)]
pub struct Initialization<H> {
    pub hypers: H,
    /// Hard assignments `z⁽⁰⁾` in input order.
    pub assignments: Vec<bool>,
    pub used_fallback: bool,
}

/// Method-of-moments beta shapes from sample proportions:
/// `α = m(m(1 − m)/v − 1)`, `β = (1 − m)(m(1 − m)/v − 1)` with the unbiased variance.
pub fn method_of_moments(props: &[f64]) -> Result<(f64, f64)> {
    if props.len() < 2 {
        return Err(MimosaError::Initialization("method of moments needs at least two proportions".into()));
    }
    let n = props.len() as f64;
    let m = props.iter().sum::<f64>() / n;
    let v = props.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (n - 1.0);
    let c = m * (1.0 - m) / v - 1.0;
    if !(c > 0.0) || !(m > 0.0 && m < 1.0) {
        return Err(MimosaError::Initialization(format!(
            "moments (mean {m}, variance {v}) admit no beta distribution"
        )));
    }
    Ok((m * c, (1.0 - m) * c))
}

/// Observed category proportions with their denominators.
struct Sample {
    props: Vec<f64>,
    total: f64,
}

/// Dirichlet parameters matching the pooled moments of `samples`, with the
/// multinomial sampling variance removed. `fallback_inv` supplies `1/(s+1)`
/// when fewer than two samples are available.
fn dirichlet_moments(samples: &[&Sample], fallback_inv: Option<f64>) -> (Vec<f64>, f64) {
    let m = samples[0].props.len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; m];
    for s in samples {
        for (acc, p) in mean.iter_mut().zip(&s.props) {
            *acc += p / n;
        }
    }
    let mut inv = fallback_inv.unwrap_or(1.0 / (1e3 + 1.0));
    if samples.len() >= 2 {
        let mut var = 0.0;
        for s in samples {
            var += s.props.iter().zip(&mean).map(|(p, mu)| (p - mu).powi(2)).sum::<f64>();
        }
        var /= n - 1.0;
        let spread: f64 = mean.iter().map(|mu| mu * (1.0 - mu)).sum();
        let h = samples.iter().map(|s| 1.0 / s.total).sum::<f64>() / n;
        // Var(n_k/N) = m_k(1 - m_k)[1/N + (1 - 1/N)/(s + 1)]
        if spread > 0.0 && h < 1.0 {
            inv = (var / spread - h) / (1.0 - h);
        }
    }
    let inv = inv.clamp(1.0 / (MAX_INIT_CONCENTRATION + 1.0), 0.5);
    let conc = 1.0 / inv - 1.0;
    (mean.iter().map(|mu| (conc * mu).max(SHAPE_FLOOR)).collect(), inv)
}

/// Shapes for (unstimulated, stimulated-responder) components given hard assignments.
fn component_shapes(unstim: &[Sample], stim: &[Sample], z: &[bool]) -> Vec<f64> {
    let null: Vec<&Sample> = unstim.iter().chain(stim.iter().zip(z).filter(|(_, &zi)| !zi).map(|(s, _)| s)).collect();
    let resp: Vec<&Sample> = stim.iter().zip(z).filter(|(_, &zi)| zi).map(|(s, _)| s).collect();
    let (alpha_u, inv_u) = dirichlet_moments(&null, None);
    let alpha_s = if resp.is_empty() {
        alpha_u.clone()
    } else {
        let fallback = if resp.len() < 2 { Some(inv_u) } else { None };
        dirichlet_moments(&resp, fallback).0
    };
    alpha_u.into_iter().chain(alpha_s).collect()
}

/// `z⁽⁰⁾` from thresholded p-values, or from effect-size quartiles when the
/// threshold leaves one component empty.
fn assign(pvalues: &[f64], effects: &[f64], threshold: f64) -> (Vec<bool>, bool) {
    let z: Vec<bool> = pvalues.iter().map(|&p| p < threshold).collect();
    let k = z.iter().filter(|&&zi| zi).count();
    if k > 0 && k < z.len() {
        return (z, false);
    }
    let n = effects.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| effects[a].total_cmp(&effects[b]).then(a.cmp(&b)));
    let top = n.div_ceil(4).max(1);
    let mut z = vec![false; n];
    for &i in &order[n - top..] {
        z[i] = true;
    }
    (z, true)
}

fn clip_weight(z: &[bool]) -> f64 {
    let w = z.iter().filter(|&&zi| zi).count() as f64 / z.len() as f64;
    w.clamp(0.05, 0.95)
}

/// Fewest subjects the test-based initialization accepts.
pub(crate) const MIN_INIT_SUBJECTS: usize = 4;

fn check_subject_count(n: usize) -> Result<()> {
    if n < MIN_INIT_SUBJECTS {
        return Err(MimosaError::Initialization(format!("EM needs at least {MIN_INIT_SUBJECTS} subjects, got {n}")));
    }
    Ok(())
}

fn binary_sample(n: u64, total: u64) -> Sample {
    let p = n as f64 / total as f64;
    Sample { props: vec![p, 1.0 - p], total: total as f64 }
}

fn vector_sample(counts: &[u64]) -> Sample {
    let total: u64 = counts.iter().sum();
    Sample { props: counts.iter().map(|&c| c as f64 / total as f64).collect(), total: total as f64 }
}

/// Fisher-test assignments followed by method-of-moments shapes.
pub fn initialize(data: &[CountPair], cfg: &EmConfig) -> Result<Initialization<BetaBinHypers>> {
    check_subject_count(data.len())?;
    let pvalues: Vec<f64> = data.iter().map(|y| fisher_exact(y, cfg.sidedness).p_value).collect();
    let effects: Vec<f64> = data.iter().map(|y| log_fold_change(y).statistic).collect();
    let (z, used_fallback) = assign(&pvalues, &effects, cfg.init_pvalue_threshold);
    let unstim: Vec<Sample> = data.iter().map(|y| binary_sample(y.n_u, y.total_u)).collect();
    let stim: Vec<Sample> = data.iter().map(|y| binary_sample(y.n_s, y.total_s)).collect();
    let shapes = component_shapes(&unstim, &stim, &z);
    let hypers = BetaBinModel::hypers_from(&shapes, clip_weight(&z));
    Ok(Initialization { hypers, assignments: z, used_fallback })
}

/// Multivariate analogue of [`initialize`] using the 2×M Fisher test.
pub fn initialize_mv(data: &[MultiCountPair], cfg: &EmConfig) -> Result<Initialization<DirMultHypers>> {
    check_subject_count(data.len())?;
    let test_cfg = MultiTestConfig { resamples: cfg.init_resamples, seed: cfg.seed, ..Default::default() };
    let mut pvalues = Vec::with_capacity(data.len());
    let mut effects = Vec::with_capacity(data.len());
    for y in data {
        let r = multi_category_test(y, &test_cfg)?;
        pvalues.push(r.fisher.p_value);
        effects.push(r.lrt.statistic);
    }
    let (z, used_fallback) = assign(&pvalues, &effects, cfg.init_pvalue_threshold);
    let unstim: Vec<Sample> = data.iter().map(|y| vector_sample(&y.n_u)).collect();
    let stim: Vec<Sample> = data.iter().map(|y| vector_sample(&y.n_s)).collect();
    let shapes = component_shapes(&unstim, &stim, &z);
    let m = shapes.len() / 2;
    let hypers = DirMultHypers { alpha_u: shapes[..m].to_vec(), alpha_s: shapes[m..].to_vec(), w: clip_weight(&z) };
    Ok(Initialization { hypers, assignments: z, used_fallback })
}

/// Responsibilities under `hypers`.
pub fn e_step<M: MixtureModel>(model: &M, hypers: &M::Hypers) -> Result<Vec<f64>> {
    let w = M::weight_of(hypers);
    let marginals = model.log_marginals(&M::shapes_of(hypers))?;
    Ok(marginals.iter().map(|m| m.responsibility(w)).collect())
}

#[derive(Debug, Clone)]
pub struct MStep<H> {
    pub hypers: H,
    /// False when the optimizer failed to improve on the previous shapes.
    pub shapes_updated: bool,
}

fn negative_q<M: MixtureModel>(model: &M, shapes: &[f64], resp: &[f64]) -> f64 {
    match model.log_marginals(shapes) {
        Ok(marginals) => -expected_complete_loglik(&marginals, resp, 0.5),
        Err(_) => f64::INFINITY,
    }
}

/// Closed-form weight update and a log-scale simplex search over the shapes.
/// The shapes are only replaced when the expected complete-data
/// log-likelihood strictly improves.
/// Maps the shapes of each block to log-ratios against the block's last shape
/// followed by the log of the block total. Mean and concentration then move
/// along separate axes, which the simplex search handles far better than raw
/// log-shapes when the concentration is poorly identified.
fn to_block_coords(shapes: &[f64], blocks: &[Vec<usize>]) -> Vec<f64> {
    let mut x = Vec::with_capacity(shapes.len());
    for block in blocks {
        let last = shapes[block[block.len() - 1]].ln();
        x.extend(block[..block.len() - 1].iter().map(|&j| shapes[j].ln() - last));
        x.push(block.iter().map(|&j| shapes[j]).sum::<f64>().ln());
    }
    x
}

fn from_block_coords(x: &[f64], blocks: &[Vec<usize>]) -> Vec<f64> {
    let mut shapes = vec![0.0; blocks.iter().map(Vec::len).sum()];
    let mut offset = 0;
    for block in blocks {
        let k = block.len();
        let ratios = &x[offset..offset + k - 1];
        let ln_total = x[offset + k - 1];
        // log-softmax with the last coordinate pinned at zero
        let top = ratios.iter().fold(0.0f64, |m, &r| m.max(r));
        let ln_norm = top + ((-top).exp() + ratios.iter().map(|r| (r - top).exp()).sum::<f64>()).ln();
        for (i, &j) in block.iter().enumerate() {
            let r = if i + 1 < k { ratios[i] } else { 0.0 };
            shapes[j] = (ln_total + r - ln_norm).exp().max(SHAPE_FLOOR);
        }
        offset += k;
    }
    shapes
}

pub fn m_step<M: MixtureModel>(model: &M, resp: &[f64], prev: &M::Hypers, cfg: &EmConfig) -> Result<MStep<M::Hypers>> {
    if resp.len() != model.n_subjects() || resp.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(MimosaError::domain("responsibilities must lie in [0, 1], one per subject"));
    }
    let w = resp.iter().sum::<f64>() / resp.len() as f64;
    let prev_shapes = M::shapes_of(prev);
    let blocks = model.shape_blocks();
    let from_free = |x: &[f64]| from_block_coords(x, &blocks);
    let f_prev = negative_q(model, &prev_shapes, resp);
    let x0 = to_block_coords(&prev_shapes, &blocks);
    let opts = NelderMeadOptions {
        tol: cfg.optimizer_tol,
        max_evals: cfg.optimizer_max_evals,
        restarts: 1,
        ..Default::default()
    };
    let best = if f_prev.is_finite() {
        nelder_mead(|x| negative_q(model, &from_free(x), resp), &x0, &opts).ok()
    } else {
        None
    };
    let (shapes, updated) = match best {
        Some(min) if min.fmin < f_prev => (from_free(&min.argmin), true),
        _ => (prev_shapes, false),
    };
    Ok(MStep { hypers: model.assemble(&shapes, w), shapes_updated: updated })
}

fn run_em<M: MixtureModel>(model: &M, init: M::Hypers, cfg: &EmConfig) -> Result<EmFit<M::Hypers>> {
    let mut hypers = init;
    let marginals = model.log_marginals(&M::shapes_of(&hypers))?;
    let mut ll = observed_loglik(&marginals, M::weight_of(&hypers));
    if !ll.is_finite() {
        return Err(MimosaError::Initialization(format!("log-likelihood at the starting point is {ll}")));
    }
    let mut resp: Vec<f64> = marginals.iter().map(|m| m.responsibility(M::weight_of(&hypers))).collect();
    let mut trace = vec![ll];
    let mut converged = false;
    let mut rejected = 0;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let step = m_step(model, &resp, &hypers, cfg)?;
        if !step.shapes_updated {
            rejected += 1;
        }
        let marginals = model.log_marginals(&M::shapes_of(&step.hypers))?;
        let w = M::weight_of(&step.hypers);
        let ll_new = observed_loglik(&marginals, w);
        if !(ll_new >= ll - 1e-8) {
            // cannot happen for an exact M-step; keep the previous iterate
            warn!("EM step lowered the log-likelihood from {ll} to {ll_new}; stopping");
            break;
        }
        hypers = step.hypers;
        resp = marginals.iter().map(|m| m.responsibility(w)).collect();
        trace.push(ll_new);
        let delta = (ll_new - ll).abs();
        ll = ll_new;
        debug!("EM iteration {iterations}: loglik {ll_new:.8}, w {w:.6}");
        if delta < cfg.loglik_tol {
            converged = true;
            break;
        }
    }
    Ok(EmFit {
        hypers,
        responsibilities: resp,
        observed_loglik_trace: trace,
        converged,
        iterations,
        init_fallback: false,
        rejected_m_steps: rejected,
    })
}

/// Indices that sort records by subject id; the engines work in this order so
/// results do not depend on input order.
pub(crate) fn canonical_order<T>(records: &[T], id: impl Fn(&T) -> &str) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| id(&records[a]).cmp(id(&records[b])).then(a.cmp(&b)));
    order
}

pub(crate) fn restore_order(values: &[f64], order: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = values[pos];
    }
    out
}

/// Fits the beta-binomial mixture.
pub fn fit_em(data: &[CountPair], cfg: &EmConfig) -> Result<EmFit<BetaBinHypers>> {
    cfg.validate()?;
    let order = canonical_order(data, |y| &y.subject_id);
    let sorted: Vec<CountPair> = order.iter().map(|&i| data[i].clone()).collect();
    let init = initialize(&sorted, cfg)?;
    let model = BetaBinModel::new(sorted, cfg.sidedness)?;
    let mut fit = run_em(&model, init.hypers, cfg)?;
    fit.init_fallback = init.used_fallback;
    fit.responsibilities = restore_order(&fit.responsibilities, &order);
    Ok(fit)
}

/// Fits the Dirichlet-multinomial mixture.
pub fn fit_em_mv(data: &[MultiCountPair], cfg: &EmConfig) -> Result<EmFit<DirMultHypers>> {
    cfg.validate()?;
    if let Some(y) = data.first() {
        if y.n_categories() > 8 {
            warn!(
                "EM with {} categories (more than three markers) tends to converge poorly; consider MCMC",
                y.n_categories()
            );
        }
    }
    let order = canonical_order(data, |y| &y.subject_id);
    let sorted: Vec<MultiCountPair> = order.iter().map(|&i| data[i].clone()).collect();
    let init = initialize_mv(&sorted, cfg)?;
    let model = DirMultModel::new(sorted)?;
    let mut fit = run_em(&model, init.hypers, cfg)?;
    fit.init_fallback = init.used_fallback;
    fit.responsibilities = restore_order(&fit.responsibilities, &order);
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: usize, n_s: u64, total_s: u64, n_u: u64, total_u: u64) -> CountPair {
        CountPair::new(format!("s{id:03}"), n_s, total_s, n_u, total_u).unwrap()
    }

    #[test]
    fn mom_formula() {
        let props = [0.2, 0.3, 0.25];
        let (a, b) = method_of_moments(&props).unwrap();
        let m: f64 = 0.25;
        let v: f64 = 0.0025;
        assert!((a - m * (m * (1.0 - m) / v - 1.0)).abs() < 1e-10);
        assert!((b - (1.0 - m) * (m * (1.0 - m) / v - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn identical_counts_trigger_fallback() {
        let data: Vec<CountPair> = (0..12).map(|i| pair(i, 10 + i as u64, 1000, 10 + i as u64, 1000)).collect();
        let cfg = EmConfig { sidedness: Sidedness::TwoSided, ..Default::default() };
        let init = initialize(&data, &cfg).unwrap();
        assert!(init.used_fallback);
        assert_eq!(init.assignments.iter().filter(|&&z| z).count(), 3);
        assert!((init.hypers.w - 0.25).abs() < 1e-12);
    }

    #[test]
    fn too_few_subjects() {
        let data: Vec<CountPair> = (0..3).map(|i| pair(i, 1, 10, 1, 10)).collect();
        assert!(matches!(fit_em(&data, &EmConfig::default()), Err(MimosaError::Initialization(_))));
    }

    #[test]
    fn weight_update_is_mean_responsibility() {
        let data: Vec<CountPair> = (0..10).map(|i| pair(i, 5 + i as u64, 1000, 4, 1000)).collect();
        let model = BetaBinModel::new(data, Sidedness::TwoSided).unwrap();
        let prev = BetaBinHypers::new(2.0, 400.0, 3.0, 300.0, 0.3).unwrap();
        let step = m_step(&model, &[0.5; 10], &prev, &EmConfig::default()).unwrap();
        assert_eq!(step.hypers.w, 0.5);
        let step = m_step(&model, &[0.0; 10], &prev, &EmConfig::default()).unwrap();
        assert_eq!(step.hypers.w, 0.0);
    }

    #[test]
    fn block_coordinates_round_trip() {
        let blocks = vec![vec![0, 1], vec![2, 3, 4]];
        let shapes = [8.0, 4e4, 0.3, 12.5, 900.0];
        let back = from_block_coords(&to_block_coords(&shapes, &blocks), &blocks);
        for (a, b) in shapes.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9 * a, "{a} vs {b}");
        }
    }

    #[test]
    fn m_step_never_lowers_objective() {
        let data: Vec<CountPair> = (0..20).map(|i| pair(i, 3 + (i as u64 * 7) % 23, 2000, 2 + (i as u64 * 3) % 5, 2000)).collect();
        let model = BetaBinModel::new(data, Sidedness::OneSidedIncrease).unwrap();
        let prev = BetaBinHypers::new(2.0, 900.0, 4.0, 300.0, 0.5).unwrap();
        let resp = e_step(&model, &prev).unwrap();
        let step = m_step(&model, &resp, &prev, &EmConfig::default()).unwrap();
        let q = |h: &BetaBinHypers| {
            let m = model.log_marginals(&BetaBinModel::shapes_of(h)).unwrap();
            expected_complete_loglik(&m, &resp, 0.5)
        };
        assert!(q(&step.hypers) >= q(&prev));
    }
}
