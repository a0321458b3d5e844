//! Metropolis-Hastings-within-Gibbs sampling for the mixture models.
//!
//! Each sweep updates each block of shape parameters with a log-normal random
//! walk, then draws the indicators `z` and the weight `w` from their full
//! conditionals. During adaptation the walk learns the block's
//! covariance on the log scale and a Robbins-Monro scale; both are frozen
//! afterwards, so the retained draws come from a fixed reversible kernel.

use std::io::Write;

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::em::{canonical_order, initialize, initialize_mv, restore_order, EmConfig, MIN_INIT_SUBJECTS};
use crate::error::{MimosaError, Result};
use crate::model::{
    observed_loglik, BetaBinHypers, BetaBinModel, CountPair, DirMultHypers, DirMultModel, Marginals, MixtureModel,
    MultiCountPair, Sidedness,
};
use crate::numerics::rng::{hash_label, stream_key, SeededRng};
use crate::numerics::sample;

/// Post-burn-in acceptance below this marks the chain as stuck.
const MIN_ACCEPTANCE: f64 = 0.01;
/// Iterations of history before the empirical covariance replaces the initial one.
const COVARIANCE_WARMUP: usize = 200;
/// Proposal standard deviation on the log scale before any adaptation.
const INITIAL_LOG_STEP: f64 = 0.1;
/// Stream for the hyperparameter and weight updates; subject streams are keyed by id.
const MAIN_STREAM: u64 = 0x6d61_696e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Last iteration (exclusive) with adaptation; `None` means `burn_in`.
    pub adapt_until: Option<usize>,
    pub target_accept: f64,
    /// Mean of the exponential prior on every shape parameter.
    pub prior_mean_hypers: f64,
    pub sidedness: Sidedness,
    /// Keep the thinned hyperparameter draws in the fit.
    pub keep_trace: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 50_000,
            burn_in: 5_000,
            thin: 10,
            seed: 0,
            adapt_until: None,
            target_accept: 0.3,
            prior_mean_hypers: 1e3,
            sidedness: Sidedness::OneSidedIncrease,
            keep_trace: false,
        }
    }
}

impl McmcConfig {
    /// Two million iterations, for final analyses rather than exploration.
    pub fn long_run() -> Self {
        McmcConfig { iterations: 2_000_000, burn_in: 50_000, ..Default::default() }
    }

    pub fn adapt_end(&self) -> usize {
        self.adapt_until.unwrap_or(self.burn_in)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 {
            return Err(MimosaError::Config("iterations and thin must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(MimosaError::Config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.adapt_end() > self.burn_in {
            return Err(MimosaError::Config("adapt_until must not exceed burn_in".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(MimosaError::Config("target_accept must lie in (0, 1)".into()));
        }
        if !(self.prior_mean_hypers > 0.0 && self.prior_mean_hypers.is_finite()) {
            return Err(MimosaError::Config("prior_mean_hypers must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub shapes: Vec<f64>,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McmcFit<H> {
    /// Fraction of retained draws with `z_i = 1`, in input order.
    pub posterior_response_prob: Vec<f64>,
    pub hyper_posterior_means: H,
    pub w_posterior_mean: f64,
    /// Shapes in model order followed by `w`.
    pub chain_summary: Vec<ParamSummary>,
    /// Post-burn-in acceptance rate of the block containing each shape.
    pub acceptance_rates: Vec<(String, f64)>,
    /// Some block accepted fewer than 1% of its post-burn-in proposals.
    pub diagnostic_failure: bool,
    pub shape_names: Vec<String>,
    pub trace: Vec<TraceRow>,
}

impl<H> McmcFit<H> {
    /// Writes the thinned trace as `iteration,<shape names>,w`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["iteration".to_string()];
        header.extend(self.shape_names.iter().cloned());
        header.push("w".into());
        writer.write_record(&header)?;
        for row in &self.trace {
            let mut record = vec![row.iteration.to_string()];
            record.extend(row.shapes.iter().map(|v| v.to_string()));
            record.push(row.w.to_string());
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Draws every `z_i ~ Bernoulli(responsibility_i)` from the subject's own stream.
pub fn gibbs_update_z(marginals: &[Marginals], w: f64, rngs: &mut [SeededRng]) -> Vec<bool> {
    marginals
        .iter()
        .zip(rngs.iter_mut())
        .map(|(m, rng)| rng.random::<f64>() < m.responsibility(w))
        .collect()
}

/// Conjugate draw `w ~ Beta(1 + Σz, 1 + I − Σz)` under the uniform prior.
pub fn gibbs_update_w(z: &[bool], rng: &mut SeededRng) -> Result<f64> {
    let k = z.iter().filter(|&&b| b).count() as f64;
    sample::beta(rng, 1.0 + k, 1.0 + z.len() as f64 - k)
}

/// Log density of the shapes given `w` with the indicators summed out,
/// `Σ ln[(1 − w) L0 + w L1] − Σ shape / prior_mean`, up to a constant.
///
/// Updating the shapes against this target and then redrawing `z` from its
/// full conditional samples `(shapes, z)` jointly given `w`, which leaves the
/// same posterior invariant as conditioning on `z` but mixes far faster.
pub fn log_target(marginals: &[Marginals], w: f64, shapes: &[f64], prior_mean: f64) -> f64 {
    observed_loglik(marginals, w) - shapes.iter().sum::<f64>() / prior_mean
}

/// One Robbins-Monro step on the log proposal scale toward `target`.
pub fn adapt_step_size(ln_scale: f64, accept_prob: f64, iteration: usize, target: f64) -> f64 {
    let gain = ((iteration + 1) as f64).powf(-0.6);
    ln_scale + gain * (accept_prob - target)
}

/// Lower Cholesky factor of a symmetric positive definite matrix, `None` otherwise.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Random-walk state for one block of shapes, on the log scale.
struct BlockProposal {
    indices: Vec<usize>,
    ln_scale: f64,
    chol: Vec<Vec<f64>>,
    // running moments of the log-shapes seen during adaptation
    count: usize,
    mean: Vec<f64>,
    comoment: Vec<Vec<f64>>,
    accepted: usize,
    proposed: usize,
}

impl BlockProposal {
    fn new(indices: Vec<usize>) -> Self {
        let d = indices.len();
        let identity = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        BlockProposal {
            indices,
            // 2.38/√d is the classical optimal scaling for a Gaussian target
            ln_scale: (2.38 / (d as f64).sqrt()).ln(),
            chol: identity,
            count: 0,
            mean: vec![0.0; d],
            comoment: vec![vec![0.0; d]; d],
            accepted: 0,
            proposed: 0,
        }
    }

    fn record(&mut self, shapes: &[f64]) {
        let x: Vec<f64> = self.indices.iter().map(|&j| shapes[j].ln()).collect();
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(xi, mi)| xi - mi).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        for i in 0..x.len() {
            for j in 0..x.len() {
                self.comoment[i][j] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    fn refresh_covariance(&mut self) {
        let d = self.indices.len();
        if self.count < COVARIANCE_WARMUP {
            return;
        }
        let n = (self.count - 1) as f64;
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| self.comoment[i][j] / n + if i == j { 1e-8 } else { 0.0 }).collect())
            .collect();
        if let Some(chol) = cholesky(&cov) {
            self.chol = chol;
        }
    }

    /// Log-scale increments `exp(ln_scale) · L · ξ`, using the initial step until
    /// the empirical covariance is available.
    fn increments(&self, rng: &mut SeededRng) -> Vec<f64> {
        let d = self.indices.len();
        let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let base = if self.count < COVARIANCE_WARMUP { INITIAL_LOG_STEP } else { 1.0 };
        let scale = self.ln_scale.exp() * base;
        (0..d).map(|i| scale * (0..=i).map(|k| self.chol[i][k] * xi[k]).sum::<f64>()).collect()
    }
}

/// Current state of the chain with the marginals cached at `shapes`.
struct ChainState {
    shapes: Vec<f64>,
    w: f64,
    z: Vec<bool>,
    marginals: Vec<Marginals>,
}

/// Outcome of one Metropolis-Hastings step.
#[derive(Debug, Clone, Copy)]
struct Step {
    accept_prob: f64,
    accepted: bool,
}

const REJECTED: Step = Step { accept_prob: 0.0, accepted: false };

/// Proposes new values for one block and applies the Metropolis-Hastings decision.
fn mh_update_block<M: MixtureModel>(
    model: &M,
    state: &mut ChainState,
    block: &BlockProposal,
    prior_mean: f64,
    rng: &mut SeededRng,
) -> Step {
    let eps = block.increments(rng);
    let mut proposal = state.shapes.clone();
    for (&j, e) in block.indices.iter().zip(&eps) {
        proposal[j] *= e.exp();
    }
    let u: f64 = rng.random();
    if proposal.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return REJECTED;
    }
    // a degenerate one-sided constraint has zero likelihood
    let Ok(marginals) = model.log_marginals(&proposal) else {
        return REJECTED;
    };
    let current = log_target(&state.marginals, state.w, &state.shapes, prior_mean);
    let proposed = log_target(&marginals, state.w, &proposal, prior_mean);
    // the log-normal walk contributes the Jacobian Π x'/x
    let ln_ratio = proposed - current + eps.iter().sum::<f64>();
    if ln_ratio.is_nan() {
        return REJECTED;
    }
    let accepted = u.ln() < ln_ratio;
    if accepted {
        state.shapes = proposal;
        state.marginals = marginals;
    }
    Step { accept_prob: ln_ratio.min(0.0).exp(), accepted }
}

/// Geyer's initial monotone sequence estimate of the effective sample size.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n.max(1) as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let var = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return 1.0;
    }
    let rho = |lag: usize| centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * var);
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (rho(lag) + rho(lag + 1)).min(prev_pair);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    (n as f64 / tau.max(1e-12)).max(1.0)
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 { x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Runs the sampler on a model whose subjects are already in canonical order.
fn run_chain<M: MixtureModel>(
    model: &M,
    init_shapes: Vec<f64>,
    init_w: f64,
    init_z: Vec<bool>,
    cfg: &McmcConfig,
) -> Result<McmcFit<M::Hypers>> {
    let n = model.n_subjects();
    let marginals = model
        .log_marginals(&init_shapes)
        .map_err(|e| MimosaError::Initialization(format!("starting hyperparameters are infeasible: {e}")))?;
    let mut state = ChainState { shapes: init_shapes, w: init_w, z: init_z, marginals };
    let mut main = SeededRng::new(cfg.seed, MAIN_STREAM);
    let mut subject_rngs: Vec<SeededRng> =
        (0..n).map(|i| SeededRng::new(cfg.seed, stream_key(&[hash_label(model.subject_id(i))]))).collect();
    let mut blocks: Vec<BlockProposal> = model.shape_blocks().into_iter().map(BlockProposal::new).collect();
    let adapt_end = cfg.adapt_end();

    let mut z_hits = vec![0usize; n];
    let mut draws: Vec<TraceRow> = Vec::with_capacity((cfg.iterations - cfg.burn_in) / cfg.thin + 1);
    for t in 0..cfg.iterations {
        for block in blocks.iter_mut() {
            let step = mh_update_block(model, &mut state, block, cfg.prior_mean_hypers, &mut main);
            if t < adapt_end {
                block.ln_scale = adapt_step_size(block.ln_scale, step.accept_prob, t, cfg.target_accept);
                block.record(&state.shapes);
                if block.count == COVARIANCE_WARMUP || block.count % 50 == 0 {
                    // switching from the initial step to the learned covariance
                    // needs the scale to restart from the optimal value
                    if block.count == COVARIANCE_WARMUP {
                        block.ln_scale = (2.38 / (block.indices.len() as f64).sqrt()).ln();
                    }
                    block.refresh_covariance();
                }
            } else if t >= cfg.burn_in {
                block.proposed += 1;
                block.accepted += usize::from(step.accepted);
            }
        }
        state.z = gibbs_update_z(&state.marginals, state.w, &mut subject_rngs);
        state.w = gibbs_update_w(&state.z, &mut main)?;
        if t >= cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0 {
            for (hits, &zi) in z_hits.iter_mut().zip(&state.z) {
                *hits += usize::from(zi);
            }
            draws.push(TraceRow { iteration: t, shapes: state.shapes.clone(), w: state.w });
        }
    }
    summarize(model, blocks, z_hits, draws, cfg)
}

fn summarize<M: MixtureModel>(
    model: &M,
    blocks: Vec<BlockProposal>,
    z_hits: Vec<usize>,
    draws: Vec<TraceRow>,
    cfg: &McmcConfig,
) -> Result<McmcFit<M::Hypers>> {
    let kept = draws.len() as f64;
    let names = model.shape_names();
    let mut chain_summary = Vec::with_capacity(names.len() + 1);
    let mut means = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let series: Vec<f64> = draws.iter().map(|d| d.shapes[j]).collect();
        let (mean, sd) = mean_sd(&series);
        means.push(mean);
        chain_summary.push(ParamSummary { name: name.clone(), mean, sd, ess: effective_sample_size(&series) });
    }
    let w_series: Vec<f64> = draws.iter().map(|d| d.w).collect();
    let (w_mean, w_sd) = mean_sd(&w_series);
    chain_summary.push(ParamSummary { name: "w".into(), mean: w_mean, sd: w_sd, ess: effective_sample_size(&w_series) });

    let mut acceptance_rates = vec![(String::new(), 0.0); names.len()];
    let mut diagnostic_failure = false;
    for block in &blocks {
        let rate = block.accepted as f64 / block.proposed.max(1) as f64;
        if rate < MIN_ACCEPTANCE {
            diagnostic_failure = true;
            let members: Vec<&str> = block.indices.iter().map(|&j| names[j].as_str()).collect();
            warn!("block ({}) accepted {:.4} of post-burn-in proposals", members.join(", "), rate);
        }
        for &j in &block.indices {
            acceptance_rates[j] = (names[j].clone(), rate);
        }
    }
    Ok(McmcFit {
        posterior_response_prob: z_hits.iter().map(|&h| h as f64 / kept).collect(),
        hyper_posterior_means: model.assemble(&means, w_mean),
        w_posterior_mean: w_mean,
        chain_summary,
        acceptance_rates,
        diagnostic_failure,
        shape_names: names,
        trace: if cfg.keep_trace { draws } else { Vec::new() },
    })
}

fn init_config(cfg: &McmcConfig) -> EmConfig {
    EmConfig { sidedness: cfg.sidedness, seed: cfg.seed, ..Default::default() }
}

fn check_subjects(n: usize) -> Result<()> {
    if n < 2 {
        return Err(MimosaError::Initialization(format!("MCMC needs at least two subjects, got {n}")));
    }
    Ok(())
}

/// Start for samples too small for the test-based initializer: both
/// components at the pooled proportion with the prior-mean concentration,
/// `w = 0.5`, nobody a responder.
fn pooled_start(pooled: &[f64], concentration: f64, n_subjects: usize) -> (Vec<f64>, f64, Vec<bool>) {
    let total: f64 = pooled.iter().sum();
    let block: Vec<f64> = pooled.iter().map(|c| concentration * c / total).collect();
    ([block.clone(), block].concat(), 0.5, vec![false; n_subjects])
}

/// Samples the beta-binomial mixture posterior.
pub fn fit_mcmc(data: &[CountPair], cfg: &McmcConfig) -> Result<McmcFit<BetaBinHypers>> {
    cfg.validate()?;
    check_subjects(data.len())?;
    let order = canonical_order(data, |y| &y.subject_id);
    let sorted: Vec<CountPair> = order.iter().map(|&i| data[i].clone()).collect();
    let (shapes, w, z) = if sorted.len() >= MIN_INIT_SUBJECTS {
        let init = initialize(&sorted, &init_config(cfg))?;
        (BetaBinModel::shapes_of(&init.hypers), init.hypers.w, init.assignments)
    } else {
        // half-cell pseudo-counts keep both shapes positive
        let positive = sorted.iter().map(|y| (y.n_s + y.n_u) as f64).sum::<f64>() + 0.5;
        let negative = sorted.iter().map(|y| (y.total_s - y.n_s + y.total_u - y.n_u) as f64).sum::<f64>() + 0.5;
        pooled_start(&[positive, negative], cfg.prior_mean_hypers, sorted.len())
    };
    let model = BetaBinModel::new(sorted, cfg.sidedness)?;
    let mut fit = run_chain(&model, shapes, w, z, cfg)?;
    fit.posterior_response_prob = restore_order(&fit.posterior_response_prob, &order);
    Ok(fit)
}

/// Samples the Dirichlet-multinomial mixture posterior.
pub fn fit_mcmc_mv(data: &[MultiCountPair], cfg: &McmcConfig) -> Result<McmcFit<DirMultHypers>> {
    cfg.validate()?;
    check_subjects(data.len())?;
    let order = canonical_order(data, |y| &y.subject_id);
    let sorted: Vec<MultiCountPair> = order.iter().map(|&i| data[i].clone()).collect();
    let (shapes, w, z) = if sorted.len() >= MIN_INIT_SUBJECTS {
        let init = initialize_mv(&sorted, &init_config(cfg))?;
        (DirMultModel::shapes_of(&init.hypers), init.hypers.w, init.assignments)
    } else {
        let m = sorted[0].n_categories();
        let pooled: Vec<f64> =
            (0..m).map(|k| sorted.iter().map(|y| (y.n_s[k] + y.n_u[k]) as f64).sum::<f64>() + 0.5).collect();
        pooled_start(&pooled, cfg.prior_mean_hypers, sorted.len())
    };
    let model = DirMultModel::new(sorted)?;
    let mut fit = run_chain(&model, shapes, w, z, cfg)?;
    fit.posterior_response_prob = restore_order(&fit.posterior_response_prob, &order);
    Ok(fit)
}
