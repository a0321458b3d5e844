//! Command-line surface: flag parsing, configuration merging, and the fit,
//! simulate, evaluate and baseline commands.
//!
//! A TOML file given with `--config` supplies defaults; flags override it.
//! Every command writes deterministic artifacts (no timestamps), so two runs
//! with the same configuration and seed produce identical bytes.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::baselines::{adjust_pvalues, binomial_lrt, fisher_exact, log_fold_change, multi_category_test, MultiTestConfig, PAdjust};
use crate::em::{fit_em, fit_em_mv, EmConfig};
use crate::error::{MimosaError, Result};
use crate::evaluate::{bh_fdr_curve, nominal_grid, posterior_fdr_curve, roc, signed_score, write_fdr_csv, write_roc_csv};
use crate::io::{ingest_labels, ingest_multivariate, ingest_univariate, write_labels, write_multivariate, write_univariate};
use crate::mcmc::{fit_mcmc, fit_mcmc_mv, McmcConfig};
use crate::model::betabin::proportion_summary_given;
use crate::model::dirmult::proportion_summary_given_mv;
use crate::model::{CountPair, MultiCountPair, Sidedness};
use crate::simulate::{simulate_misspecified, simulate_multivariate, simulate_univariate, Generator, SimHypers, SimSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "mimosa", version, about = "Mixture models for paired stimulated/unstimulated single-cell counts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the mixture model to a count file or to every CSV in a directory.
    Fit(Flags),
    /// Generate labelled replicate datasets.
    Simulate(Flags),
    /// Score a results.json against a labels sidecar: ROC and FDR curves.
    Evaluate(Flags),
    /// Run Fisher, likelihood-ratio and fold-change tests.
    Baseline(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Betabin,
    Dirmult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Em,
    Mcmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sided {
    One,
    Two,
}

impl From<Sided> for Sidedness {
    fn from(s: Sided) -> Self {
        match s {
            Sided::One => Sidedness::OneSidedIncrease,
            Sided::Two => Sidedness::TwoSided,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Count CSV, a directory of them (fit, baseline), or a results.json (evaluate).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long, value_enum)]
    pub sided: Option<Sided>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with the same keys as the flags plus [em], [mcmc], [simulate] and [baseline] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Labels sidecar for evaluate.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Write the thinned MCMC trace to trace.csv.
    #[arg(long)]
    pub trace: bool,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub model: Option<ModelKind>,
    pub method: Option<Method>,
    pub sided: Option<Sided>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub labels: Option<PathBuf>,
    pub trace: Option<bool>,
    pub em: Option<EmConfig>,
    pub mcmc: Option<McmcConfig>,
    pub simulate: Option<SimSpec>,
    pub baseline: Option<MultiTestConfig>,
}

/// Fully merged configuration; echoed into every results file.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub model: ModelKind,
    pub method: Method,
    pub sidedness: Sidedness,
    pub seed: u64,
    pub input: Option<PathBuf>,
    // not echoed, so results are identical wherever they are written
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub labels: Option<PathBuf>,
    #[serde(skip)]
    pub threads: Option<usize>,
    pub trace: bool,
    pub em: EmConfig,
    pub mcmc: McmcConfig,
    pub simulate: SimSpec,
    pub baseline: MultiTestConfig,
}

impl RunConfig {
    pub fn resolve(command: &'static str, flags: &Flags) -> Result<RunConfig> {
        let file = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| MimosaError::Config(format!("cannot read {}: {e}", path.display())))?;
                toml::from_str::<FileConfig>(&text).map_err(|e| MimosaError::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let model = flags.model.or(file.model).unwrap_or(ModelKind::Betabin);
        let method = flags.method.or(file.method).unwrap_or(Method::Em);
        let mut em = file.em.unwrap_or_default();
        let mut mcmc = file.mcmc.unwrap_or_default();
        let mut simulate = file.simulate.unwrap_or_default();
        let mut baseline = file.baseline.unwrap_or_default();
        if let Some(sided) = flags.sided.or(file.sided) {
            let side = Sidedness::from(sided);
            em.sidedness = side;
            mcmc.sidedness = side;
            simulate.sidedness = side;
        }
        let seed = flags.seed.or(file.seed);
        if let Some(seed) = seed {
            em.seed = seed;
            mcmc.seed = seed;
            simulate.seed = seed;
            baseline.seed = seed;
        }
        if let Some(n) = flags.iterations {
            mcmc.iterations = n;
        }
        if let Some(n) = flags.burn_in {
            mcmc.burn_in = n;
        }
        let trace = flags.trace || file.trace.unwrap_or(false);
        mcmc.keep_trace = trace;
        if model == ModelKind::Dirmult && matches!(simulate.hypers, SimHypers::Betabin { .. }) {
            simulate.hypers = SimHypers::eight_category_default();
        }
        em.validate()?;
        mcmc.validate()?;
        simulate.validate()?;
        if flags.threads == Some(0) || file.threads == Some(0) {
            return Err(MimosaError::Config("threads must be positive".into()));
        }
        let sidedness = em.sidedness;
        Ok(RunConfig {
            command,
            model,
            method,
            sidedness,
            seed: seed.unwrap_or(em.seed),
            input: flags.input.clone().or(file.input),
            output_dir: flags.output_dir.clone().or(file.output_dir).unwrap_or_else(|| PathBuf::from(".")),
            labels: flags.labels.clone().or(file.labels),
            threads: flags.threads.or(file.threads),
            trace,
            em,
            mcmc,
            simulate,
            baseline,
        })
    }

    fn input(&self) -> Result<&Path> {
        let path = self.input.as_deref().ok_or_else(|| MimosaError::Config("--input is required".into()))?;
        if !path.exists() {
            return Err(MimosaError::Config(format!("input {} does not exist", path.display())));
        }
        Ok(path)
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn header(cfg: &RunConfig) -> Result<serde_json::Map<String, Value>> {
    let mut map = serde_json::Map::new();
    map.insert("tool".into(), json!("mimosa"));
    map.insert("version".into(), json!(VERSION));
    map.insert("command".into(), json!(cfg.command));
    map.insert("model".into(), serde_json::to_value(cfg.model)?);
    map.insert("seed".into(), json!(cfg.seed));
    map.insert("config".into(), serde_json::to_value(cfg)?);
    Ok(map)
}

/// Count CSVs of a batch directory, sorted; labels sidecars are skipped.
fn batch_inputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv") && !p.to_string_lossy().ends_with(".labels.csv")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(MimosaError::Config(format!("no CSV inputs in {}", dir.display())));
    }
    Ok(files)
}

/// Runs `job` on the input file, or on every file of an input directory in
/// parallel with one output subdirectory per file stem.
fn single_or_batch(cfg: &RunConfig, job: impl Fn(&Path, &Path) -> Result<()> + Sync) -> Result<()> {
    let input = cfg.input()?;
    fs::create_dir_all(&cfg.output_dir)?;
    if !input.is_dir() {
        return job(input, &cfg.output_dir);
    }
    let files = batch_inputs(input)?;
    let outcomes: Vec<(PathBuf, Result<()>)> = files
        .par_iter()
        .map(|file| {
            let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let out = cfg.output_dir.join(stem);
            let result = fs::create_dir_all(&out).map_err(MimosaError::from).and_then(|_| job(file, &out));
            if let Err(e) = &result {
                // each failed file leaves its own machine-readable record
                let _ = write_json(&out.join("error.json"), &error_json(e));
            }
            (file.clone(), result)
        })
        .collect();
    // report the most severe failure, by exit code then file order
    let mut worst: Option<MimosaError> = None;
    for (file, result) in outcomes {
        match result {
            Ok(()) => info!("{}: done", file.display()),
            Err(e) => {
                log::error!("{}: {e}", file.display());
                if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                    worst = Some(e);
                }
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn fit_univariate(cfg: &RunConfig, records: &[CountPair], out: &Path) -> Result<()> {
    let (hypers, z, diagnostics, failure, trace) = match cfg.method {
        Method::Em => {
            let fit = fit_em(records, &cfg.em)?;
            let diag = json!({
                "converged": fit.converged,
                "iterations": fit.iterations,
                "observed_loglik": fit.observed_loglik_trace.last(),
                "observed_loglik_trace": fit.observed_loglik_trace,
                "init_fallback": fit.init_fallback,
                "rejected_m_steps": fit.rejected_m_steps,
            });
            let failure = (!fit.converged).then(|| format!("EM did not converge in {} iterations", fit.iterations));
            (fit.hypers, fit.responsibilities, diag, failure, None)
        }
        Method::Mcmc => {
            let fit = fit_mcmc(records, &cfg.mcmc)?;
            let diag = mcmc_diagnostics(&fit.chain_summary, &fit.acceptance_rates, fit.diagnostic_failure, fit.w_posterior_mean)?;
            let failure = fit.diagnostic_failure.then(|| "MCMC block acceptance fell below 1%".to_string());
            let mut trace = Vec::new();
            if cfg.trace {
                fit.write_trace_csv(&mut trace)?;
            }
            (fit.hyper_posterior_means, fit.posterior_response_prob, diag, failure, cfg.trace.then_some(trace))
        }
    };
    let mut subjects = Vec::with_capacity(records.len());
    let mut diffs = Vec::with_capacity(records.len());
    let summaries = records
        .iter()
        .zip(&z)
        .map(|(y, &zi)| proportion_summary_given(&hypers, y, cfg.sidedness, zi))
        .collect::<Result<Vec<_>>>()?;
    for s in &summaries {
        diffs.push(s.mean_diff);
    }
    let signed = signed_score(&z, &diffs)?;
    for ((y, s), (&zi, &sc)) in records.iter().zip(&summaries).zip(z.iter().zip(&signed)) {
        subjects.push(json!({
            "subject_id": y.subject_id,
            "responsibility": zi,
            "signed_score": sc,
            "mean_p_u": s.mean_p_u,
            "mean_p_s": s.mean_p_s,
            "mean_diff": s.mean_diff,
        }));
    }
    finish_fit(cfg, out, serde_json::to_value(&hypers)?, diagnostics, subjects, failure, trace)
}

fn fit_multivariate(cfg: &RunConfig, records: &[MultiCountPair], out: &Path) -> Result<()> {
    let (hypers, z, diagnostics, failure, trace) = match cfg.method {
        Method::Em => {
            let fit = fit_em_mv(records, &cfg.em)?;
            let diag = json!({
                "converged": fit.converged,
                "iterations": fit.iterations,
                "observed_loglik": fit.observed_loglik_trace.last(),
                "observed_loglik_trace": fit.observed_loglik_trace,
                "init_fallback": fit.init_fallback,
                "rejected_m_steps": fit.rejected_m_steps,
            });
            let failure = (!fit.converged).then(|| format!("EM did not converge in {} iterations", fit.iterations));
            (fit.hypers, fit.responsibilities, diag, failure, None)
        }
        Method::Mcmc => {
            let fit = fit_mcmc_mv(records, &cfg.mcmc)?;
            let diag = mcmc_diagnostics(&fit.chain_summary, &fit.acceptance_rates, fit.diagnostic_failure, fit.w_posterior_mean)?;
            let failure = fit.diagnostic_failure.then(|| "MCMC block acceptance fell below 1%".to_string());
            let mut trace = Vec::new();
            if cfg.trace {
                fit.write_trace_csv(&mut trace)?;
            }
            (fit.hyper_posterior_means, fit.posterior_response_prob, diag, failure, cfg.trace.then_some(trace))
        }
    };
    let mut subjects = Vec::with_capacity(records.len());
    for (y, &zi) in records.iter().zip(&z) {
        let s = proportion_summary_given_mv(&hypers, y, zi)?;
        subjects.push(json!({
            "subject_id": y.subject_id,
            // no direction is defined across categories
            "responsibility": zi,
            "signed_score": zi,
            "categories": y.category_labels,
            "mean_p_u": s.mean_p_u,
            "mean_p_s": s.mean_p_s,
            "mean_diff": s.mean_diff,
        }));
    }
    finish_fit(cfg, out, serde_json::to_value(&hypers)?, diagnostics, subjects, failure, trace)
}

fn mcmc_diagnostics(
    summary: &[crate::mcmc::ParamSummary],
    rates: &[(String, f64)],
    failure: bool,
    w_mean: f64,
) -> Result<Value> {
    Ok(json!({
        "chain_summary": serde_json::to_value(summary)?,
        "acceptance_rates": rates.iter().map(|(n, r)| json!({"parameter": n, "rate": r})).collect::<Vec<_>>(),
        "diagnostic_failure": failure,
        "w_posterior_mean": w_mean,
    }))
}

fn finish_fit(
    cfg: &RunConfig,
    out: &Path,
    hypers: Value,
    diagnostics: Value,
    subjects: Vec<Value>,
    failure: Option<String>,
    trace: Option<Vec<u8>>,
) -> Result<()> {
    let mut doc = header(cfg)?;
    doc.insert("method".into(), serde_json::to_value(cfg.method)?);
    doc.insert("sidedness".into(), serde_json::to_value(cfg.sidedness)?);
    doc.insert("hypers".into(), hypers);
    doc.insert("diagnostics".into(), diagnostics);
    doc.insert("subjects".into(), Value::Array(subjects));
    write_json(&out.join("results.json"), &Value::Object(doc))?;
    if let Some(bytes) = trace {
        fs::write(out.join("trace.csv"), bytes)?;
    }
    match failure {
        Some(msg) => Err(MimosaError::Diagnostic(msg)),
        None => Ok(()),
    }
}

fn run_fit(cfg: &RunConfig) -> Result<()> {
    single_or_batch(cfg, |input, out| match cfg.model {
        ModelKind::Betabin => fit_univariate(cfg, &ingest_univariate(input)?, out),
        ModelKind::Dirmult => fit_multivariate(cfg, &ingest_multivariate(input)?, out),
    })
}

fn baseline_univariate(cfg: &RunConfig, records: &[CountPair], out: &Path) -> Result<()> {
    let fisher: Vec<_> = records.iter().map(|y| fisher_exact(y, cfg.sidedness)).collect();
    // a sample with no cells leaves the LRT undefined; it is reported as p = 1
    let lrt: Vec<Option<_>> = records.iter().map(|y| binomial_lrt(y, cfg.sidedness).ok()).collect();
    let fisher_p: Vec<f64> = fisher.iter().map(|t| t.p_value).collect();
    let lrt_p: Vec<f64> = lrt.iter().map(|t| t.as_ref().map_or(1.0, |t| t.p_value)).collect();
    let fisher_q = adjust_pvalues(&fisher_p, PAdjust::BenjaminiHochberg)?;
    let lrt_q = adjust_pvalues(&lrt_p, PAdjust::BenjaminiHochberg)?;
    let subjects: Vec<Value> = records
        .iter()
        .enumerate()
        .map(|(i, y)| {
            json!({
                "subject_id": y.subject_id,
                "fisher_p": fisher_p[i],
                "fisher_q": fisher_q[i],
                "lrt_statistic": lrt[i].as_ref().map(|t| t.statistic),
                "lrt_p": lrt_p[i],
                "lrt_q": lrt_q[i],
                "log_fold_change": log_fold_change(y).statistic,
            })
        })
        .collect();
    finish_baseline(cfg, out, subjects)
}

fn baseline_multivariate(cfg: &RunConfig, records: &[MultiCountPair], out: &Path) -> Result<()> {
    let tests = records.iter().map(|y| multi_category_test(y, &cfg.baseline)).collect::<Result<Vec<_>>>()?;
    let fisher_p: Vec<f64> = tests.iter().map(|t| t.fisher.p_value).collect();
    let lrt_p: Vec<f64> = tests.iter().map(|t| t.lrt.p_value).collect();
    let fisher_q = adjust_pvalues(&fisher_p, PAdjust::BenjaminiHochberg)?;
    let lrt_q = adjust_pvalues(&lrt_p, PAdjust::BenjaminiHochberg)?;
    let subjects: Vec<Value> = tests
        .iter()
        .enumerate()
        .map(|(i, t)| {
            json!({
                "subject_id": t.lrt.subject_id,
                "fisher_p": fisher_p[i],
                "fisher_q": fisher_q[i],
                "fisher_method": t.fisher_method,
                "lrt_statistic": t.lrt.statistic,
                "lrt_p": lrt_p[i],
                "lrt_q": lrt_q[i],
            })
        })
        .collect();
    finish_baseline(cfg, out, subjects)
}

fn finish_baseline(cfg: &RunConfig, out: &Path, subjects: Vec<Value>) -> Result<()> {
    let mut doc = header(cfg)?;
    doc.insert("sidedness".into(), serde_json::to_value(cfg.sidedness)?);
    doc.insert("subjects".into(), Value::Array(subjects));
    write_json(&out.join("results.json"), &Value::Object(doc))
}

fn run_baseline(cfg: &RunConfig) -> Result<()> {
    single_or_batch(cfg, |input, out| match cfg.model {
        ModelKind::Betabin => baseline_univariate(cfg, &ingest_univariate(input)?, out),
        ModelKind::Dirmult => baseline_multivariate(cfg, &ingest_multivariate(input)?, out),
    })
}

fn run_simulate(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let spec = &cfg.simulate;
    for r in 0..spec.replicates {
        let stem = format!("replicate_{r:03}");
        let (ids, labels): (Vec<String>, Vec<bool>) = match cfg.model {
            ModelKind::Betabin => {
                let d = match spec.generator {
                    Generator::Beta => simulate_univariate(spec, r)?,
                    Generator::TruncNormalMatched => simulate_misspecified(spec, r)?,
                };
                write_univariate(&d.records, create(&out.join(format!("{stem}.csv")))?)?;
                (d.records.iter().map(|y| y.subject_id.clone()).collect(), d.true_z)
            }
            ModelKind::Dirmult => {
                let d = simulate_multivariate(spec, r)?;
                write_multivariate(&d.records, create(&out.join(format!("{stem}.csv")))?)?;
                (d.records.iter().map(|y| y.subject_id.clone()).collect(), d.true_z)
            }
        };
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        write_labels(&id_refs, &labels, create(&out.join(format!("{stem}.labels.csv")))?)?;
    }
    write_json(&out.join("simulation.json"), &Value::Object(header(cfg)?))
}

fn labels_for(ids: &[String], labels_path: &Path) -> Result<Vec<bool>> {
    let map = ingest_labels(labels_path)?;
    ids.iter()
        .map(|id| map.get(id).copied().ok_or_else(|| MimosaError::Schema(format!("no label for subject {id}"))))
        .collect()
}

fn number_column(subjects: &[Value], key: &str) -> Result<Vec<f64>> {
    subjects
        .iter()
        .map(|s| s.get(key).and_then(Value::as_f64).ok_or_else(|| MimosaError::Schema(format!("subject entry lacks numeric {key}"))))
        .collect()
}

fn run_evaluate(cfg: &RunConfig) -> Result<()> {
    let input = cfg.input()?;
    let labels_path = cfg.labels.as_deref().ok_or_else(|| MimosaError::Config("evaluate needs --labels".into()))?;
    let doc: Value = serde_json::from_str(&fs::read_to_string(input)?)?;
    let subjects = doc.get("subjects").and_then(Value::as_array).ok_or_else(|| MimosaError::Schema("results lack a subjects array".into()))?;
    let ids: Vec<String> = subjects
        .iter()
        .map(|s| s.get("subject_id").and_then(Value::as_str).map(str::to_string))
        .collect::<Option<_>>()
        .ok_or_else(|| MimosaError::Schema("subject entry lacks subject_id".into()))?;
    let labels = labels_for(&ids, labels_path)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let grid = nominal_grid();
    let mut aucs = serde_json::Map::new();
    match doc.get("command").and_then(Value::as_str) {
        Some("fit") => {
            let z = number_column(subjects, "responsibility")?;
            let curve = roc(&z, &labels)?;
            write_roc_csv(&curve, create(&out.join("roc.csv"))?)?;
            write_fdr_csv(&posterior_fdr_curve(&z, &labels, &grid)?, create(&out.join("fdr.csv"))?)?;
            aucs.insert("mimosa".into(), json!(curve.auc));
        }
        Some("baseline") => {
            for test in ["fisher", "lrt"] {
                let p = number_column(subjects, &format!("{test}_p"))?;
                let scores: Vec<f64> = p.iter().map(|v| -v).collect();
                let curve = roc(&scores, &labels)?;
                write_roc_csv(&curve, create(&out.join(format!("roc_{test}.csv")))?)?;
                write_fdr_csv(&bh_fdr_curve(&p, &labels, &grid)?, create(&out.join(format!("fdr_{test}.csv")))?)?;
                aucs.insert(test.into(), json!(curve.auc));
            }
            if subjects.first().is_some_and(|s| s.get("log_fold_change").is_some()) {
                let lfc = number_column(subjects, "log_fold_change")?;
                let curve = roc(&lfc, &labels)?;
                write_roc_csv(&curve, create(&out.join("roc_lfc.csv"))?)?;
                aucs.insert("log_fold_change".into(), json!(curve.auc));
            }
        }
        other => return Err(MimosaError::Schema(format!("cannot evaluate results of command {other:?}"))),
    }
    let mut report = header(cfg)?;
    report.insert("auc".into(), Value::Object(aucs));
    write_json(&out.join("evaluation.json"), &Value::Object(report))
}

pub fn error_json(e: &MimosaError) -> Value {
    json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() })
}

fn dispatch(command: &Command) -> Result<()> {
    let (name, flags) = match command {
        Command::Fit(f) => ("fit", f),
        Command::Simulate(f) => ("simulate", f),
        Command::Evaluate(f) => ("evaluate", f),
        Command::Baseline(f) => ("baseline", f),
    };
    let cfg = RunConfig::resolve(name, flags)?;
    if let Some(n) = cfg.threads {
        // fails only when a pool already exists, e.g. in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match command {
        Command::Fit(_) => run_fit(&cfg),
        Command::Simulate(_) => run_simulate(&cfg),
        Command::Evaluate(_) => run_evaluate(&cfg),
        Command::Baseline(_) => run_baseline(&cfg),
    }
}

fn output_dir_of(command: &Command) -> Option<&Path> {
    match command {
        Command::Fit(f) | Command::Simulate(f) | Command::Evaluate(f) | Command::Baseline(f) => f.output_dir.as_deref(),
    }
}

/// Runs a parsed command and returns the process exit status. Failures are
/// reported as JSON on stderr and, when an output directory exists, in
/// `error.json` there.
pub fn run(cli: &Cli) -> i32 {
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let report = error_json(&e);
            eprintln!("{report}");
            if let Some(dir) = output_dir_of(&cli.command).filter(|d| d.is_dir()) {
                let _ = write_json(&dir.join("error.json"), &report);
            }
            e.exit_code()
        }
    }
}
