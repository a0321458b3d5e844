//! Per-subject frequentist comparators: Fisher's exact test, the binomial
//! likelihood-ratio test, log fold-change, their 2×M analogues, and
//! Benjamini–Hochberg adjustment.

use rand_distr::{Distribution, Hypergeometric};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::error::{MimosaError, Result};
use crate::model::{CountPair, MultiCountPair, Sidedness};
use crate::numerics::rng::{hash_label, SeededRng};
use crate::numerics::special::{ln_gamma, log_choose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub subject_id: String,
    pub statistic: f64,
    pub p_value: f64,
    /// Sign of the stimulated minus unstimulated proportion.
    pub direction: i8,
}

fn direction(y: &CountPair) -> i8 {
    // compare n_s / N_s with n_u / N_u without division
    let lhs = y.n_s as u128 * y.total_u as u128;
    let rhs = y.n_u as u128 * y.total_s as u128;
    match lhs.cmp(&rhs) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => -1,
        std::cmp::Ordering::Equal => 0,
    }
}

/// Survival function of the chi-square distribution.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if df == 1.0 {
        erfc((x / 2.0).sqrt())
    } else {
        gamma_ur(df / 2.0, x / 2.0)
    }
}

/// Fisher's exact test on the 2×2 table with both margins fixed.
///
/// One-sided: `Pr(X ≥ n_s)` for the stimulated positive count `X`.
/// Two-sided: total probability of tables no more likely than the observed one.
pub fn fisher_exact(y: &CountPair, side: Sidedness) -> TestResult {
    let total = y.total_s + y.total_u;
    let positives = y.n_s + y.n_u;
    let lo = positives.saturating_sub(y.total_u);
    let hi = positives.min(y.total_s);
    let ln_denom = log_choose(total, positives);
    let ln_prob = |x: u64| log_choose(y.total_s, x) + log_choose(y.total_u, positives - x) - ln_denom;

    let p_value = match side {
        Sidedness::OneSidedIncrease => (y.n_s..=hi).map(|x| ln_prob(x).exp()).sum::<f64>(),
        Sidedness::TwoSided => {
            let cutoff = ln_prob(y.n_s) + 1e-7;
            (lo..=hi).map(ln_prob).filter(|&lp| lp <= cutoff).map(f64::exp).sum::<f64>()
        }
    };
    let statistic = ((y.n_s as f64 + 0.5) * ((y.total_u - y.n_u) as f64 + 0.5)
        / (((y.total_s - y.n_s) as f64 + 0.5) * (y.n_u as f64 + 0.5)))
        .ln();
    TestResult {
        subject_id: y.subject_id.clone(),
        statistic,
        p_value: p_value.clamp(0.0, 1.0),
        direction: direction(y),
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn binomial_loglik(k: f64, n: f64) -> f64 {
    xlogy(k, k / n) + xlogy(n - k, (n - k) / n)
}

/// Clamps a G statistic to zero when it is within rounding of the magnitude it was computed from.
fn cancel_roundoff(g: f64, scale: f64) -> f64 {
    if g <= 64.0 * f64::EPSILON * scale.abs() {
        0.0
    } else {
        g
    }
}

/// Likelihood-ratio test of `p_s = p_u` against separate binomial proportions.
pub fn binomial_lrt(y: &CountPair, side: Sidedness) -> Result<TestResult> {
    if y.total_s == 0 || y.total_u == 0 {
        return Err(MimosaError::UndefinedTest(format!(
            "subject {} has a zero total; the likelihood-ratio test is undefined",
            y.subject_id
        )));
    }
    let (ks, ns, ku, nu) = (y.n_s as f64, y.total_s as f64, y.n_u as f64, y.total_u as f64);
    let separate = binomial_loglik(ks, ns) + binomial_loglik(ku, nu);
    let pooled = binomial_loglik(ks + ku, ns + nu);
    let g = cancel_roundoff(2.0 * (separate - pooled), pooled);
    let two_sided = chi2_sf(g, 1.0);
    let dir = direction(y);
    let p_value = match side {
        Sidedness::TwoSided => two_sided,
        Sidedness::OneSidedIncrease => {
            if dir > 0 {
                two_sided / 2.0
            } else {
                1.0 - two_sided / 2.0
            }
        }
    };
    Ok(TestResult { subject_id: y.subject_id.clone(), statistic: g, p_value, direction: dir })
}

/// Continuity-corrected log ratio of stimulated to unstimulated proportions.
/// Ranking only; the p-value is fixed at 1.
pub fn log_fold_change(y: &CountPair) -> TestResult {
    let stat = ((y.n_s as f64 + 0.5) / (y.total_s as f64 + 1.0)).ln()
        - ((y.n_u as f64 + 0.5) / (y.total_u as f64 + 1.0)).ln();
    let direction = if stat > 0.0 {
        1
    } else if stat < 0.0 {
        -1
    } else {
        0
    };
    TestResult { subject_id: y.subject_id.clone(), statistic: stat, p_value: 1.0, direction }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherMethod {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiTestConfig {
    /// Margin-fixed resamples when exhaustive enumeration is infeasible.
    pub resamples: usize,
    /// Enumerate exhaustively when the number of tables is at most this.
    pub max_enumerated_tables: f64,
    pub seed: u64,
}

impl Default for MultiTestConfig {
    fn default() -> Self {
        MultiTestConfig { resamples: 100_000, max_enumerated_tables: 1e6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTestResult {
    /// Multinomial likelihood-ratio (G) test of homogeneity.
    pub lrt: TestResult,
    /// Fisher–Freeman–Halton test with the point-probability rule.
    pub fisher: TestResult,
    pub fisher_method: FisherMethod,
}

struct Table {
    stim: Vec<u64>,
    unstim: Vec<u64>,
}

impl Table {
    /// Drops categories empty in both conditions.
    fn collapsed(y: &MultiCountPair) -> Self {
        let (stim, unstim) = y
            .n_s
            .iter()
            .zip(&y.n_u)
            .filter(|(s, u)| **s + **u > 0)
            .map(|(s, u)| (*s, *u))
            .unzip();
        Table { stim, unstim }
    }

    fn columns(&self) -> Vec<u64> {
        self.stim.iter().zip(&self.unstim).map(|(s, u)| s + u).collect()
    }
}

fn multinomial_g(table: &Table) -> f64 {
    let row_s: u64 = table.stim.iter().sum();
    let row_u: u64 = table.unstim.iter().sum();
    let total = (row_s + row_u) as f64;
    let mut g = 0.0;
    for (&s, &u) in table.stim.iter().zip(&table.unstim) {
        let col = (s + u) as f64;
        let es = row_s as f64 * col / total;
        let eu = row_u as f64 * col / total;
        g += xlogy(s as f64, s as f64 / es) + xlogy(u as f64, u as f64 / eu);
    }
    cancel_roundoff(2.0 * g, total)
}

/// Number of 2×M tables with the given column totals and first-row total, capped at `cap`.
fn count_tables(columns: &[u64], row: u64, cap: f64) -> f64 {
    let row = row as usize;
    let mut ways = vec![0.0f64; row + 1];
    ways[0] = 1.0;
    for &c in columns {
        let c = c as usize;
        let mut prefix = vec![0.0f64; row + 2];
        for j in 0..=row {
            prefix[j + 1] = prefix[j] + ways[j];
        }
        let mut next = vec![0.0f64; row + 1];
        for (j, slot) in next.iter_mut().enumerate() {
            let from = j.saturating_sub(c);
            // saturate above the cap; the +1 keeps a zero cap meaningful
            *slot = (prefix[j + 1] - prefix[from]).min(2.0 * cap + 1.0);
        }
        ways = next;
    }
    ways[row]
}

struct LogFactorials(Vec<f64>);

impl LogFactorials {
    fn new(n: u64) -> Self {
        let mut v = Vec::with_capacity(n as usize + 1);
        let mut acc = 0.0;
        v.push(0.0);
        for k in 1..=n {
            acc += (k as f64).ln();
            v.push(acc);
        }
        // re-anchor the running sum against drift for large tables
        if n > 1000 {
            for k in (1000..=n).step_by(1000) {
                v[k as usize] = ln_gamma(k as f64 + 1.0);
            }
        }
        LogFactorials(v)
    }

    fn get(&self, k: u64) -> f64 {
        self.0[k as usize]
    }
}

/// `ln P(x)` of a first-row configuration up to the constant shared by all tables.
fn ln_table_kernel(lf: &LogFactorials, columns: &[u64], x: &[u64]) -> f64 {
    columns.iter().zip(x).map(|(&c, &k)| -lf.get(k) - lf.get(c - k)).sum()
}

fn fisher_enumerate(lf: &LogFactorials, columns: &[u64], row: u64, observed: f64, ln_norm: f64) -> f64 {
    fn recurse(
        lf: &LogFactorials,
        columns: &[u64],
        suffix_cap: &[u64],
        remaining: u64,
        partial: f64,
        cutoff: f64,
        ln_norm: f64,
        acc: &mut f64,
    ) {
        if columns.len() == 1 {
            let c = columns[0];
            if remaining > c {
                return;
            }
            let lp = partial - lf.get(remaining) - lf.get(c - remaining);
            if lp <= cutoff {
                *acc += (lp + ln_norm).exp();
            }
            return;
        }
        let c = columns[0];
        let rest_cap = suffix_cap[1];
        let lo = remaining.saturating_sub(rest_cap);
        let hi = remaining.min(c);
        for k in lo..=hi {
            let lp = partial - lf.get(k) - lf.get(c - k);
            recurse(lf, &columns[1..], &suffix_cap[1..], remaining - k, lp, cutoff, ln_norm, acc);
        }
    }
    let mut suffix_cap = vec![0u64; columns.len() + 1];
    for k in (0..columns.len()).rev() {
        suffix_cap[k] = suffix_cap[k + 1] + columns[k];
    }
    let mut acc = 0.0;
    recurse(lf, columns, &suffix_cap, row, 0.0, observed + 1e-7, ln_norm, &mut acc);
    acc.clamp(0.0, 1.0)
}

fn fisher_monte_carlo(lf: &LogFactorials, columns: &[u64], row: u64, observed: f64, resamples: usize, rng: &mut SeededRng) -> f64 {
    let total: u64 = columns.iter().sum();
    let mut x = vec![0u64; columns.len()];
    let mut hits = 0usize;
    for _ in 0..resamples {
        let mut pop = total;
        let mut draws = row;
        for (k, &c) in columns.iter().enumerate() {
            if draws == 0 {
                x[k] = 0;
            } else if k + 1 == columns.len() {
                x[k] = draws;
            } else {
                let hg = Hypergeometric::new(pop, c, draws).expect("valid hypergeometric parameters");
                x[k] = hg.sample(rng);
            }
            pop -= c;
            draws -= x[k];
        }
        if ln_table_kernel(lf, columns, &x) <= observed + 1e-7 {
            hits += 1;
        }
    }
    (1 + hits) as f64 / (1 + resamples) as f64
}

/// Homogeneity tests for a subject's 2×M table of category counts.
pub fn multi_category_test(y: &MultiCountPair, cfg: &MultiTestConfig) -> Result<MultiTestResult> {
    y.validate()?;
    let table = Table::collapsed(y);
    let columns = table.columns();
    let row: u64 = table.stim.iter().sum();
    let total: u64 = columns.iter().sum();
    let df = columns.len().saturating_sub(1) as f64;

    let g = multinomial_g(&table);
    let lrt_p = if df == 0.0 { 1.0 } else { chi2_sf(g, df) };
    let lrt = TestResult { subject_id: y.subject_id.clone(), statistic: g, p_value: lrt_p, direction: 0 };

    let lf = LogFactorials::new(total);
    let observed = ln_table_kernel(&lf, &columns, &table.stim);
    // ln of N_s! N_u! / T! times Π c_k!, turning kernels into probabilities
    let ln_norm = lf.get(row) + lf.get(total - row) - lf.get(total) + columns.iter().map(|&c| lf.get(c)).sum::<f64>();
    let (fisher_p, method) = if columns.len() <= 1 {
        (1.0, FisherMethod::Exact)
    } else if count_tables(&columns, row, cfg.max_enumerated_tables) <= cfg.max_enumerated_tables {
        (fisher_enumerate(&lf, &columns, row, observed, ln_norm), FisherMethod::Exact)
    } else {
        if cfg.resamples == 0 {
            return Err(MimosaError::Config("Monte Carlo Fisher test needs at least one resample".into()));
        }
        let mut rng = SeededRng::new(cfg.seed, hash_label(&y.subject_id));
        (fisher_monte_carlo(&lf, &columns, row, observed, cfg.resamples, &mut rng), FisherMethod::MonteCarlo)
    };
    let fisher = TestResult { subject_id: y.subject_id.clone(), statistic: -(observed + ln_norm), p_value: fisher_p, direction: 0 };
    Ok(MultiTestResult { lrt, fisher, fisher_method: method })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PAdjust {
    BenjaminiHochberg,
}

/// Step-up adjusted p-values, returned in input order.
pub fn adjust_pvalues(ps: &[f64], method: PAdjust) -> Result<Vec<f64>> {
    if let Some(bad) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(MimosaError::domain(format!("p-value {bad} outside [0, 1]")));
    }
    match method {
        PAdjust::BenjaminiHochberg => {
            let n = ps.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]).then(a.cmp(&b)));
            let mut q = vec![0.0; n];
            let mut running = 1.0f64;
            for rank in (0..n).rev() {
                let i = order[rank];
                running = running.min(ps[i] * n as f64 / (rank + 1) as f64);
                q[i] = running.min(1.0);
            }
            Ok(q)
        }
    }
}
