//! Reference computations shared by the integration tests. Likelihoods here
//! are built from `statrs` special functions and numeric integration, not
//! from the crate's closed forms.
#![allow(dead_code)]

use mimosa::numerics::quadrature::integrate_breakpoints;
use statrs::function::gamma::ln_gamma;

pub fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

pub fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `ln Bin(n | N, p)` times `ln Beta(p | a, b)` density, up to nothing.
fn ln_integrand(p: f64, counts: &[(u64, u64)], a: f64, b: f64) -> f64 {
    let mut v = (a - 1.0) * p.ln() + (b - 1.0) * (-p).ln_1p() - ln_beta_fn(a, b);
    for &(n, total) in counts {
        v += ln_choose(total, n) + n as f64 * p.ln() + (total - n) as f64 * (-p).ln_1p();
    }
    v
}

/// Break the unit interval around the bulk of `Beta(a, b)`, clipped to `[lo, 1]`.
fn bulk_breakpoints(a: f64, b: f64, lo: f64) -> Vec<f64> {
    let mean = a / (a + b);
    let sd = (a * b / ((a + b).powi(2) * (a + b + 1.0))).sqrt();
    let mut bp = vec![lo, 1.0];
    for k in [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 40.0] {
        let x = mean + k * sd;
        if x > lo && x < 1.0 {
            bp.push(x);
        }
    }
    for x in [1e-12, 1e-9, 1e-6, 1e-4, 1e-3, 1e-2, 0.1] {
        if x > lo {
            bp.push(x);
        }
    }
    bp.sort_by(f64::total_cmp);
    bp.dedup();
    bp
}

/// `ln ∫_lo^1 Π Bin(n | N, p) Beta(p | a, b) dp` by adaptive quadrature.
pub fn ln_quad(counts: &[(u64, u64)], a: f64, b: f64, lo: f64) -> f64 {
    let (n, t): (u64, u64) = counts.iter().fold((0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
    let (pa, pb) = (a + n as f64, b + (t - n) as f64);
    let mode = ((pa - 1.0) / (pa + pb - 2.0)).clamp(1e-12, 1.0 - 1e-12).max(lo);
    let shift = ln_integrand(mode, counts, a, b);
    let r = integrate_breakpoints(
        |p| if p <= 0.0 || p >= 1.0 { 0.0 } else { (ln_integrand(p, counts, a, b) - shift).exp() },
        &bulk_breakpoints(pa, pb, lo),
        0.0,
        1e-11,
        4000,
    );
    r.value.ln() + shift
}

pub fn oracle_l0(h: [f64; 4], n_s: u64, total_s: u64, n_u: u64, total_u: u64) -> f64 {
    ln_quad(&[(n_s, total_s), (n_u, total_u)], h[0], h[1], 0.0)
}

pub fn oracle_l1_two(h: [f64; 4], n_s: u64, total_s: u64, n_u: u64, total_u: u64) -> f64 {
    ln_quad(&[(n_u, total_u)], h[0], h[1], 0.0) + ln_quad(&[(n_s, total_s)], h[2], h[3], 0.0)
}

/// `ln ∫∫_{p_s > p_u} f_u(p_u) f_s(p_s)` by nested quadrature, where each
/// factor is a binomial likelihood (or 1) times its beta density.
fn ln_constrained(u: (&[(u64, u64)], f64, f64), s: (&[(u64, u64)], f64, f64)) -> f64 {
    let (cu, au, bu) = u;
    let (cs, as_, bs) = s;
    let (n, t): (u64, u64) = cu.iter().fold((0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
    let (pa, pb) = (au + n as f64, bu + (t - n) as f64);
    let mode = ((pa - 1.0) / (pa + pb - 2.0)).clamp(1e-12, 1.0 - 1e-12);
    let shift = ln_integrand(mode, cu, au, bu);
    let r = integrate_breakpoints(
        |p| {
            if p <= 0.0 || p >= 1.0 {
                return 0.0;
            }
            (ln_integrand(p, cu, au, bu) - shift + ln_quad(cs, as_, bs, p)).exp()
        },
        &bulk_breakpoints(pa, pb, 0.0),
        0.0,
        1e-9,
        4000,
    );
    r.value.ln() + shift
}

pub fn oracle_l1_one(h: [f64; 4], n_s: u64, total_s: u64, n_u: u64, total_u: u64) -> f64 {
    let joint = ln_constrained((&[(n_u, total_u)], h[0], h[1]), (&[(n_s, total_s)], h[2], h[3]));
    let prior = ln_constrained((&[], h[0], h[1]), (&[], h[2], h[3]));
    joint - prior
}

/// Mann-Whitney AUC by comparing every positive with every negative.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (a, &la) in scores.iter().zip(labels) {
        if !la {
            continue;
        }
        for (b, &lb) in scores.iter().zip(labels) {
            if lb {
                continue;
            }
            pairs += 1.0;
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Average ranks, ties sharing the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
