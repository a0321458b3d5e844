//! Closed forms and numerical routines checked against quadrature, Monte Carlo
//! and enumeration references computed independently of the crate.

mod common;

use mimosa::baselines::{fisher_exact, multi_category_test, FisherMethod, MultiTestConfig};
use mimosa::model::betabin::{log_l0, log_l1_one_sided, log_l1_two_sided, posterior_proportion_summaries, responsibility};
use mimosa::model::dirmult::{log_l0_mv, log_l1_mv};
use mimosa::model::{BetaBinHypers, CountPair, DirMultHypers, MultiCountPair, Sidedness};
use mimosa::numerics::optim::{nelder_mead, NelderMeadOptions};
use mimosa::numerics::{beta_gt_prob, log_sum_exp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma};

use common::{ln_choose, oracle_l0, oracle_l1_one, oracle_l1_two};

#[test]
fn null_marginal_matches_quadrature() {
    let h = BetaBinHypers::new(3.2, 4000.0, 1.0, 1.0, 0.5).unwrap();
    let y = CountPair::new("x", 9, 12000, 5, 10000).unwrap();
    let exact = log_l0(&h, &y).unwrap();
    assert!((exact - oracle_l0([3.2, 4000.0, 1.0, 1.0], 9, 12000, 5, 10000)).abs() < 1e-6);
}

#[test]
fn alternative_marginals_match_quadrature() {
    let hv = [2.5, 900.0, 4.1, 700.0];
    let h = BetaBinHypers::new(hv[0], hv[1], hv[2], hv[3], 0.5).unwrap();
    let y = CountPair::new("x", 40, 5200, 3, 5000).unwrap();
    assert!((log_l1_two_sided(&h, &y).unwrap() - oracle_l1_two(hv, 40, 5200, 3, 5000)).abs() < 1e-6);
    assert!((log_l1_one_sided(&h, &y).unwrap() - oracle_l1_one(hv, 40, 5200, 3, 5000)).abs() < 1e-5);
    // a subject whose stimulated rate is below its unstimulated rate
    let y = CountPair::new("x", 1, 5200, 9, 5000).unwrap();
    assert!((log_l1_one_sided(&h, &y).unwrap() - oracle_l1_one(hv, 1, 5200, 9, 5000)).abs() < 1e-5);
}

#[test]
fn responsibility_is_ratio_of_marginals() {
    let h = BetaBinHypers::new(8.0, 4e4, 40.0, 4e4, 0.6).unwrap();
    let y = CountPair::new("x", 7, 5000, 2, 5000).unwrap();
    for side in [Sidedness::OneSidedIncrease, Sidedness::TwoSided] {
        let l0 = log_l0(&h, &y).unwrap();
        let l1 = if side == Sidedness::TwoSided { log_l1_two_sided(&h, &y) } else { log_l1_one_sided(&h, &y) }.unwrap();
        let direct = (0.6f64.ln() + l1 - log_sum_exp(&[0.4f64.ln() + l0, 0.6f64.ln() + l1]).unwrap()).exp();
        assert!((responsibility(&h, &y, side).unwrap() - direct).abs() < 1e-10);
    }
}

#[test]
fn responsibility_tends_to_one_for_large_samples() {
    let h = BetaBinHypers::new(8.0, 4e4, 40.0, 4e4, 0.3).unwrap();
    let y = CountPair::new("x", 1000, 1_000_000, 200, 1_000_000).unwrap();
    assert!(responsibility(&h, &y, Sidedness::TwoSided).unwrap() > 1.0 - 1e-9);
}

/// Mean and standard error of a Monte Carlo sample.
fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn beta_inequality_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (p1, p2) = (Beta::new(5.0, 2.0).unwrap(), Beta::new(2.0, 5.0).unwrap());
    let hits: Vec<f64> = (0..2_000_000).map(|_| (p1.sample(&mut rng) > p2.sample(&mut rng)) as u8 as f64).collect();
    let (m, se) = mean_se(&hits);
    let exact = beta_gt_prob(5.0, 2.0, 2.0, 5.0).unwrap();
    assert!((exact - m).abs() < 3.0 * se, "{exact} vs {m} ± {se}");
}

#[test]
fn one_sided_summary_matches_rejection_sampling() {
    let h = BetaBinHypers::new(4.0, 2000.0, 5.0, 1500.0, 0.999_999).unwrap();
    let y = CountPair::new("x", 6, 3000, 5, 3000).unwrap();
    let s = posterior_proportion_summaries(&h, &y, Sidedness::OneSidedIncrease).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let post_s = Beta::new(5.0 + 6.0, 1500.0 + 2994.0).unwrap();
    let post_u = Beta::new(4.0 + 5.0, 2000.0 + 2995.0).unwrap();
    let (mut ps, mut pu, mut diff) = (Vec::new(), Vec::new(), Vec::new());
    while ps.len() < 1_000_000 {
        let (a, b) = (post_s.sample(&mut rng), post_u.sample(&mut rng));
        if a > b {
            ps.push(a);
            pu.push(b);
            diff.push(a - b);
        }
    }
    // summaries mix the constrained posterior with the pooled null posterior
    let z = responsibility(&h, &y, Sidedness::OneSidedIncrease).unwrap();
    let pooled = (4.0 + 11.0) / (2004.0 + 6000.0);
    for (got, draws, null) in [(s.mean_p_s, &ps, pooled), (s.mean_p_u, &pu, pooled), (s.mean_diff, &diff, 0.0)] {
        let (m, se) = mean_se(draws);
        let expected = z * m + (1.0 - z) * null;
        assert!((got - expected).abs() < 3.0 * z * se + 1e-9, "{got} vs {expected} ± {se}");
    }
}

#[test]
fn two_sided_summary_uniform_prior() {
    let h = BetaBinHypers::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
    let y = CountPair::new("x", 7, 20, 3, 20).unwrap();
    let s = posterior_proportion_summaries(&h, &y, Sidedness::TwoSided).unwrap();
    assert!((s.mean_p_s - 8.0 / 22.0).abs() < 1e-12);
    assert!((s.mean_p_u - 4.0 / 22.0).abs() < 1e-12);
}

fn dirichlet(rng: &mut ChaCha8Rng, alpha: &[f64]) -> Vec<f64> {
    let g: Vec<f64> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap().sample(rng)).collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

fn ln_multinomial(counts: &[u64], p: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let mut v = ln_choose(n, 0);
    let mut rest = n;
    for &c in counts {
        v += ln_choose(rest, c);
        rest -= c;
    }
    v + counts.iter().zip(p).map(|(&c, &q)| c as f64 * q.ln()).sum::<f64>()
}

#[test]
fn dirichlet_multinomial_marginals_match_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let alpha_u = [4.0, 2.0, 1.5, 0.8];
    let y = MultiCountPair::with_default_labels("x", vec![5, 4, 2, 1], vec![6, 2, 1, 3]).unwrap();
    let h = DirMultHypers::new(alpha_u.to_vec(), alpha_u.to_vec(), 0.5).unwrap();
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let p = dirichlet(&mut rng, &alpha_u);
            (ln_multinomial(&y.n_s, &p) + ln_multinomial(&y.n_u, &p)).exp()
        })
        .collect();
    let (m, se) = mean_se(&draws);
    let exact = log_l0_mv(&h, &y).unwrap().exp();
    assert!((exact - m).abs() < 3.0 * se, "{exact} vs {m} ± {se}");

    let alpha_u: Vec<f64> = (0..8).map(|k| 1.0 + 0.5 * k as f64).collect();
    let alpha_s: Vec<f64> = (0..8).map(|k| 4.0 - 0.3 * k as f64).collect();
    let y = MultiCountPair::with_default_labels("x", vec![3, 2, 2, 1, 1, 0, 1, 0], vec![0, 1, 1, 2, 1, 2, 1, 2]).unwrap();
    let h = DirMultHypers::new(alpha_u.clone(), alpha_s.clone(), 0.5).unwrap();
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let (pu, ps) = (dirichlet(&mut rng, &alpha_u), dirichlet(&mut rng, &alpha_s));
            (ln_multinomial(&y.n_s, &ps) + ln_multinomial(&y.n_u, &pu)).exp()
        })
        .collect();
    let (m, se) = mean_se(&draws);
    let exact = log_l1_mv(&h, &y).unwrap().exp();
    assert!((exact - m).abs() < 3.0 * se, "{exact} vs {m} ± {se}");
}

#[test]
fn uniform_dirichlet_per_sample_identity() {
    let h = DirMultHypers::new(vec![1.0; 3], vec![1.0; 3], 0.5).unwrap();
    let y = MultiCountPair::with_default_labels("x", vec![2, 1, 1], vec![0, 3, 2]).unwrap();
    // each sample contributes 1 / C(N + M − 1, N)
    let expected = -ln_choose(4 + 2, 4) - ln_choose(5 + 2, 5);
    assert!((log_l1_mv(&h, &y).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn one_sided_fisher_matches_enumeration() {
    // hypergeometric tail: 5 of 5 successes in the stimulated row of 10
    let y = CountPair::new("x", 5, 10, 0, 10).unwrap();
    let ln_total = ln_choose(20, 5);
    let expected = (ln_choose(10, 5) + ln_choose(10, 0) - ln_total).exp();
    assert!((fisher_exact(&y, Sidedness::OneSidedIncrease).p_value - expected).abs() < 1e-12);
}

#[test]
fn monte_carlo_fisher_agrees_with_enumeration() {
    let y = MultiCountPair::with_default_labels("x", vec![6, 2, 1], vec![1, 4, 5]).unwrap();
    let exact = multi_category_test(&y, &MultiTestConfig::default()).unwrap();
    assert_eq!(exact.fisher_method, FisherMethod::Exact);
    let cfg = MultiTestConfig { max_enumerated_tables: 0.0, resamples: 50_000, seed: 3 };
    let mc = multi_category_test(&y, &cfg).unwrap();
    assert_eq!(mc.fisher_method, FisherMethod::MonteCarlo);
    let p = exact.fisher.p_value;
    let se = (p * (1.0 - p) / 50_000.0).sqrt();
    assert!((mc.fisher.p_value - p).abs() < 3.0 * se + 1.0 / 50_000.0, "{} vs {p}", mc.fisher.p_value);
}

/// Negative observed log-likelihood of a small two-sided dataset at `w = 0.5`
/// as a function of the log-shapes.
fn objective(records: &[CountPair], x: &[f64]) -> f64 {
    let h = BetaBinHypers::new(x[0].exp(), x[1].exp(), x[2].exp(), x[3].exp(), 0.5).unwrap();
    -records
        .iter()
        .map(|y| {
            let l0 = log_l0(&h, y).unwrap();
            let l1 = log_l1_two_sided(&h, y).unwrap();
            log_sum_exp(&[0.5f64.ln() + l0, 0.5f64.ln() + l1]).unwrap()
        })
        .sum::<f64>()
}

#[test]
fn nelder_mead_reaches_grid_optimum() {
    let records: Vec<CountPair> = [(9, 2000, 3, 2000), (4, 2000, 5, 2000), (30, 3000, 4, 3000), (2, 1000, 1, 1000), (22, 2500, 6, 2500)]
        .iter()
        .enumerate()
        .map(|(i, c)| CountPair::new(format!("s{i}"), c.0, c.1, c.2, c.3).unwrap())
        .collect();
    // coarse grid, then a finer grid around its best point
    let mut best = (f64::INFINITY, vec![0.0; 4]);
    let mut centre = [1.0f64, 7.0, 1.0, 7.0];
    let mut step = 1.0;
    for _ in 0..4 {
        let start = centre;
        for a in -3..=3 {
            for b in -3..=3 {
                for c in -3..=3 {
                    for d in -3..=3 {
                        let x = [start[0] + a as f64 * step, start[1] + b as f64 * step, start[2] + c as f64 * step, start[3] + d as f64 * step];
                        let v = objective(&records, &x);
                        if v < best.0 {
                            best = (v, x.to_vec());
                            centre = x;
                        }
                    }
                }
            }
        }
        step /= 3.0;
    }
    let opts = NelderMeadOptions { tol: 1e-10, max_evals: 20_000, ..NelderMeadOptions::default() };
    let min = nelder_mead(|x| objective(&records, x), &[1.0, 7.0, 1.0, 7.0], &opts).unwrap();
    assert!(min.fmin <= best.0 + 1e-3, "simplex {} vs grid {}", min.fmin, best.0);
}
