//! Invariants checked over generated inputs.

mod common;

use std::collections::HashSet;

use mimosa::baselines::{adjust_pvalues, PAdjust};
use mimosa::em::{fit_em, EmConfig};
use mimosa::evaluate::{posterior_fdr, roc};
use mimosa::io::read_univariate;
use mimosa::model::betabin::responsibility;
use mimosa::model::{BetaBinHypers, CountPair, Sidedness};
use mimosa::simulate::{simulate_univariate, SimSpec};
use proptest::prelude::*;

use common::brute_auc;

type Row = (String, u64, u64, u64, u64);

fn rows() -> impl Strategy<Value = Vec<Row>> {
    prop::collection::vec(("[a-c]{0,2}", 0u64..8, 0u64..8, 0u64..8, 0u64..8), 0..8)
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((-5i32..5, any::<bool>()), 2..40)
        .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
        .prop_map(|v| v.into_iter().map(|(s, l)| (s as f64 / 2.0, l)).unzip())
}

proptest! {
    #[test]
    fn ingestion_accepts_exactly_the_valid_files(rows in rows()) {
        let mut csv = String::from("subject_id,n_u,N_u,n_s,N_s\n");
        for (id, n_u, t_u, n_s, t_s) in &rows {
            csv.push_str(&format!("{id},{n_u},{t_u},{n_s},{t_s}\n"));
        }
        let mut ids = HashSet::new();
        let valid = rows.iter().all(|(id, n_u, t_u, n_s, t_s)| !id.is_empty() && n_u <= t_u && n_s <= t_s && ids.insert(id.clone()));
        let parsed = read_univariate(csv.as_bytes());
        prop_assert_eq!(parsed.is_ok(), valid);
        if let Ok(records) = parsed {
            prop_assert_eq!(records.len(), rows.len());
        }
    }

    #[test]
    fn auc_matches_pair_count_and_ignores_monotone_maps((scores, labels) in scored()) {
        let auc = roc(&scores, &labels).unwrap().auc;
        prop_assert!((auc - brute_auc(&scores, &labels)).abs() < 1e-12);
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert!((roc(&mapped, &labels).unwrap().auc - auc).abs() < 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((roc(&flipped, &labels).unwrap().auc - (1.0 - auc)).abs() < 1e-12);
    }

    #[test]
    fn expected_fdr_never_decreases_as_calls_grow(z in prop::collection::vec(0.0f64..=1.0, 1..60)) {
        let steps = posterior_fdr(&z).unwrap();
        for pair in steps.windows(2) {
            prop_assert!(pair[1].threshold < pair[0].threshold);
            prop_assert!(pair[1].expected_fdr >= pair[0].expected_fdr - 1e-12);
            prop_assert!(pair[1].n_called > pair[0].n_called);
        }
        prop_assert_eq!(steps.last().unwrap().n_called, z.len());
    }

    #[test]
    fn bh_matches_step_up_definition(ps in prop::collection::vec(0.0f64..=1.0, 1..40), level in 0.01f64..0.5) {
        let q = adjust_pvalues(&ps, PAdjust::BenjaminiHochberg).unwrap();
        let m = ps.len();
        let mut sorted = ps.clone();
        sorted.sort_by(f64::total_cmp);
        // largest k with p_(k) ≤ k·level/m; reject every p ≤ p_(k)
        let k = (1..=m).rev().find(|&k| sorted[k - 1] <= k as f64 * level / m as f64);
        for (p, q) in ps.iter().zip(&q) {
            let rejected = k.is_some_and(|k| *p <= sorted[k - 1]);
            // ties at the boundary are decided by rounding in the scaled ratio
            if (q - level).abs() > 1e-12 {
                prop_assert_eq!(*q <= level, rejected, "p = {}, q = {}", p, q);
            }
            prop_assert!(*q >= *p * (1.0 - 1e-12) && *q <= 1.0);
        }
    }

    #[test]
    fn responsibility_increases_with_weight(
        n_s in 0u64..30, n_u in 0u64..30, extra_s in 0u64..200, extra_u in 0u64..200,
        w1 in 0.01f64..0.99, w2 in 0.01f64..0.99,
    ) {
        let y = CountPair::new("s", n_s, n_s + extra_s + 1, n_u, n_u + extra_u + 1).unwrap();
        let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
        let h = |w| BetaBinHypers::new(2.0, 60.0, 3.0, 50.0, w).unwrap();
        for side in [Sidedness::OneSidedIncrease, Sidedness::TwoSided] {
            let a = responsibility(&h(lo), &y, side).unwrap();
            let b = responsibility(&h(hi), &y, side).unwrap();
            prop_assert!(b >= a - 1e-12, "{} then {}", a, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn em_is_exchangeable(seed in 0usize..1000, rotate in 1usize..29) {
        let d = simulate_univariate(&SimSpec { n_subjects: 30, ..SimSpec::default() }, seed).unwrap();
        let cfg = EmConfig { max_iters: 30, ..EmConfig::default() };
        let a = fit_em(&d.records, &cfg).unwrap();
        let mut shuffled = d.records.clone();
        shuffled.rotate_left(rotate);
        let b = fit_em(&shuffled, &cfg).unwrap();
        let mut back = b.responsibilities.clone();
        back.rotate_right(rotate);
        for (x, y) in a.responsibilities.iter().zip(&back) {
            prop_assert!((x - y).abs() < 1e-6, "{} vs {}", x, y);
        }
    }
}
