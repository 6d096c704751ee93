use std::collections::BTreeMap;

use chrono::DateTime;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use t2i_audit_core::arena::bootstrap::{bootstrap_ci, bootstrap_ci_sequential};
use t2i_audit_core::arena::bradley_terry::fit_with_initial;
use t2i_audit_core::arena::{fit_bradley_terry, BattleRecord, EloTable, FitError, Outcome};

fn rec(a: &str, b: &str, o: Outcome) -> BattleRecord {
    BattleRecord::direct(a, b, o, DateTime::UNIX_EPOCH)
}

fn two_model_log(w_ab: u32, w_ba: u32) -> Vec<BattleRecord> {
    let mut v = vec![rec("a", "b", Outcome::AWins); w_ab as usize];
    v.extend(vec![rec("b", "a", Outcome::AWins); w_ba as usize]);
    v
}

/// Log-likelihood of a score gap `d = s_a - s_b` for a two-model record.
fn loglik(d: f64, w_ab: f64, w_ba: f64) -> f64 {
    let p = 1.0 / (1.0 + 10f64.powf(-d / 400.0));
    w_ab * p.ln() + w_ba * (1.0 - p).ln()
}

/// Brute-force maximizer: coarse grid, then repeated refinement around the
/// best point.
fn grid_search_gap(w_ab: f64, w_ba: f64) -> f64 {
    let (mut lo, mut hi) = (-2000.0, 2000.0);
    let mut best = 0.0;
    for _ in 0..12 {
        let step = (hi - lo) / 200.0;
        best = (0..=200)
            .map(|i| lo + step * i as f64)
            .max_by(|x, y| loglik(*x, w_ab, w_ba).total_cmp(&loglik(*y, w_ab, w_ba)))
            .unwrap();
        lo = best - step;
        hi = best + step;
    }
    best
}

/// Independent multi-model maximizer: gradient ascent on the log-likelihood
/// in natural-log units followed by Newton polishing per coordinate.
fn gradient_oracle(log: &[BattleRecord]) -> BTreeMap<String, f64> {
    let mut ids: Vec<String> = log
        .iter()
        .flat_map(|b| [b.model_a.clone(), b.model_b.clone()])
        .collect();
    ids.sort();
    ids.dedup();
    let ix = |m: &str| ids.iter().position(|x| x == m).unwrap();
    let n = ids.len();
    let mut theta = vec![0.0f64; n];
    for _ in 0..500 {
        for i in 0..n {
            let (mut g, mut h) = (0.0f64, 0.0f64);
            for b in log {
                let (a, c) = (ix(&b.model_a), ix(&b.model_b));
                if a != i && c != i {
                    continue;
                }
                let (me, other, s) = if a == i {
                    (a, c, b.outcome.score_a())
                } else {
                    (c, a, 1.0 - b.outcome.score_a())
                };
                let p = 1.0 / (1.0 + (theta[other] - theta[me]).exp());
                g += s - p;
                h += p * (1.0 - p);
            }
            theta[i] += g / h;
        }
        let mean = theta.iter().sum::<f64>() / n as f64;
        theta.iter_mut().for_each(|t| *t -= mean);
    }
    ids.into_iter()
        .zip(theta)
        .map(|(m, t)| (m, 1000.0 + t * 400.0 / std::f64::consts::LN_10))
        .collect()
}

fn synthetic(truth: &[(&str, f64)], battles: usize, seed: u64) -> Vec<BattleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..battles)
        .map(|_| {
            let i = rng.random_range(0..truth.len());
            let mut j = rng.random_range(0..truth.len() - 1);
            if j >= i {
                j += 1;
            }
            let (a, sa) = truth[i];
            let (b, sb) = truth[j];
            let p = 1.0 / (1.0 + 10f64.powf((sb - sa) / 400.0));
            let o = if rng.random_bool(p) {
                Outcome::AWins
            } else {
                Outcome::BWins
            };
            rec(a, b, o)
        })
        .collect()
}

const TRUTH: [(&str, f64); 3] = [("hi", 1100.0), ("mid", 1000.0), ("lo", 900.0)];

#[test]
fn elo_equal_ratings_win_is_exactly_sixteen() {
    let mut t = EloTable::default();
    t.update("a", "b", Outcome::AWins);
    assert_eq!((t.rating("a"), t.rating("b")), (1016.0, 984.0));
    let mut t = EloTable::default();
    t.update("a", "b", Outcome::Tie);
    assert_eq!((t.rating("a"), t.rating("b")), (1000.0, 1000.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn elo_updates_conserve_and_are_bounded(
        votes in proptest::collection::vec((0usize..5, 0usize..5, 0u8..3), 1..120),
    ) {
        let ids = ["m0", "m1", "m2", "m3", "m4"];
        let mut t = EloTable::default();
        for (a, b, o) in votes {
            if a == b {
                continue;
            }
            let o = [Outcome::AWins, Outcome::BWins, Outcome::Tie][o as usize];
            let before = (t.rating(ids[a]), t.rating(ids[b]));
            let d = t.update(ids[a], ids[b], o);
            let after = (t.rating(ids[a]), t.rating(ids[b]));
            prop_assert!(d.abs() <= 32.0);
            prop_assert!((after.0 - before.0).abs() <= 32.0 + 1e-12);
            prop_assert!(((after.0 + after.1) - (before.0 + before.1)).abs() < 1e-9);
        }
        let total: f64 = ids.iter().map(|m| t.rating(m)).sum();
        prop_assert!((total - 5000.0).abs() < 1e-9);
    }

    #[test]
    fn bt_two_model_matches_closed_form(w_ab in 1u32..60, w_ba in 1u32..60) {
        let fit = fit_bradley_terry(&two_model_log(w_ab, w_ba)).unwrap();
        let gap = fit.scores["a"] - fit.scores["b"];
        let closed = 400.0 * (w_ab as f64 / w_ba as f64).log10();
        prop_assert!((gap - closed).abs() < 1e-6, "gap {} closed {}", gap, closed);
        prop_assert!((fit.scores["a"] + fit.scores["b"] - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn bt_is_order_independent(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let log = synthetic(&TRUTH, 60, seed);
        let mut shuffled = log.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        prop_assert_eq!(fit_bradley_terry(&log).unwrap(), fit_bradley_terry(&shuffled).unwrap());
    }

    #[test]
    fn bt_ignores_translation_of_the_start(seed in any::<u64>(), shift in -500.0f64..500.0) {
        let log = synthetic(&TRUTH, 80, seed);
        let base = fit_with_initial(&log, |_| 1000.0).unwrap();
        let moved = fit_with_initial(&log, |_| 1000.0 + shift).unwrap();
        for (m, s) in &base.scores {
            prop_assert!((s - moved.scores[m]).abs() < 1e-6);
        }
    }
}

#[test]
fn bt_three_of_four_matches_grid_search() {
    let fit = fit_bradley_terry(&two_model_log(3, 1)).unwrap();
    let gap = fit.scores["a"] - fit.scores["b"];
    assert!((gap - 190.849).abs() < 1e-3);
    // The likelihood is flat at its peak, so a value-comparing search is only
    // good to about 1e-4 in the gap.
    assert!((gap - grid_search_gap(3.0, 1.0)).abs() < 1e-3);
}

#[test]
fn bt_multi_model_matches_gradient_oracle() {
    for seed in 0..3 {
        let mut log = synthetic(&TRUTH, 300, seed);
        log.push(rec("mid", "hi", Outcome::Tie));
        let fit = fit_bradley_terry(&log).unwrap();
        assert!(fit.regularized.is_empty());
        let oracle = gradient_oracle(&log);
        for (m, s) in &fit.scores {
            assert!((s - oracle[m]).abs() < 1e-6, "{m}: {s} vs {}", oracle[m]);
        }
    }
}

#[test]
fn bt_recovers_synthetic_truth() {
    for seed in 0..5 {
        let fit = fit_bradley_terry(&synthetic(&TRUTH, 3000, 100 + seed)).unwrap();
        let s = &fit.scores;
        assert!(
            s["hi"] > s["mid"] && s["mid"] > s["lo"],
            "seed {seed}: {s:?}"
        );
        for (m, truth) in TRUTH {
            assert!(
                (s[m] - truth).abs() <= 25.0,
                "seed {seed}: {m} {} vs {truth}",
                s[m]
            );
        }
    }
}

#[test]
fn bootstrap_is_seeded_and_contains_the_point() {
    let log = synthetic(&TRUTH, 200, 1);
    let a = bootstrap_ci(&log, 200, 42).unwrap();
    let b = bootstrap_ci_sequential(&log, 200, 42).unwrap();
    assert_eq!(a, b);
    for (m, (lo, hi)) in &a.intervals {
        let s = a.point.scores[m];
        assert!(*lo <= s && s <= *hi);
        assert!(hi > lo);
    }
}

#[test]
fn bootstrap_width_shrinks_with_more_battles() {
    let width = |log: &[BattleRecord], seed| {
        let ci = bootstrap_ci(log, 200, seed).unwrap();
        ci.intervals.values().map(|(lo, hi)| hi - lo).sum::<f64>() / ci.intervals.len() as f64
    };
    for seed in 0..5 {
        let small = width(&synthetic(&TRUTH, 100, seed), seed);
        let large = width(&synthetic(&TRUTH, 10_000, seed), seed);
        assert!(large < small, "seed {seed}: {large} !< {small}");
    }
}

#[test]
fn bootstrap_separates_a_repeated_win() {
    for copies in [1, 5] {
        let ci = bootstrap_ci(&two_model_log(copies, 0), 1000, 7).unwrap();
        assert!(ci.intervals["a"].0 > ci.intervals["b"].1);
    }
}

#[test]
fn disconnected_logs_are_rejected() {
    let log = vec![rec("a", "b", Outcome::AWins), rec("c", "d", Outcome::Tie)];
    assert_eq!(
        fit_bradley_terry(&log),
        Err(FitError::DisconnectedGraph(vec!["c".into(), "d".into()]))
    );
}
