use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bootstrap::bootstrap_ci;
use super::bradley_terry::{fit_largest_component, FitError};
use super::elo::EloTable;
use super::BattleRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub model_id: String,
    pub elo: f64,
    pub bt_score: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_battles: usize,
    /// Score stabilized with a virtual half-win/half-loss.
    pub regularized: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Leaderboard {
    pub ratings: Vec<Rating>,
    /// Models outside the largest connected component of the comparison graph.
    pub excluded: Vec<String>,
    pub resamples: usize,
    pub skipped_resamples: usize,
}

/// Orders ratings by score (compared at 1e-6 resolution), then battle count,
/// then model id.
pub fn rank(ratings: &mut [Rating]) {
    let key = |r: &Rating| (r.bt_score * 1e6).round();
    ratings.sort_by(|a, b| {
        key(b)
            .partial_cmp(&key(a))
            .unwrap_or(Ordering::Equal)
            .then(b.n_battles.cmp(&a.n_battles))
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
}

pub fn compute(
    battles: &[BattleRecord],
    elo: &EloTable,
    n_resamples: usize,
    seed: u64,
) -> Leaderboard {
    if battles.is_empty() {
        return Leaderboard::default();
    }
    let (point, excluded) = match fit_largest_component(battles) {
        Ok(v) => v,
        Err(FitError::NoBattles) => return Leaderboard::default(),
        Err(e) => unreachable!("largest component always fits: {e}"),
    };
    let kept: Vec<BattleRecord> = battles
        .iter()
        .filter(|b| point.scores.contains_key(&b.model_a))
        .cloned()
        .collect();
    let ci = bootstrap_ci(&kept, n_resamples, seed).expect("point fit succeeded");

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for b in &kept {
        *counts.entry(&b.model_a).or_default() += 1;
        *counts.entry(&b.model_b).or_default() += 1;
    }
    let mut ratings: Vec<Rating> = ci
        .point
        .scores
        .iter()
        .map(|(model, &score)| {
            let (lo, hi) = ci.intervals[model];
            Rating {
                model_id: model.clone(),
                elo: elo.rating(model),
                bt_score: score,
                ci_low: lo,
                ci_high: hi,
                n_battles: counts.get(model.as_str()).copied().unwrap_or(0),
                regularized: ci.point.regularized.contains(model),
            }
        })
        .collect();
    rank(&mut ratings);
    Leaderboard {
        ratings,
        excluded,
        resamples: ci.resamples,
        skipped_resamples: ci.skipped,
    }
}

pub fn to_csv(ratings: &[Rating]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model_id",
        "elo",
        "bt_score",
        "ci_low",
        "ci_high",
        "n_battles",
    ])
    .expect("in-memory write");
    for r in ratings {
        w.write_record([
            r.model_id.clone(),
            format!("{:.4}", r.elo),
            format!("{:.4}", r.bt_score),
            format!("{:.4}", r.ci_low),
            format!("{:.4}", r.ci_high),
            r.n_battles.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
