//! Percentile bootstrap intervals for Bradley–Terry scores.
//!
//! Each resample draws from its own ChaCha stream keyed by `(seed, index)`,
//! so the sequential and parallel paths produce identical intervals.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bradley_terry::{fit_bradley_terry, fit_checked, BtFit, FitError, WinMatrix, ANCHOR};
use super::{BattleRecord, Outcome};

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapCi {
    pub point: BtFit,
    /// model id → (2.5th, 97.5th) percentile, widened to contain the point
    /// estimate.
    pub intervals: BTreeMap<String, (f64, f64)>,
    pub resamples: usize,
    /// Resamples whose fit failed or lost a model.
    pub skipped: usize,
}

/// Battles reduced to model indices into the point fit's sorted model list.
fn compact(battles: &[BattleRecord], point: &BtFit) -> Vec<(usize, usize, Outcome)> {
    let index: BTreeMap<&str, usize> = point
        .scores
        .keys()
        .enumerate()
        .map(|(i, m)| (m.as_str(), i))
        .collect();
    battles
        .iter()
        .map(|b| {
            (
                index[b.model_a.as_str()],
                index[b.model_b.as_str()],
                b.outcome,
            )
        })
        .collect()
}

/// Refits one resample. Drawing straight into the win matrix gives the same
/// totals as refitting the resampled record list, since the half-unit sums
/// are exact.
fn refit(
    battles: &[(usize, usize, Outcome)],
    models: &[String],
    seed: u64,
    index: u64,
) -> Option<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut matrix = WinMatrix::zeros(models.to_vec());
    for _ in 0..battles.len() {
        let (a, b, outcome) = battles[rng.random_range(0..battles.len())];
        match outcome {
            Outcome::AWins => matrix.wins[a][b] += 1.0,
            Outcome::BWins => matrix.wins[b][a] += 1.0,
            Outcome::Tie => {
                matrix.wins[a][b] += 0.5;
                matrix.wins[b][a] += 0.5;
            }
        }
    }
    let fit = fit_checked(&matrix, |_| ANCHOR).ok()?;
    Some(fit.scores.into_values().collect())
}

/// Linear interpolation between closest ranks; `sorted` must be ascending.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(point: BtFit, samples: Vec<Option<Vec<f64>>>) -> BootstrapCi {
    let resamples = samples.len();
    let kept: Vec<Vec<f64>> = samples.into_iter().flatten().collect();
    let skipped = resamples - kept.len();
    let intervals = point
        .scores
        .iter()
        .enumerate()
        .map(|(k, (model, &score))| {
            let mut col: Vec<f64> = kept.iter().map(|s| s[k]).collect();
            if col.is_empty() {
                return (model.clone(), (score, score));
            }
            col.sort_by(f64::total_cmp);
            let lo = percentile(&col, 0.025).min(score);
            let hi = percentile(&col, 0.975).max(score);
            (model.clone(), (lo, hi))
        })
        .collect();
    BootstrapCi {
        point,
        intervals,
        resamples,
        skipped,
    }
}

pub fn bootstrap_ci_sequential(
    battles: &[BattleRecord],
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapCi, FitError> {
    let point = fit_bradley_terry(battles)?;
    let compacted = compact(battles, &point);
    let models: Vec<String> = point.scores.keys().cloned().collect();
    let samples = (0..n_resamples as u64)
        .map(|i| refit(&compacted, &models, seed, i))
        .collect();
    Ok(summarize(point, samples))
}

#[cfg(feature = "parallel")]
pub fn bootstrap_ci_parallel(
    battles: &[BattleRecord],
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapCi, FitError> {
    use rayon::prelude::*;

    let point = fit_bradley_terry(battles)?;
    let compacted = compact(battles, &point);
    let models: Vec<String> = point.scores.keys().cloned().collect();
    let samples = (0..n_resamples as u64)
        .into_par_iter()
        .map(|i| refit(&compacted, &models, seed, i))
        .collect();
    Ok(summarize(point, samples))
}

/// Bootstrap intervals, using the rayon pool when the `parallel` feature is
/// enabled.
pub fn bootstrap_ci(
    battles: &[BattleRecord],
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapCi, FitError> {
    #[cfg(feature = "parallel")]
    {
        bootstrap_ci_parallel(battles, n_resamples, seed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        bootstrap_ci_sequential(battles, n_resamples, seed)
    }
}
