//! Bradley–Terry maximum likelihood fit by minorization-maximization.
//!
//! Scores live on the Elo scale: `p(i beats j) = 1 / (1 + 10^((s_j - s_i)/400))`,
//! i.e. `s = 400 * log10(pi)` for strengths `pi`, translated to mean 1000.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{BattleRecord, Outcome};

pub const ANCHOR: f64 = 1000.0;
pub const TOLERANCE: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FitError {
    #[error("no battles to fit")]
    NoBattles,
    #[error("comparison graph is disconnected; excluded: {0:?}")]
    DisconnectedGraph(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BtFit {
    pub scores: BTreeMap<String, f64>,
    /// Models that received the virtual half-win/half-loss.
    pub regularized: BTreeSet<String>,
    pub iterations: usize,
    pub converged: bool,
}

/// Pairwise totals: `wins[i][j]` is how often `i` beat `j`, ties counting half.
#[derive(Debug, Clone)]
pub(crate) struct WinMatrix {
    pub models: Vec<String>,
    pub wins: Vec<Vec<f64>>,
}

impl WinMatrix {
    pub fn zeros(models: Vec<String>) -> Self {
        let n = models.len();
        Self {
            models,
            wins: vec![vec![0.0; n]; n],
        }
    }

    pub fn from_battles<'a>(battles: impl IntoIterator<Item = &'a BattleRecord>) -> Self {
        let battles: Vec<&BattleRecord> = battles.into_iter().collect();
        let models: Vec<String> = battles
            .iter()
            .flat_map(|b| [b.model_a.clone(), b.model_b.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let n = models.len();
        let mut wins = vec![vec![0.0; n]; n];
        let idx = |m: &str| {
            models
                .binary_search_by(|x| x.as_str().cmp(m))
                .expect("model indexed")
        };
        for b in battles {
            let (a, bb) = (idx(&b.model_a), idx(&b.model_b));
            match b.outcome {
                Outcome::AWins => wins[a][bb] += 1.0,
                Outcome::BWins => wins[bb][a] += 1.0,
                Outcome::Tie => {
                    wins[a][bb] += 0.5;
                    wins[bb][a] += 0.5;
                }
            }
        }
        Self { models, wins }
    }

    fn games(&self, i: usize, j: usize) -> f64 {
        self.wins[i][j] + self.wins[j][i]
    }

    /// Weakly connected components, each sorted, largest first; equal sizes
    /// are ordered by their smallest model id.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.models.len();
        let mut seen = vec![false; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut k = 0;
            while k < comp.len() {
                let i = comp[k];
                for j in 0..n {
                    if !seen[j] && self.games(i, j) > 0.0 {
                        seen[j] = true;
                        comp.push(j);
                    }
                }
                k += 1;
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        comps
    }

    /// Whether every model can reach every other along "beat" edges, with
    /// `extra` models additionally linked both ways through a shared virtual
    /// opponent.
    fn strongly_connected(&self, extra: &[bool]) -> bool {
        let n = self.models.len();
        let has_virtual = extra.iter().any(|&e| e);
        let reach = |forward: bool| {
            let total = n + usize::from(has_virtual);
            let mut seen = vec![false; total];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                let mut visit = |j: usize| {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if i == n {
                    for (j, &e) in extra.iter().enumerate() {
                        if e {
                            visit(j);
                        }
                    }
                    continue;
                }
                for j in 0..n {
                    let w = if forward {
                        self.wins[i][j]
                    } else {
                        self.wins[j][i]
                    };
                    if w > 0.0 {
                        visit(j);
                    }
                }
                if has_virtual && extra[i] {
                    visit(n);
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }
}

/// Fits scores for battles whose comparison graph is connected.
pub fn fit_bradley_terry(battles: &[BattleRecord]) -> Result<BtFit, FitError> {
    fit_with_initial(battles, |_| ANCHOR)
}

/// Same as [`fit_bradley_terry`], starting the iteration from `initial`
/// scores instead of uniform ones.
pub fn fit_with_initial(
    battles: &[BattleRecord],
    initial: impl Fn(&str) -> f64,
) -> Result<BtFit, FitError> {
    if battles.is_empty() {
        return Err(FitError::NoBattles);
    }
    fit_checked(&WinMatrix::from_battles(battles), initial)
}

/// Fits a win matrix after checking that its comparison graph is connected.
pub(crate) fn fit_checked(
    matrix: &WinMatrix,
    initial: impl Fn(&str) -> f64,
) -> Result<BtFit, FitError> {
    let comps = matrix.components();
    if comps.len() > 1 {
        let excluded = comps[1..]
            .iter()
            .flatten()
            .map(|&i| matrix.models[i].clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        return Err(FitError::DisconnectedGraph(excluded));
    }
    Ok(fit_matrix(matrix, initial))
}

/// Fits the largest connected component and reports the models left out.
pub fn fit_largest_component(battles: &[BattleRecord]) -> Result<(BtFit, Vec<String>), FitError> {
    match fit_bradley_terry(battles) {
        Ok(fit) => Ok((fit, Vec::new())),
        Err(FitError::DisconnectedGraph(excluded)) => {
            let kept: Vec<BattleRecord> = battles
                .iter()
                .filter(|b| excluded.binary_search(&b.model_a).is_err())
                .cloned()
                .collect();
            let fit = fit_bradley_terry(&kept)?;
            Ok((fit, excluded))
        }
        Err(e) => Err(e),
    }
}

fn fit_matrix(matrix: &WinMatrix, initial: impl Fn(&str) -> f64) -> BtFit {
    let n = matrix.models.len();
    let row_wins: Vec<f64> = matrix.wins.iter().map(|r| r.iter().sum()).collect();
    let losses: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| matrix.wins[j][i]).sum())
        .collect();

    // Models with no wins or no losses have no finite maximum; they play one
    // virtual game (half win, half loss) against an opponent pinned at the
    // mean score. If that still leaves the graph not strongly connected, every
    // model gets the virtual game.
    let mut reg: Vec<bool> = (0..n)
        .map(|i| n > 1 && (row_wins[i] == 0.0 || losses[i] == 0.0))
        .collect();
    if n > 1 && !matrix.strongly_connected(&reg) {
        reg = vec![true; n];
    }

    let ln10 = std::f64::consts::LN_10;
    let to_log = |s: f64| s * ln10 / 400.0;
    let mut theta: Vec<f64> = matrix.models.iter().map(|m| to_log(initial(m))).collect();
    center(&mut theta);

    let mut iterations = 0;
    let mut converged = n <= 1;
    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        // After centering, the virtual opponent's log-strength is 0.
        let pi: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
        let mut next = theta.clone();
        for i in 0..n {
            let mut w = row_wins[i];
            let mut denom = 0.0;
            for j in 0..n {
                let g = matrix.games(i, j);
                if j != i && g > 0.0 {
                    denom += g / (pi[i] + pi[j]);
                }
            }
            if reg[i] {
                w += 0.5;
                denom += 1.0 / (pi[i] + 1.0);
            }
            next[i] = (w / denom).ln();
        }
        center(&mut next);
        let max_change = theta
            .iter()
            .zip(&next)
            .map(|(a, b)| ((a - b) * 400.0 / ln10).abs())
            .fold(0.0, f64::max);
        theta = next;
        converged = max_change < TOLERANCE;
    }

    let scores = matrix
        .models
        .iter()
        .zip(&theta)
        .map(|(m, t)| (m.clone(), ANCHOR + t * 400.0 / ln10))
        .collect();
    let regularized = matrix
        .models
        .iter()
        .zip(&reg)
        .filter(|(_, &r)| r)
        .map(|(m, _)| m.clone())
        .collect();
    BtFit {
        scores,
        regularized,
        iterations,
        converged,
    }
}

fn center(theta: &mut [f64]) {
    if theta.is_empty() {
        return;
    }
    let mean = theta.iter().sum::<f64>() / theta.len() as f64;
    for t in theta.iter_mut() {
        *t -= mean;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::test_battle as battle;

    #[test]
    fn three_of_four_gives_log_three_gap() {
        let mut bs = vec![battle("a", "b", Outcome::AWins); 3];
        bs.push(battle("a", "b", Outcome::BWins));
        let fit = fit_bradley_terry(&bs).unwrap();
        let gap = fit.scores["a"] - fit.scores["b"];
        assert!((gap - 400.0 * 3f64.log10()).abs() < 1e-6, "gap {gap}");
        assert!((fit.scores["a"] + fit.scores["b"] - 2000.0).abs() < 1e-9);
        assert!(fit.regularized.is_empty());
    }

    #[test]
    fn symmetric_record_is_flat() {
        let bs = vec![
            battle("a", "b", Outcome::AWins),
            battle("a", "b", Outcome::BWins),
        ];
        let fit = fit_bradley_terry(&bs).unwrap();
        assert!((fit.scores["a"] - 1000.0).abs() < 1e-9);
        assert!((fit.scores["b"] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn ties_count_half() {
        let bs = vec![
            battle("a", "b", Outcome::Tie),
            battle("a", "b", Outcome::AWins),
        ];
        let fit = fit_bradley_terry(&bs).unwrap();
        let gap = fit.scores["a"] - fit.scores["b"];
        assert!((gap - 400.0 * 3f64.log10()).abs() < 1e-6);
    }

    #[test]
    fn shutout_is_regularized_and_finite() {
        let bs = vec![battle("a", "b", Outcome::AWins); 5];
        let fit = fit_bradley_terry(&bs).unwrap();
        assert!(fit.converged);
        assert!(fit.scores["a"] > fit.scores["b"]);
        assert!(fit.scores.values().all(|s| s.is_finite()));
        assert_eq!(fit.regularized.len(), 2);
    }

    #[test]
    fn disconnected_graph_lists_smaller_component() {
        let bs = vec![
            battle("a", "b", Outcome::AWins),
            battle("b", "c", Outcome::AWins),
            battle("x", "y", Outcome::Tie),
        ];
        assert_eq!(
            fit_bradley_terry(&bs),
            Err(FitError::DisconnectedGraph(vec!["x".into(), "y".into()]))
        );
        let (fit, excluded) = fit_largest_component(&bs).unwrap();
        assert_eq!(excluded, vec!["x".to_string(), "y".to_string()]);
        assert_eq!(fit.scores.len(), 3);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(fit_bradley_terry(&[]), Err(FitError::NoBattles));
    }

    #[test]
    fn one_way_bridge_between_cycles_stays_finite() {
        let bs = vec![
            battle("a", "b", Outcome::AWins),
            battle("a", "b", Outcome::BWins),
            battle("c", "d", Outcome::AWins),
            battle("c", "d", Outcome::BWins),
            battle("a", "c", Outcome::AWins),
        ];
        let fit = fit_bradley_terry(&bs).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.regularized.len(), 4);
        assert!(fit.scores["a"] > fit.scores["c"]);
    }
}
