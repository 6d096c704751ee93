use std::collections::BTreeMap;

use super::Outcome;

pub const DEFAULT_K: f64 = 32.0;
pub const INITIAL_RATING: f64 = 1000.0;

/// Expected score of a player rated `ra` against one rated `rb`.
pub fn expected_score(ra: f64, rb: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((rb - ra) / 400.0))
}

/// Online Elo ratings. Every update moves both players by the same amount in
/// opposite directions.
#[derive(Debug, Clone)]
pub struct EloTable {
    k: f64,
    initial: f64,
    ratings: BTreeMap<String, f64>,
}

impl Default for EloTable {
    fn default() -> Self {
        Self::new(DEFAULT_K, INITIAL_RATING)
    }
}

impl EloTable {
    pub fn new(k: f64, initial: f64) -> Self {
        Self {
            k,
            initial,
            ratings: BTreeMap::new(),
        }
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn rating(&self, model_id: &str) -> f64 {
        self.ratings.get(model_id).copied().unwrap_or(self.initial)
    }

    pub fn ratings(&self) -> &BTreeMap<String, f64> {
        &self.ratings
    }

    /// Applies one game result and returns the change for `model_a`.
    ///
    /// The delta is computed with the lexicographically smaller id as the
    /// reference side, so recording the same game with the sides swapped
    /// produces bit-identical ratings.
    pub fn update(&mut self, model_a: &str, model_b: &str, outcome: Outcome) -> f64 {
        let (first, second, score) = if model_a <= model_b {
            (model_a, model_b, outcome.score_a())
        } else {
            (model_b, model_a, 1.0 - outcome.score_a())
        };
        let r1 = self.rating(first);
        let r2 = self.rating(second);
        let delta = self.k * (score - expected_score(r1, r2));
        self.ratings.insert(first.to_string(), r1 + delta);
        self.ratings.insert(second.to_string(), r2 - delta);
        if first == model_a {
            delta
        } else {
            -delta
        }
    }
}
