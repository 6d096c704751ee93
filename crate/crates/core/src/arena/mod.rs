//! Blinded pairwise battles and the ratings built from their votes.
//!
//! A battle shows two models' outputs under the labels "Model A" and
//! "Model B". Identities stay hidden until the vote is in. Votes update Elo
//! ratings online; the leaderboard is a Bradley–Terry fit over the whole
//! battle log with bootstrap intervals.

pub mod bootstrap;
pub mod bradley_terry;
pub mod elo;
mod leaderboard;
mod log;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use indexmap::IndexMap;
use parking_lot::{Mutex, RwLock};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{bootstrap_ci, BootstrapCi};
pub use bradley_terry::{fit_bradley_terry, BtFit, FitError};
pub use elo::{expected_score, EloTable};
pub use leaderboard::{rank, to_csv, Leaderboard, Rating};
pub use log::BattleLog;

use crate::clock::SharedClock;
use crate::orchestrator::{JobState, Orchestrator, OrchestratorError};
use crate::store::ImageStore;

pub const LABELS: [&str; 2] = ["Model A", "Model B"];
pub const TIE: &str = "tie";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    AWins,
    BWins,
    Tie,
}

impl Outcome {
    /// Score of side A: 1, 0 or 0.5.
    pub fn score_a(self) -> f64 {
        match self {
            Self::AWins => 1.0,
            Self::BWins => 0.0,
            Self::Tie => 0.5,
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            Self::AWins => Self::BWins,
            Self::BWins => Self::AWins,
            Self::Tie => Self::Tie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BattleRecord {
    pub battle_id: String,
    pub prompt: String,
    pub model_a: String,
    pub model_b: String,
    pub outcome: Outcome,
    pub voted_at: DateTime<Utc>,
}

impl BattleRecord {
    /// A record not tied to any presented battle, e.g. for imports.
    pub fn direct(model_a: &str, model_b: &str, outcome: Outcome, voted_at: DateTime<Utc>) -> Self {
        Self {
            battle_id: uuid::Uuid::new_v4().to_string(),
            prompt: String::new(),
            model_a: model_a.to_string(),
            model_b: model_b.to_string(),
            outcome,
            voted_at,
        }
    }
}

#[cfg(test)]
pub(crate) fn test_battle(a: &str, b: &str, outcome: Outcome) -> BattleRecord {
    BattleRecord {
        battle_id: "t".into(),
        prompt: "p".into(),
        model_a: a.into(),
        model_b: b.into(),
        outcome,
        voted_at: DateTime::UNIX_EPOCH,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedPresentation {
    pub battle_id: String,
    pub prompt: String,
    /// Display label → model id, in label order.
    pub label_map: IndexMap<String, String>,
    pub revealed: bool,
    pub created_at: DateTime<Utc>,
}

impl BlindedPresentation {
    pub fn labels(&self) -> Vec<String> {
        self.label_map.keys().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledOutput {
    pub status: Option<JobState>,
    pub image_ids: Vec<String>,
}

/// Client-facing battle state. Model ids are only present once revealed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BattleView {
    pub battle_id: String,
    pub prompt: String,
    pub labels: Vec<String>,
    pub revealed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<IndexMap<String, String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    pub outputs: IndexMap<String, LabeledOutput>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ArenaError {
    #[error("battles need at least two distinct models, got {0}")]
    PoolTooSmall(usize),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("battle `{0}` not found")]
    UnknownBattle(String),
    #[error("battle `{0}` already has a vote")]
    AlreadyVoted(String),
    #[error("battle `{0}` expired before a vote was cast")]
    BattleExpired(String),
    #[error("`{0}` is not a label of this battle")]
    UnknownLabel(String),
    #[error("a model cannot battle itself (`{0}`)")]
    SameModel(String),
    #[error(transparent)]
    Generation(#[from] OrchestratorError),
    #[error("battle log write failed: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArenaConfig {
    pub k_factor: f64,
    pub initial_rating: f64,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    pub battle_ttl: Duration,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            k_factor: elo::DEFAULT_K,
            initial_rating: elo::INITIAL_RATING,
            bootstrap_resamples: 1000,
            bootstrap_seed: 0,
            battle_ttl: Duration::hours(1),
        }
    }
}

#[derive(Debug)]
struct Battle {
    presentation: BlindedPresentation,
    outcome: Option<Outcome>,
}

/// Single writer for votes, Elo and the log.
#[derive(Debug)]
struct Ledger {
    elo: EloTable,
    records: Vec<BattleRecord>,
    log: BattleLog,
}

pub struct Arena {
    config: ArenaConfig,
    clock: SharedClock,
    generation: Option<(Arc<Orchestrator>, Arc<ImageStore>)>,
    rng: Mutex<ChaCha8Rng>,
    battles: RwLock<HashMap<String, Arc<Mutex<Battle>>>>,
    ledger: Mutex<Ledger>,
    cache: Mutex<Option<(usize, Leaderboard)>>,
}

impl std::fmt::Debug for Arena {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Arena")
            .field("config", &self.config)
            .field("battles", &self.battles.read().len())
            .finish_non_exhaustive()
    }
}

impl Arena {
    pub fn new(config: ArenaConfig, clock: SharedClock) -> Self {
        Self::with_log(config, clock, BattleLog::in_memory(), Vec::new())
    }

    /// Opens a persistent arena, replaying the battle log into Elo.
    pub fn open(config: ArenaConfig, clock: SharedClock, path: &Path) -> std::io::Result<Self> {
        let (log, records) = BattleLog::open(path)?;
        Ok(Self::with_log(config, clock, log, records))
    }

    fn with_log(
        config: ArenaConfig,
        clock: SharedClock,
        log: BattleLog,
        records: Vec<BattleRecord>,
    ) -> Self {
        let mut elo = EloTable::new(config.k_factor, config.initial_rating);
        for r in &records {
            elo.update(&r.model_a, &r.model_b, r.outcome);
        }
        Self {
            config,
            clock,
            generation: None,
            rng: Mutex::new(ChaCha8Rng::from_os_rng()),
            battles: RwLock::default(),
            ledger: Mutex::new(Ledger { elo, records, log }),
            cache: Mutex::new(None),
        }
    }

    /// Submits generation jobs for new battles and serves their images.
    pub fn with_generation(
        mut self,
        orchestrator: Arc<Orchestrator>,
        store: Arc<ImageStore>,
    ) -> Self {
        self.generation = Some((orchestrator, store));
        self
    }

    /// Fixes the seed used for pair and label draws.
    pub fn with_draw_seed(self, seed: u64) -> Self {
        *self.rng.lock() = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn config(&self) -> &ArenaConfig {
        &self.config
    }

    /// Draws two distinct models uniformly from the pool, assigns them to the
    /// display labels by a fair coin and starts generation for both.
    pub fn create_battle(
        &self,
        prompt: &str,
        model_pool: &[String],
    ) -> Result<BlindedPresentation, ArenaError> {
        let mut pool: Vec<&String> = Vec::with_capacity(model_pool.len());
        for m in model_pool {
            if !pool.contains(&m) {
                pool.push(m);
            }
        }
        if pool.len() < 2 {
            return Err(ArenaError::PoolTooSmall(pool.len()));
        }
        if prompt.trim().is_empty() {
            return Err(ArenaError::EmptyPrompt);
        }
        let (first, second) = {
            let mut rng = self.rng.lock();
            let pick = sample(&mut *rng, pool.len(), 2);
            let (i, j) = (pick.index(0), pick.index(1));
            let (lo, hi) = (i.min(j), i.max(j));
            if rng.random_bool(0.5) {
                (pool[lo].clone(), pool[hi].clone())
            } else {
                (pool[hi].clone(), pool[lo].clone())
            }
        };

        let battle_id = uuid::Uuid::new_v4().to_string();
        let mut label_map = IndexMap::new();
        label_map.insert(LABELS[0].to_string(), first.clone());
        label_map.insert(LABELS[1].to_string(), second.clone());
        if let Some((orchestrator, _)) = &self.generation {
            orchestrator.enqueue_jobs(&battle_id, prompt, &[first, second])?;
        }
        let presentation = BlindedPresentation {
            battle_id: battle_id.clone(),
            prompt: prompt.to_string(),
            label_map,
            revealed: false,
            created_at: self.clock.now(),
        };
        self.battles.write().insert(
            battle_id,
            Arc::new(Mutex::new(Battle {
                presentation: presentation.clone(),
                outcome: None,
            })),
        );
        Ok(presentation)
    }

    fn battle_cell(&self, battle_id: &str) -> Result<Arc<Mutex<Battle>>, ArenaError> {
        self.battles
            .read()
            .get(battle_id)
            .cloned()
            .ok_or_else(|| ArenaError::UnknownBattle(battle_id.to_string()))
    }

    fn expired(&self, p: &BlindedPresentation) -> bool {
        self.clock.now() - p.created_at > self.config.battle_ttl
    }

    /// Resolves a display label (or `tie`) to real models and records the
    /// outcome. The battle is revealed afterwards.
    pub fn record_vote(&self, battle_id: &str, chosen: &str) -> Result<BattleRecord, ArenaError> {
        let cell = self.battle_cell(battle_id)?;
        let mut battle = cell.lock();
        if battle.outcome.is_some() {
            return Err(ArenaError::AlreadyVoted(battle_id.to_string()));
        }
        if self.expired(&battle.presentation) {
            return Err(ArenaError::BattleExpired(battle_id.to_string()));
        }
        let outcome = if chosen.eq_ignore_ascii_case(TIE) {
            Outcome::Tie
        } else {
            match battle.presentation.label_map.get_index_of(chosen) {
                Some(0) => Outcome::AWins,
                Some(1) => Outcome::BWins,
                _ => return Err(ArenaError::UnknownLabel(chosen.to_string())),
            }
        };
        let p = &battle.presentation;
        let record = BattleRecord {
            battle_id: p.battle_id.clone(),
            prompt: p.prompt.clone(),
            model_a: p.label_map[0].clone(),
            model_b: p.label_map[1].clone(),
            outcome,
            voted_at: self.clock.now(),
        };
        self.append(record.clone())?;
        battle.outcome = Some(outcome);
        battle.presentation.revealed = true;
        Ok(record)
    }

    /// Records an outcome against real model ids, bypassing blinding.
    pub fn record_outcome(&self, record: BattleRecord) -> Result<(), ArenaError> {
        if record.model_a == record.model_b {
            return Err(ArenaError::SameModel(record.model_a));
        }
        self.append(record)
    }

    fn append(&self, record: BattleRecord) -> Result<(), ArenaError> {
        let mut ledger = self.ledger.lock();
        ledger
            .log
            .append(&record)
            .map_err(|e| ArenaError::Persist(e.to_string()))?;
        ledger
            .elo
            .update(&record.model_a, &record.model_b, record.outcome);
        ledger.records.push(record);
        Ok(())
    }

    pub fn contains_battle(&self, battle_id: &str) -> bool {
        self.battles.read().contains_key(battle_id)
    }

    pub fn battle(&self, battle_id: &str) -> Result<BattleView, ArenaError> {
        let cell = self.battle_cell(battle_id)?;
        let (p, outcome) = {
            let b = cell.lock();
            (b.presentation.clone(), b.outcome)
        };
        let mut outputs: IndexMap<String, LabeledOutput> = p
            .label_map
            .keys()
            .map(|l| {
                (
                    l.clone(),
                    LabeledOutput {
                        status: None,
                        image_ids: Vec::new(),
                    },
                )
            })
            .collect();
        if let Some((orchestrator, store)) = &self.generation {
            let status = orchestrator.job_status(battle_id).unwrap_or_default();
            let records = store.query_by_session(battle_id);
            for (label, model) in &p.label_map {
                let out = outputs.get_mut(label).expect("label present");
                out.status = status.get(model).map(|j| j.state);
                out.image_ids = records
                    .iter()
                    .filter(|r| &r.model_id == model)
                    .map(|r| r.image_id.clone())
                    .collect();
            }
        }
        Ok(BattleView {
            battle_id: p.battle_id,
            prompt: p.prompt,
            labels: p.label_map.keys().cloned().collect(),
            revealed: p.revealed,
            models: p.revealed.then_some(p.label_map),
            outcome,
            outputs,
        })
    }

    /// Drops battles older than the TTL. Unvoted ones never reach the log.
    pub fn expire_battles(&self) -> Vec<String> {
        let stale: Vec<String> = self
            .battles
            .read()
            .iter()
            .filter(|(_, b)| self.expired(&b.lock().presentation))
            .map(|(id, _)| id.clone())
            .collect();
        let mut battles = self.battles.write();
        for id in &stale {
            battles.remove(id);
            if let Some((orchestrator, store)) = &self.generation {
                orchestrator.forget_session(id);
                let _ = store.remove_session(id);
            }
        }
        stale
    }

    pub fn elo(&self, model_id: &str) -> f64 {
        self.ledger.lock().elo.rating(model_id)
    }

    pub fn elo_table(&self) -> EloTable {
        self.ledger.lock().elo.clone()
    }

    pub fn records(&self) -> Vec<BattleRecord> {
        self.ledger.lock().records.clone()
    }

    /// Fits over a snapshot of the log. The result is cached until the next
    /// vote.
    pub fn leaderboard(&self) -> Leaderboard {
        let (records, elo) = {
            let l = self.ledger.lock();
            (l.records.clone(), l.elo.clone())
        };
        if let Some((n, board)) = &*self.cache.lock() {
            if *n == records.len() {
                return board.clone();
            }
        }
        let board = leaderboard::compute(
            &records,
            &elo,
            self.config.bootstrap_resamples,
            self.config.bootstrap_seed,
        );
        *self.cache.lock() = Some((records.len(), board.clone()));
        board
    }
}
