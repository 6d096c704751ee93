//! Wires the registry, generation stack, sessions, reports and arena into one
//! object.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::arena::{Arena, ArenaConfig};
use crate::clock::SharedClock;
use crate::orchestrator::{Orchestrator, OrchestratorConfig};
use crate::provider::{MockProvider, ProviderSet};
use crate::registry::ModelRegistry;
use crate::report::{ForumClient, ReportBook, ReportError};
use crate::session::{
    DirSessionRepo, MemorySessionRepo, QuestionCatalog, SessionError, SessionManager, SessionRepo,
};
use crate::store::{ImageStore, StoreError};

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("image store: {0}")]
    Store(#[from] StoreError),
    #[error("reports: {0}")]
    Report(#[from] ReportError),
    #[error("sessions: {0}")]
    Session(#[from] SessionError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub struct PlatformBuilder {
    registry: Arc<ModelRegistry>,
    providers: ProviderSet,
    clock: SharedClock,
    catalog: QuestionCatalog,
    orchestrator: OrchestratorConfig,
    arena: ArenaConfig,
    draw_seed: Option<u64>,
    forum: Option<ForumClient>,
    image_base: Option<String>,
    root: Option<PathBuf>,
}

impl PlatformBuilder {
    pub fn new(registry: ModelRegistry, providers: ProviderSet, clock: SharedClock) -> Self {
        Self {
            registry: Arc::new(registry),
            providers,
            clock,
            catalog: QuestionCatalog::default_catalog(),
            orchestrator: OrchestratorConfig::default(),
            arena: ArenaConfig::default(),
            draw_seed: None,
            forum: None,
            image_base: None,
            root: None,
        }
    }

    /// Default registry served entirely by a seeded mock provider.
    pub fn mock(seed: u64, clock: SharedClock) -> Self {
        let registry = ModelRegistry::default_models();
        let mock = MockProvider::new(seed)
            .with_slugs(registry.all().iter().map(|m| m.provider_slug.clone()));
        Self::new(registry, ProviderSet::single(Arc::new(mock)), clock)
            .orchestrator(OrchestratorConfig::mock())
    }

    pub fn catalog(mut self, catalog: QuestionCatalog) -> Self {
        self.catalog = catalog;
        self
    }

    pub fn orchestrator(mut self, config: OrchestratorConfig) -> Self {
        self.orchestrator = config;
        self
    }

    pub fn arena(mut self, config: ArenaConfig) -> Self {
        self.arena = config;
        self
    }

    pub fn draw_seed(mut self, seed: u64) -> Self {
        self.draw_seed = Some(seed);
        self
    }

    pub fn forum(mut self, forum: Option<ForumClient>) -> Self {
        self.forum = forum;
        self
    }

    pub fn image_base(mut self, base: impl Into<String>) -> Self {
        self.image_base = Some(base.into());
        self
    }

    /// Persist everything under `root`; in memory otherwise.
    pub fn storage_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = Some(root.into());
        self
    }

    pub fn build(self) -> Result<Platform, PlatformError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PlatformError::Io { path, source }
        };
        let order = self.registry.enabled_ids();
        let (store, reports, repo, arena): (_, _, Arc<dyn SessionRepo>, _) = match &self.root {
            Some(root) => {
                std::fs::create_dir_all(root).map_err(io(root))?;
                let store = ImageStore::open_dir(&root.join("images"), self.clock.clone())?;
                let reports = ReportBook::open(root.join("reports"))?;
                let sessions = root.join("sessions");
                let repo = DirSessionRepo::open(&sessions).map_err(io(&sessions))?;
                let log = root.join("battles.jsonl");
                let arena =
                    Arena::open(self.arena.clone(), self.clock.clone(), &log).map_err(io(&log))?;
                (store, reports, Arc::new(repo), arena)
            }
            None => (
                ImageStore::in_memory(self.clock.clone()),
                ReportBook::in_memory(),
                Arc::new(MemorySessionRepo::new()),
                Arena::new(self.arena.clone(), self.clock.clone()),
            ),
        };
        let store = Arc::new(store.with_model_order(order));
        let reports = match self.image_base {
            Some(base) => reports.with_image_base(base),
            None => reports,
        };
        let reports = Arc::new(reports);
        let orchestrator = Arc::new(Orchestrator::new(
            self.registry.clone(),
            self.providers,
            store.clone(),
            self.clock.clone(),
            self.orchestrator,
        ));
        let sessions = SessionManager::new(
            self.registry.clone(),
            Arc::new(self.catalog),
            orchestrator.clone(),
            store.clone(),
            reports.clone(),
            repo,
            self.clock.clone(),
        );
        sessions.restore()?;
        let mut arena = arena.with_generation(orchestrator.clone(), store.clone());
        if let Some(seed) = self.draw_seed {
            arena = arena.with_draw_seed(seed);
        }
        Ok(Platform {
            registry: self.registry,
            orchestrator,
            store,
            reports,
            sessions,
            arena,
            forum: self.forum,
            clock: self.clock,
        })
    }
}

pub struct Platform {
    pub registry: Arc<ModelRegistry>,
    pub orchestrator: Arc<Orchestrator>,
    pub store: Arc<ImageStore>,
    pub reports: Arc<ReportBook>,
    pub sessions: SessionManager,
    pub arena: Arena,
    pub forum: Option<ForumClient>,
    pub clock: SharedClock,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform")
            .field("sessions", &self.sessions)
            .field("arena", &self.arena)
            .finish_non_exhaustive()
    }
}

impl Platform {
    /// Starts the background worker pool.
    pub fn start(&self) {
        self.orchestrator.start_workers();
    }

    pub fn shutdown(&self) {
        self.orchestrator.shutdown();
    }

    /// Whether an image may be served: some audit session holding it has
    /// reached a stage that reveals its model, or it belongs to a live battle.
    pub fn image_visible(&self, image_id: &str) -> bool {
        self.store.records_for_image(image_id).iter().any(|r| {
            self.sessions
                .model_visible(&r.session_id, &r.model_id)
                .unwrap_or(false)
                || self.arena.contains_battle(&r.session_id)
        })
    }

    /// Periodic cleanup of idle sessions and stale battles.
    pub fn housekeeping(&self) -> (usize, usize) {
        (
            self.sessions.expire_idle().len(),
            self.arena.expire_battles().len(),
        )
    }
}
