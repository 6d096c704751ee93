#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use t2i_audit_core::clock;
use t2i_audit_core::orchestrator::OrchestratorConfig;
use t2i_audit_core::provider::{render_placeholder, FailureMode, MockProvider, ProviderSet};
use t2i_audit_core::registry::ModelRegistry;
use t2i_audit_core::session::{Question, WorkflowStage};
use t2i_audit_core::store::content_id;
use t2i_audit_core::{Platform, PlatformBuilder};
use t2i_audit_server::{bind, router, ApiError, ServiceConfig};

pub const PROMPT: &str = "a fancy dinner party";

/// Server on an ephemeral port, stopped on drop.
pub struct TestServer {
    pub base: String,
    pub platform: Arc<Platform>,
    stop: Option<mpsc::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .unwrap()
}

fn stop_signal(rx: mpsc::Receiver<()>) -> impl std::future::Future<Output = ()> + Send {
    async move {
        let _ = tokio::task::spawn_blocking(move || rx.recv()).await;
    }
}

impl TestServer {
    /// Serves through the same path as the binary.
    pub fn start(mut config: ServiceConfig) -> Self {
        config.listen_address = "127.0.0.1:0".into();
        let (ready_tx, ready_rx) = mpsc::channel();
        let (stop_tx, stop_rx) = mpsc::channel();
        let thread = std::thread::spawn(move || {
            runtime().block_on(async move {
                let bound = bind(config).await.expect("server binds");
                ready_tx
                    .send((bound.local_addr(), bound.platform()))
                    .unwrap();
                bound.run(stop_signal(stop_rx)).await.expect("server runs");
            })
        });
        let (addr, platform) = ready_rx.recv().expect("server started");
        Self {
            base: format!("http://{addr}"),
            platform,
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn mock(seed: u64) -> Self {
        let mut config = ServiceConfig::default();
        config.mock_mode = true;
        config.mock_seed = seed;
        Self::start(config)
    }

    /// Serves a prebuilt platform, e.g. one with injected provider faults.
    pub fn with_platform(platform: Platform) -> Self {
        let platform = Arc::new(platform);
        platform.start();
        let (ready_tx, ready_rx) = mpsc::channel();
        let (stop_tx, stop_rx) = mpsc::channel();
        let p = platform.clone();
        let thread = std::thread::spawn(move || {
            runtime().block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                ready_tx.send(listener.local_addr().unwrap()).unwrap();
                let listener = axum::serve::ListenerExt::tap_io(listener, |tcp| {
                    let _ = tcp.set_nodelay(true);
                });
                axum::serve(listener, router(p.clone(), None))
                    .with_graceful_shutdown(stop_signal(stop_rx))
                    .await
                    .unwrap();
                tokio::task::spawn_blocking(move || p.shutdown())
                    .await
                    .unwrap();
            })
        });
        let addr = ready_rx.recv().unwrap();
        Self {
            base: format!("http://{addr}"),
            platform,
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn client(&self) -> Client {
        Client::new(&self.base)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub struct Resp {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Resp {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    /// The `error_code` of an error envelope.
    pub fn code(&self) -> String {
        self.json()["error_code"]
            .as_str()
            .unwrap_or_default()
            .to_string()
    }
}

#[derive(Clone)]
pub struct Client {
    agent: ureq::Agent,
    pub base: String,
}

impl Client {
    pub fn new(base: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Self {
            agent,
            base: base.to_string(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn finish(r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Resp {
        let mut r = r.expect("request completes");
        let content_type = r
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string();
        Resp {
            status: r.status().as_u16(),
            content_type,
            body: r.body_mut().read_to_vec().expect("body"),
        }
    }

    pub fn get(&self, path: &str) -> Resp {
        Self::finish(self.agent.get(&self.url(path)).call())
    }

    pub fn post(&self, path: &str, body: Value) -> Resp {
        Self::finish(self.agent.post(&self.url(path)).send_json(&body))
    }

    pub fn post_empty(&self, path: &str) -> Resp {
        Self::finish(self.agent.post(&self.url(path)).send_empty())
    }

    pub fn post_raw(&self, path: &str, body: &str) -> Resp {
        Self::finish(
            self.agent
                .post(&self.url(path))
                .header("content-type", "application/json")
                .send(body),
        )
    }

    /// Answers every question of the session's current stage.
    pub fn answer_stage(&self, id: &str, questions: &[Question]) {
        let stage = self.stage(id);
        for q in questions.iter().filter(|q| q.stage == stage) {
            let r = self.post(
                &format!("/sessions/{id}/answers"),
                json!({ "question_id": q.id, "text": format!("answer to {}", q.id) }),
            );
            assert_eq!(r.status, 200, "{}", String::from_utf8_lossy(&r.body));
        }
    }

    pub fn stage(&self, id: &str) -> WorkflowStage {
        serde_json::from_value(self.get(&format!("/sessions/{id}")).json()["stage"].clone())
            .unwrap()
    }

    /// Advances, waiting out a pending primary generation.
    pub fn advance_ready(&self, id: &str) -> Value {
        for _ in 0..2000 {
            let r = self.post_empty(&format!("/sessions/{id}/advance"));
            match r.status {
                200 => return r.json(),
                409 if r.code() == "PRIMARY_GENERATION_PENDING" => {
                    std::thread::sleep(Duration::from_millis(2))
                }
                s => panic!(
                    "advance failed with {s}: {}",
                    String::from_utf8_lossy(&r.body)
                ),
            }
        }
        panic!("primary generation never finished");
    }

    pub fn questions(&self) -> Vec<Question> {
        serde_json::from_value(self.get("/questions").json()).unwrap()
    }

    pub fn output_models(&self, id: &str) -> Vec<String> {
        let v = self.get(&format!("/sessions/{id}/outputs")).json();
        v["outputs"].as_object().unwrap().keys().cloned().collect()
    }

    /// Waits until every job of the session is terminal.
    pub fn wait_jobs(&self, id: &str) {
        for _ in 0..5000 {
            let v = self.get(&format!("/sessions/{id}/status")).json();
            let done = v["jobs"].as_object().unwrap().values().all(|j| {
                matches!(
                    j["state"].as_str(),
                    Some("succeeded" | "failed" | "canceled")
                )
            });
            if done {
                return;
            }
            std::thread::sleep(Duration::from_millis(2));
        }
        panic!("jobs never finished");
    }
}

pub struct Faulty {
    pub platform: Platform,
    pub mock: Arc<MockProvider>,
    pub broken_model: String,
    pub broken_slug: String,
}

/// Mock-backed platform whose last registry model always fails.
pub fn faulty_platform(seed: u64, max_retries: u32) -> Faulty {
    let registry = ModelRegistry::default_models();
    let broken = registry.all().last().unwrap().clone();
    let mock = Arc::new(
        MockProvider::new(seed)
            .with_slugs(registry.all().iter().map(|m| m.provider_slug.clone()))
            .with_failure(&broken.provider_slug, FailureMode::Always),
    );
    let platform =
        PlatformBuilder::new(registry, ProviderSet::single(mock.clone()), clock::system())
            .orchestrator(OrchestratorConfig {
                max_retries,
                ..OrchestratorConfig::mock()
            })
            .build()
            .unwrap();
    Faulty {
        platform,
        mock,
        broken_model: broken.model_id,
        broken_slug: broken.provider_slug,
    }
}

/// The operations a gating sequence drives, over HTTP or in process.
pub trait Backend {
    fn create(&self, prompt: &str, models: &[String]) -> Result<String, String>;
    fn answer(&self, id: &str, question_id: &str, text: &str) -> Result<(), String>;
    fn advance(&self, id: &str) -> Result<WorkflowStage, String>;
    fn visible_models(&self, id: &str) -> Result<Vec<String>, String>;
    fn image_visible(&self, image_id: &str) -> bool;
}

fn code(e: impl Into<ApiError>) -> String {
    e.into().code.to_string()
}

pub struct Direct<'a>(pub &'a Platform);

impl Backend for Direct<'_> {
    fn create(&self, prompt: &str, models: &[String]) -> Result<String, String> {
        self.0
            .sessions
            .create_session(prompt, models)
            .map(|s| s.session_id)
            .map_err(code)
    }

    fn answer(&self, id: &str, question_id: &str, text: &str) -> Result<(), String> {
        self.0
            .sessions
            .record_answer(id, question_id, text)
            .map(|_| ())
            .map_err(code)
    }

    fn advance(&self, id: &str) -> Result<WorkflowStage, String> {
        self.0
            .sessions
            .advance_stage(id)
            .map(|s| s.stage)
            .map_err(code)
    }

    fn visible_models(&self, id: &str) -> Result<Vec<String>, String> {
        self.0
            .sessions
            .visible_outputs(id)
            .map(|o| o.keys().cloned().collect())
            .map_err(code)
    }

    fn image_visible(&self, image_id: &str) -> bool {
        self.0.image_visible(image_id) && self.0.store.get(image_id).is_ok()
    }
}

impl Backend for Client {
    fn create(&self, prompt: &str, models: &[String]) -> Result<String, String> {
        let r = self.post("/sessions", json!({ "prompt": prompt, "models": models }));
        match r.status {
            201 => Ok(r.json()["session_id"].as_str().unwrap().to_string()),
            _ => Err(r.code()),
        }
    }

    fn answer(&self, id: &str, question_id: &str, text: &str) -> Result<(), String> {
        let r = self.post(
            &format!("/sessions/{id}/answers"),
            json!({ "question_id": question_id, "text": text }),
        );
        match r.status {
            200 => Ok(()),
            _ => Err(r.code()),
        }
    }

    fn advance(&self, id: &str) -> Result<WorkflowStage, String> {
        let r = self.post_empty(&format!("/sessions/{id}/advance"));
        match r.status {
            200 => Ok(serde_json::from_value(r.json()["stage"].clone()).unwrap()),
            _ => Err(r.code()),
        }
    }

    fn visible_models(&self, id: &str) -> Result<Vec<String>, String> {
        let r = self.get(&format!("/sessions/{id}/outputs"));
        match r.status {
            200 => Ok(r.json()["outputs"]
                .as_object()
                .unwrap()
                .keys()
                .cloned()
                .collect()),
            _ => Err(r.code()),
        }
    }

    fn image_visible(&self, image_id: &str) -> bool {
        let r = self.get(&format!("/images/{image_id}"));
        match r.status {
            200 => true,
            404 => false,
            s => panic!("image fetch returned {s}"),
        }
    }
}

#[derive(Debug, Default)]
pub struct GatingOutcome {
    pub ops: usize,
    pub rejected: usize,
    /// Non-primary images or outputs observed before the multi-model stage.
    pub leaks: Vec<String>,
    /// Operations whose result differs from the reference model.
    pub mismatches: Vec<String>,
    pub reached_multi_model: bool,
}

fn expected_visible(stage: WorkflowStage, primary: &str, models: &[String]) -> Vec<String> {
    if stage.shows_all_models() {
        models.to_vec()
    } else if stage.shows_primary_only() {
        vec![primary.to_string()]
    } else {
        Vec::new()
    }
}

/// Reference model of one session, checked against the backend.
struct Sequence<'a> {
    backend: &'a dyn Backend,
    questions: &'a [Question],
    seq: u64,
    id: String,
    models: Vec<String>,
    primary: String,
    images: Vec<(String, String)>,
    stage: WorkflowStage,
    answered: BTreeSet<String>,
    primary_failed: bool,
    out: GatingOutcome,
}

impl Sequence<'_> {
    fn expect(&mut self, what: &str, got: Result<(), String>, want: Option<&str>) {
        self.out.ops += 1;
        match (&got, want) {
            (Ok(()), None) => {}
            (Err(c), Some(w)) if c == w => self.out.rejected += 1,
            _ => self.out.mismatches.push(format!(
                "seq {}: {what} at {}: got {got:?}, want {want:?}",
                self.seq, self.stage
            )),
        }
    }

    fn unanswered(&self) -> Vec<&Question> {
        self.questions
            .iter()
            .filter(|q| q.stage == self.stage && !self.answered.contains(&q.id))
            .collect()
    }

    fn answer(&mut self, q: &Question, text: &str) {
        let want = if q.stage != self.stage {
            Some("WRONG_STAGE")
        } else if text.trim().is_empty() {
            Some("EMPTY_ANSWER")
        } else {
            None
        };
        let got = self.backend.answer(&self.id, &q.id, text);
        if got.is_ok() {
            self.answered.insert(q.id.clone());
        }
        self.expect("answer", got, want);
    }

    fn advance(&mut self) {
        self.out.ops += 1;
        let got = self.backend.advance(&self.id);
        let next = self.stage.next();
        let missing = !self.unanswered().is_empty();
        match (&got, next) {
            (Err(c), None) if c == "ALREADY_COMPLETED" => self.out.rejected += 1,
            (Err(c), Some(_)) if missing && c == "UNANSWERED_QUESTIONS" => self.out.rejected += 1,
            (Err(c), Some(WorkflowStage::SingleModelReview))
                if c == "PRIMARY_GENERATION_PENDING" =>
            {
                self.out.rejected += 1;
                std::thread::sleep(Duration::from_micros(200));
            }
            (Err(c), Some(WorkflowStage::SingleModelReview))
                if c == "PRIMARY_GENERATION_FAILED" =>
            {
                self.out.rejected += 1;
                self.primary_failed = true;
            }
            (Ok(s), Some(n)) if *s == n && !missing => self.stage = n,
            _ => self.out.mismatches.push(format!(
                "seq {}: advance at {}: got {got:?}",
                self.seq, self.stage
            )),
        }
    }

    fn check_outputs(&mut self) {
        self.out.ops += 1;
        let mut want = expected_visible(self.stage, &self.primary, &self.models);
        want.sort();
        match self.backend.visible_models(&self.id) {
            Ok(mut got) => {
                got.sort();
                if !self.stage.shows_all_models() && got.iter().any(|m| m != &self.primary) {
                    self.out.leaks.push(format!(
                        "seq {}: outputs at {}: {got:?}",
                        self.seq, self.stage
                    ));
                }
                if got != want {
                    self.out.mismatches.push(format!(
                        "seq {}: outputs at {}: {got:?}, want {want:?}",
                        self.seq, self.stage
                    ));
                }
            }
            Err(e) => self
                .out
                .mismatches
                .push(format!("seq {}: outputs: {e}", self.seq)),
        }
    }

    fn probe_images(&mut self) {
        self.out.ops += 1;
        let allowed = expected_visible(self.stage, &self.primary, &self.models);
        for (model, image_id) in &self.images {
            if !allowed.contains(model) && self.backend.image_visible(image_id) {
                self.out.leaks.push(format!(
                    "seq {}: image of {model} served at {}",
                    self.seq, self.stage
                ));
            }
        }
    }
}

/// Runs one randomized sequence of valid and invalid operations against
/// `backend`, checking every response against a reference model of the
/// workflow and probing every image the session can produce. Half of the
/// sequences are driven to completion after their random prefix.
pub fn gating_sequence(
    backend: &dyn Backend,
    questions: &[Question],
    registry: &ModelRegistry,
    mock_seed: u64,
    seq: u64,
) -> GatingOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seq);
    let prompt = format!("{PROMPT} #{seq}");
    let mut models = registry.enabled_ids();
    models.shuffle(&mut rng);
    let primary = models[0].clone();
    let images = registry
        .enabled()
        .flat_map(|spec| {
            (0..spec.images_per_request).map(|i| {
                let bytes = render_placeholder(&spec.provider_slug, &prompt, i, mock_seed);
                (spec.model_id.clone(), content_id(&bytes))
            })
        })
        .collect();
    let mut s = Sequence {
        backend,
        questions,
        seq,
        id: String::new(),
        models: models.clone(),
        primary: primary.clone(),
        images,
        stage: WorkflowStage::ExpectationQuestions,
        answered: BTreeSet::new(),
        primary_failed: false,
        out: GatingOutcome::default(),
    };

    let bad: [(String, Vec<String>, &str); 3] = [
        ("  ".into(), models.clone(), "EMPTY_PROMPT"),
        (
            prompt.clone(),
            vec!["no-such-model".into()],
            "UNKNOWN_MODEL",
        ),
        (
            prompt.clone(),
            vec![primary.clone(), primary],
            "DUPLICATE_MODEL",
        ),
    ];
    let (p, m, c) = &bad[rng.random_range(0..bad.len())];
    s.expect("create", backend.create(p, m).map(|_| ()), Some(c));
    match backend.create(&prompt, &models) {
        Ok(id) => s.id = id,
        Err(e) => {
            s.out
                .mismatches
                .push(format!("seq {seq}: create failed: {e}"));
            return s.out;
        }
    }

    for i in 0..rng.random_range(1..60) {
        let roll: f64 = rng.random();
        if roll < 0.40 {
            let current: Vec<Question> = questions
                .iter()
                .filter(|q| q.stage == s.stage)
                .cloned()
                .collect();
            let q = if !current.is_empty() && rng.random_bool(0.7) {
                current[rng.random_range(0..current.len())].clone()
            } else {
                questions[rng.random_range(0..questions.len())].clone()
            };
            s.answer(&q, &format!("answer {i}"));
        } else if roll < 0.45 {
            let got = backend.answer(&s.id, "q-none", "x");
            s.expect("unknown question", got, Some("UNKNOWN_QUESTION"));
        } else if roll < 0.50 {
            let q = questions[rng.random_range(0..questions.len())].clone();
            s.answer(&q, "   ");
        } else if roll < 0.53 {
            let got = backend.advance("no-such-session").map(|_| ());
            s.expect("missing session", got, Some("SESSION_NOT_FOUND"));
        } else if roll < 0.75 {
            s.advance();
        } else if roll < 0.87 {
            s.check_outputs();
        } else {
            s.probe_images();
        }
        s.out.reached_multi_model |= s.stage.shows_all_models();
    }

    if rng.random_bool(0.5) {
        let mut budget = 20_000;
        while s.stage != WorkflowStage::Completed && !s.primary_failed && budget > 0 {
            budget -= 1;
            match s.unanswered().first().map(|q| (*q).clone()) {
                Some(q) => s.answer(&q, "final answer"),
                None => {
                    s.advance();
                    s.check_outputs();
                    s.probe_images();
                }
            }
            s.out.reached_multi_model |= s.stage.shows_all_models();
        }
        if budget == 0 {
            s.out.mismatches.push(format!("seq {seq}: never completed"));
        }
    }
    s.out
}
