mod common;

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{Reply, Stub};
use serde_json::json;
use t2i_audit_core::clock;
use t2i_audit_core::orchestrator::{JobState, Orchestrator, OrchestratorConfig};
use t2i_audit_core::provider::{
    render_placeholder, HttpProvider, HttpProviderConfig, PredictionRequest, PredictionStatus,
    Provider, ProviderError, ProviderSet,
};
use t2i_audit_core::registry::{ModelRegistry, ModelSpec};
use t2i_audit_core::retry::RetryPolicy;
use t2i_audit_core::store::ImageStore;

fn provider(base: &str) -> HttpProvider {
    let mut cfg = HttpProviderConfig::new(format!("{base}/v1"), "tok-123");
    cfg.retry = RetryPolicy::immediate(3);
    cfg.timeout = Duration::from_secs(5);
    HttpProvider::new(cfg)
}

fn request(key: &str) -> PredictionRequest {
    PredictionRequest {
        provider_slug: "owner/model".into(),
        prompt: "a red bicycle".into(),
        num_images: 2,
        idempotency_key: key.into(),
    }
}

/// Replicate-like stub: predictions start, process once, then succeed with
/// two PNG outputs served by the same stub.
fn replicate_stub() -> Stub {
    let polls = Arc::new(AtomicU32::new(0));
    let base = Arc::new(parking_lot::Mutex::new(String::new()));
    let b2 = base.clone();
    let stub = Stub::start(move |req| {
        let base = b2.lock().clone();
        match (req.method.as_str(), req.url.as_str()) {
            ("POST", "/v1/predictions") => Reply::json(
                201,
                json!({"id": "p1", "status": "starting", "output": null}),
            ),
            ("GET", "/v1/predictions/p1") => {
                if polls.fetch_add(1, Ordering::SeqCst) == 0 {
                    Reply::json(200, json!({"id": "p1", "status": "processing"}))
                } else {
                    Reply::json(
                        200,
                        json!({"id": "p1", "status": "succeeded",
                               "output": [format!("{base}/files/0.png"), format!("{base}/files/1.png")]}),
                    )
                }
            }
            ("GET", path) if path.starts_with("/files/") => {
                let idx: u32 = path[7..8].parse().unwrap();
                Reply::bytes(
                    200,
                    render_placeholder("owner/model", "a red bicycle", idx, 0),
                )
            }
            _ => Reply::json(404, json!({"detail": "not found"})),
        }
    });
    *base.lock() = stub.base_url.clone();
    stub
}

#[test]
fn submit_poll_fetch_round_trip() {
    let stub = replicate_stub();
    let p = provider(&stub.base_url);

    let h = p.submit(&request("job-1:0")).unwrap();
    assert_eq!(h.status, PredictionStatus::Queued);
    assert_eq!(h.provider_prediction_id, "p1");

    let h = p.poll(&h).unwrap();
    assert_eq!(h.status, PredictionStatus::Running);
    let h = p.poll(&h).unwrap();
    assert_eq!(h.status, PredictionStatus::Succeeded);
    assert_eq!(h.output_urls.len(), 2);

    let images = p.fetch_outputs(&h).unwrap();
    assert_eq!(
        images[1],
        render_placeholder("owner/model", "a red bicycle", 1, 0)
    );

    let reqs = stub.requests();
    let create = &reqs[0];
    assert_eq!(create.header("Authorization"), Some("Bearer tok-123"));
    assert_eq!(create.header("Idempotency-Key"), Some("job-1:0"));
    let body: serde_json::Value = serde_json::from_str(&create.body).unwrap();
    assert_eq!(
        body,
        json!({"model": "owner/model", "input": {"prompt": "a red bicycle", "num_outputs": 2}})
    );
}

#[test]
fn repeated_idempotency_key_creates_once() {
    let stub = replicate_stub();
    let p = provider(&stub.base_url);
    let a = p.submit(&request("k:0")).unwrap();
    let b = p.submit(&request("k:0")).unwrap();
    assert_eq!(a, b);
    let posts = stub
        .requests()
        .iter()
        .filter(|r| r.method == "POST")
        .count();
    assert_eq!(posts, 1);
}

#[test]
fn rate_limit_then_success() {
    let calls = Arc::new(AtomicU32::new(0));
    let c = calls.clone();
    let stub = Stub::start(move |_| {
        if c.fetch_add(1, Ordering::SeqCst) == 0 {
            Reply::json(429, json!({"detail": "slow down"})).header("Retry-After", "0.05")
        } else {
            Reply::json(201, json!({"id": "p9", "status": "starting"}))
        }
    });
    let p = provider(&stub.base_url);
    match p.submit(&request("r:0")) {
        Err(ProviderError::RateLimited(wait)) => assert_eq!(wait, Duration::from_millis(50)),
        other => panic!("expected RateLimited, got {other:?}"),
    }
    // Calls inside the advertised window are refused locally.
    assert!(matches!(
        p.submit(&request("r:0")),
        Err(ProviderError::RateLimited(_))
    ));
    assert_eq!(calls.load(Ordering::SeqCst), 1);
    std::thread::sleep(Duration::from_millis(60));
    let h = p.submit(&request("r:0")).unwrap();
    assert_eq!(h.provider_prediction_id, "p9");
}

#[test]
fn server_errors_are_retried_inline() {
    let calls = Arc::new(AtomicU32::new(0));
    let c = calls.clone();
    let stub = Stub::start(move |_| {
        if c.fetch_add(1, Ordering::SeqCst) < 2 {
            Reply::json(503, json!({}))
        } else {
            Reply::json(201, json!({"id": "p2", "status": "queued"}))
        }
    });
    let h = provider(&stub.base_url).submit(&request("s:0")).unwrap();
    assert_eq!(h.provider_prediction_id, "p2");
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn persistent_server_errors_surface_as_unreachable() {
    let stub = Stub::start(|_| Reply::json(500, json!({})));
    let err = provider(&stub.base_url)
        .submit(&request("e:0"))
        .unwrap_err();
    assert!(matches!(err, ProviderError::ProviderUnreachable(_)));
    assert!(err.is_transient());
    assert_eq!(stub.requests().len(), 3);
}

#[test]
fn client_errors_map_to_typed_failures() {
    let stub = Stub::start(|req| match req.url.as_str() {
        "/v1/predictions" if req.header("Authorization") == Some("Bearer bad") => {
            Reply::json(401, json!({}))
        }
        "/v1/predictions" => Reply::json(422, json!({"detail": "invalid version"})),
        _ => Reply::json(404, json!({})),
    });
    let mut cfg = HttpProviderConfig::new(format!("{}/v1", stub.base_url), "bad");
    cfg.retry = RetryPolicy::immediate(3);
    assert_eq!(
        HttpProvider::new(cfg).submit(&request("a:0")),
        Err(ProviderError::AuthFailed)
    );
    let p = provider(&stub.base_url);
    assert_eq!(
        p.submit(&request("b:0")),
        Err(ProviderError::UnknownSlug("owner/model".into()))
    );
    let ghost = t2i_audit_core::provider::PredictionHandle {
        provider_prediction_id: "gone".into(),
        status: PredictionStatus::Running,
        output_urls: vec![],
        error_message: None,
    };
    assert_eq!(
        p.poll(&ghost),
        Err(ProviderError::UnknownPrediction("gone".into()))
    );
    // Non-transient errors are not retried.
    assert_eq!(stub.requests().len(), 3);
}

#[test]
fn unreachable_host() {
    let p = provider("http://127.0.0.1:9");
    let err = p.submit(&request("u:0")).unwrap_err();
    assert!(
        matches!(err, ProviderError::ProviderUnreachable(_)),
        "{err:?}"
    );
}

#[test]
fn orchestrator_drives_http_provider_to_success() {
    let stub = replicate_stub();
    let mut spec = ModelSpec::new("m", "owner/model", "M");
    spec.images_per_request = 2;
    let registry = Arc::new(ModelRegistry::new(vec![spec]).unwrap());
    let clock = clock::system();
    let store = Arc::new(ImageStore::in_memory(clock.clone()));
    let orch = Orchestrator::new(
        registry,
        ProviderSet::single(Arc::new(provider(&stub.base_url))),
        store.clone(),
        clock,
        OrchestratorConfig::mock(),
    );
    let jobs = orch
        .enqueue_jobs("s1", "a red bicycle", &["m".to_string()])
        .unwrap();
    assert!(orch.run_session("s1", 10));
    let job = orch.job(&jobs[0].job_id).unwrap();
    assert_eq!(job.state, JobState::Succeeded);
    assert_eq!(store.query_by_session("s1").len(), 2);
}
