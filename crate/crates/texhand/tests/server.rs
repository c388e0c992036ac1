mod common;

use std::sync::Arc;
use std::thread;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use texhand::{RegistryError, SessionRegistry};
use texhand_core::{
    build_embedding_store, plan_assignments, replay_file, Assignment, Catalog, ConfusionMode, MetricsReport,
    MockBackend, SessionConfig, SessionLog, SessionState, TextileId,
};
use tower::ServiceExt;

fn registry(log: SessionLog) -> Arc<SessionRegistry> {
    let catalog = Arc::new(Catalog::bundled());
    let backend = Arc::new(MockBackend::new(64));
    let store = Arc::new(build_embedding_store(&catalog, backend.as_ref()).unwrap());
    Arc::new(SessionRegistry::new(catalog, store, backend, SessionConfig::default(), log))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn catalog_plan_and_empty_metrics() {
    let app = texhand::router(registry(SessionLog::discard()));
    let (status, body) = call(&app, "GET", "/catalog", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["samples"].as_array().unwrap().len(), 20);

    let (status, body) = call(&app, "POST", "/plan", Some(json!({"seed": 42}))).await;
    assert_eq!(status, StatusCode::OK);
    let expected = serde_json::to_value(plan_assignments(&Catalog::bundled(), 42).unwrap()).unwrap();
    assert_eq!(body, expected);

    let (status, body) = call(&app, "GET", "/metrics", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"report": null}));

    let (status, body) = call(&app, "GET", "/sessions/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");
}

#[tokio::test]
async fn final_only_metrics_count_one_guess_per_task() {
    let app = texhand::router(registry(SessionLog::discard()));
    let (_, s) = call(&app, "POST", "/sessions", Some(json!({"target_id": 3, "reference_id": 12}))).await;
    let id = s["session_id"].as_str().unwrap();
    for _ in 0..5 {
        let (status, _) = call(&app, "POST", &format!("/sessions/{id}/describe"), Some(json!({"text": "soft warm"}))).await;
        assert_eq!(status, StatusCode::OK);
        let judged = json!({"correct": false, "validity": 2, "similarity": 3});
        call(&app, "POST", &format!("/sessions/{id}/judge"), Some(judged)).await;
    }
    let (_, session) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(session["state"], "lost");

    let (_, per_attempt) = call(&app, "GET", "/metrics", None).await;
    let (_, final_only) = call(&app, "GET", "/metrics?final_only=true", None).await;
    let total = |v: &Value| -> u64 {
        v["report"]["confusion"]["counts"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|c| c.as_u64().unwrap()).sum()
    };
    assert_eq!(total(&per_attempt), 5);
    assert_eq!(total(&final_only), 1);
    assert_eq!(per_attempt["report"]["validity"]["histogram"][1], 5);
}

async fn raw_request(addr: std::net::SocketAddr, method: &str, path: &str, body: &str) -> String {
    use std::io::{Read, Write};
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: test\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    tokio::task::spawn_blocking(move || {
        let mut stream = std::net::TcpStream::connect(addr).unwrap();
        stream.write_all(req.as_bytes()).unwrap();
        let mut out = String::new();
        stream.read_to_string(&mut out).unwrap();
        out
    })
    .await
    .unwrap()
}

#[tokio::test]
async fn graceful_shutdown_abandons_open_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.jsonl");
    let reg = registry(SessionLog::open(&path).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(texhand::serve(listener, reg, async {
        let _ = rx.await;
    }));

    let reply = raw_request(addr, "POST", "/sessions", r#"{"target_id": 8, "reference_id": 1}"#).await;
    assert!(reply.starts_with("HTTP/1.1 201"), "{reply}");
    let body: Value = serde_json::from_str(reply.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    let id = body["session_id"].as_str().unwrap().to_owned();
    let reply = raw_request(addr, "POST", &format!("/sessions/{id}/describe"), r#"{"text": "silky"}"#).await;
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");

    tx.send(()).unwrap();
    server.await.unwrap().unwrap();

    let lines: Vec<Value> =
        std::fs::read_to_string(&path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2]["event"], "session_end");
    assert_eq!(lines[2]["outcome"], "abandoned");
    assert_eq!(lines[2]["session_id"], id.as_str());
    assert_eq!(replay_file(&path).unwrap().abandoned, vec![id]);
}

#[test]
fn concurrent_sessions_log_every_transition() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.jsonl");
    let reg = registry(SessionLog::open(&path).unwrap());
    let plan = plan_assignments(reg.catalog(), 5).unwrap();

    let workers: Vec<_> = plan
        .pairs
        .chunks(10)
        .map(|chunk| {
            let reg = reg.clone();
            let chunk = chunk.to_vec();
            thread::spawn(move || {
                let mut ok = 0usize;
                for pair in chunk {
                    let s = reg.start(pair).unwrap();
                    ok += 1;
                    loop {
                        let d = reg.describe(&s.session_id, "a soft, light fabric").unwrap();
                        ok += 1;
                        assert!(matches!(reg.describe(&s.session_id, "again"), Err(RegistryError::Game(_))));
                        let correct = d.predicted_id == pair.target_id;
                        let after = if correct {
                            reg.judge(&s.session_id, true, None, None).unwrap()
                        } else {
                            reg.judge(&s.session_id, false, Some(4), Some(5)).unwrap()
                        };
                        ok += 1;
                        if after.state.is_terminal() {
                            break;
                        }
                    }
                }
                ok
            })
        })
        .collect();
    let transitions: usize = workers.into_iter().map(|w| w.join().unwrap()).sum();

    let log_lines = std::fs::read_to_string(&path).unwrap().lines().count();
    assert_eq!(log_lines, transitions);
    let replayed = replay_file(&path).unwrap();
    assert_eq!(replayed.records, reg.completed());
    assert_eq!(replayed.records.len(), 80);
    let live = reg.report(ConfusionMode::PerAttempt).unwrap().unwrap();
    let rebuilt = MetricsReport::build(&replayed.records, reg.catalog(), ConfusionMode::PerAttempt, false).unwrap();
    assert_eq!(live, rebuilt);
    assert_eq!(reg.shutdown().unwrap(), 0);
}

#[test]
fn history_seeds_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.jsonl");
    {
        let reg = registry(SessionLog::open(&path).unwrap());
        let s = reg.start(Assignment::new(TextileId(2), TextileId(9)).unwrap()).unwrap();
        reg.describe(&s.session_id, "cotton").unwrap();
        let s = reg.judge(&s.session_id, true, None, None).unwrap();
        assert_eq!(s.state, SessionState::Won);
    }
    let history = replay_file(&path).unwrap();
    let reg = Arc::try_unwrap(registry(SessionLog::discard())).ok().unwrap().with_history(history);
    let report = reg.report(ConfusionMode::PerAttempt).unwrap().unwrap();
    assert_eq!((report.total_tasks, report.wins), (1, 1));
}
