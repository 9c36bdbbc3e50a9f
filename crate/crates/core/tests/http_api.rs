use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use portdrift::hostmatch::read_nscr;
use portdrift::service::http::{router, AppState};

const FIXTURE: &str = "synthetic-v20-s7.csv";

fn fixtures() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))
}

fn app() -> Router {
    router(Arc::new(AppState::new(fixtures(), None)))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router, body: Value) -> String {
    let (status, v) = call(app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

/// Six hosts; the one with two opened ports ranks first under SKNN-1.
fn inline_report(sc: usize) -> Value {
    let row = |i: u8, labels: &[&str], vuln: bool| {
        json!({ "ip_initial": format!("10.0.0.{i}"), "ip_updated": format!("10.0.0.{i}"), "labels": labels, "vulnerable": vuln })
    };
    json!({
        "nscr": {
            "ports": ["tcp_22", "tcp_80"],
            "rows": [
                row(1, &["OpenToClosed", "ClosedToClosed"], false),
                row(2, &["OpenToClosed", "ClosedToClosed"], false),
                row(3, &["ClosedToOpen", "ClosedToOpen"], true),
                row(4, &["OpenToClosed", "ClosedToClosed"], false),
                row(5, &["OpenToClosed", "ClosedToClosed"], false),
                row(6, &["ClosedToClosed", "ClosedToOpen"], false),
            ]
        },
        "config": { "algorithm": "sknn", "k": 1, "sc": sc, "pruning": true }
    })
}

async fn verdict(app: &Router, id: &str, vulnerable: bool) -> (StatusCode, Value) {
    call(app, Method::POST, &format!("/sessions/{id}/verdict"), Some(json!({ "vulnerable": vulnerable }))).await
}

#[tokio::test]
async fn session_stops_after_sc_false_positives() {
    let app = app();
    let id = create(&app, json!({ "nscr": FIXTURE, "config": { "algorithm": "sknn", "k": 15, "sc": 3, "pruning": true } })).await;
    for i in 1..=3 {
        let (status, next) = call(&app, Method::GET, &format!("/sessions/{id}/next"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(next["rank"], i);
        let (status, out) = verdict(&app, &id, false).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(out["consecutive_fp"], i);
        assert_eq!(out["stopped"], i == 3);
    }
    let (status, body) = call(&app, Method::GET, &format!("/sessions/{id}/next"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].is_string());
    let (status, _) = verdict(&app, &id, true).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, report) = call(&app, Method::GET, &format!("/sessions/{id}/report"), None).await;
    assert_eq!(report["inspected"], 3);
    assert_eq!(report["stopped"], true);
}

#[tokio::test]
async fn true_positive_resets_the_counter() {
    let app = app();
    let id = create(&app, inline_report(3)).await;
    let (_, next) = call(&app, Method::GET, &format!("/sessions/{id}/next"), None).await;
    assert_eq!(next["host"]["ip_updated"], "10.0.0.3");
    assert_eq!(next["host"]["changes"].as_array().unwrap().len(), 2);
    let mut outcomes = Vec::new();
    for v in [true, false, false, false] {
        let (status, out) = verdict(&app, &id, v).await;
        assert_eq!(status, StatusCode::OK);
        outcomes.push((out["consecutive_fp"].as_u64().unwrap(), out["stopped"].as_bool().unwrap()));
    }
    assert_eq!(outcomes, [(0, false), (1, false), (2, false), (3, true)]);
    let (_, report) = call(&app, Method::GET, &format!("/sessions/{id}/report"), None).await;
    assert_eq!(report["inspected"], 4);
    assert_eq!(report["tp"], 1);
    assert_eq!(report["fp"], 3);
    assert_eq!(report["recall"], 1.0);
    assert_eq!(report["precision"], 0.25);
}

#[tokio::test]
async fn unknown_session_is_404() {
    let app = app();
    for uri in ["/sessions/s99/next", "/sessions/s99/report", "/sessions/s99/ranking", "/sessions/s99/log"] {
        let (status, body) = call(&app, Method::GET, uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(body["category"], "not-found");
    }
    let (status, _) = verdict(&app, "s99", true).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_bodies_name_the_field() {
    let app = app();
    let (status, body) = call(&app, Method::POST, "/sessions", Some(json!({ "nscr": FIXTURE, "config": { "algorithm": "sknn", "k": "many" } }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["path"], "config.k");

    let (status, body) = call(&app, Method::POST, "/sessions", Some(json!({ "nscr": { "ports": ["tcp_22"], "rows": [{ "labels": ["Sideways"] }] } }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["path"], "nscr.rows[0].labels[0]");

    let (status, body) = call(&app, Method::POST, "/sessions", Some(json!({ "nscr": "../etc/passwd" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");

    let id = create(&app, inline_report(3)).await;
    let (status, body) = call(&app, Method::POST, &format!("/sessions/{id}/verdict"), Some(json!({ "vulnerable": "yes" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["path"], "vulnerable");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_verdicts_for_one_rank() {
    let app = app();
    let id = create(&app, inline_report(3)).await;
    let uri = format!("/sessions/{id}/verdict");
    let body = json!({ "vulnerable": false, "rank": 1 });
    let (a, b) = tokio::join!(
        call(&app, Method::POST, &uri, Some(body.clone())),
        call(&app, Method::POST, &uri, Some(body.clone())),
    );
    let mut statuses = [a.0, b.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    let (_, report) = call(&app, Method::GET, &format!("/sessions/{id}/report"), None).await;
    assert_eq!(report["inspected"], 1);
}

#[tokio::test]
async fn ranking_is_a_permutation_in_rank_order() {
    let app = app();
    let id = create(&app, json!({ "nscr": FIXTURE, "preset": "sknn15-sc20" })).await;
    let (status, view) = call(&app, Method::GET, &format!("/sessions/{id}/ranking"), None).await;
    assert_eq!(status, StatusCode::OK);
    let hosts = view["hosts"].as_array().unwrap();
    let ranks: Vec<u64> = hosts.iter().map(|h| h["rank"].as_u64().unwrap()).collect();
    assert_eq!(ranks, (1..=hosts.len() as u64).collect::<Vec<_>>());
    let scores: Vec<f64> = hosts.iter().map(|h| h["anomaly_score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let nscr = read_nscr(fixtures().join(FIXTURE)).unwrap();
    let changed = nscr.entries().iter().filter(|e| e.has_change()).count();
    assert_eq!(hosts.len(), changed);
    let mut entries: Vec<u64> = hosts.iter().map(|h| h["entry"].as_u64().unwrap()).collect();
    entries.sort_unstable();
    entries.dedup();
    assert_eq!(entries.len(), changed);
    assert_eq!(view["ports"].as_array().unwrap().len(), nscr.ports().len());
}

#[tokio::test]
async fn replayed_log_reproduces_the_report() {
    let app = app();
    let id = create(&app, json!({ "nscr": FIXTURE, "config": { "algorithm": "sknn", "k": 15, "sc": 5, "pruning": true } })).await;
    let nscr = read_nscr(fixtures().join(FIXTURE)).unwrap();
    for _ in 0..12 {
        let (status, next) = call(&app, Method::GET, &format!("/sessions/{id}/next"), None).await;
        if status == StatusCode::CONFLICT {
            break;
        }
        let ip = next["host"]["ip_updated"].as_str().unwrap();
        let vulnerable = nscr
            .entries()
            .iter()
            .find(|e| e.ip_updated.map(|a| a.to_string()).as_deref() == Some(ip))
            .unwrap()
            .vulnerable
            .unwrap();
        verdict(&app, &id, vulnerable).await;
    }
    let (_, report) = call(&app, Method::GET, &format!("/sessions/{id}/report"), None).await;
    let (_, log) = call(&app, Method::GET, &format!("/sessions/{id}/log"), None).await;
    assert_eq!(log["events"].as_array().unwrap().len() as u64, report["inspected"].as_u64().unwrap());

    let replay = create(&app, json!({ "nscr": FIXTURE, "config": { "algorithm": "sknn", "k": 15, "sc": 5, "pruning": true }, "replay": log })).await;
    let (_, replayed) = call(&app, Method::GET, &format!("/sessions/{replay}/report"), None).await;
    assert_eq!(replayed, report);

    let (_, ids) = call(&app, Method::GET, "/sessions", None).await;
    assert_eq!(ids, json!([id, replay]));
}

#[tokio::test]
async fn setup_listings() {
    let app = app();
    let (status, datasets) = call(&app, Method::GET, "/datasets", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(datasets.as_array().unwrap().iter().any(|d| d == FIXTURE));
    let (_, presets) = call(&app, Method::GET, "/presets", None).await;
    assert_eq!(presets[0]["config"]["k"], 15);
    assert_eq!(presets[0]["config"]["sc"], 20);
}

#[tokio::test]
async fn sessions_are_persisted_to_the_log_dir() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(AppState::new(fixtures(), Some(dir.path().to_path_buf()))));
    let id = create(&app, inline_report(2)).await;
    verdict(&app, &id, true).await;
    let record: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("{id}.json"))).unwrap()).unwrap();
    assert_eq!(record["session_id"], id.as_str());
    assert_eq!(record["log"]["events"].as_array().unwrap().len(), 1);
}
