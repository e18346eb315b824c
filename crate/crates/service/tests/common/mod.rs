//! Fixtures shared by the protocol tests and the workspace acceptance run.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{TimeDelta, TimeZone, Utc};
use serde_json::{json, Value};
use tower::ServiceExt;

use layoutpref::graph::Graph;
use layoutpref_service::{
    router, DisplayClaims, ServiceConfig, ServiceCorpus, ServiceHandle, SkipRequest, SteppingClock, TokenSigner,
};

pub const SECRET: &[u8] = b"test-secret";
pub const TAGS: [&str; 8] = ["neato", "kamada_kawai", "fa2", "fdp", "sfdp", "spring", "pmds", "spectral"];

pub fn small_graph(i: usize) -> Graph {
    let n = 4 + i % 5;
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|v| (v, v + 1)).collect();
    if i % 2 == 0 {
        edges.push((0, n - 1));
    }
    Graph::new(format!("g{i:02}"), n, &edges).unwrap()
}

pub fn corpus(n: usize) -> ServiceCorpus {
    ServiceCorpus::build((0..n).map(small_graph), 11)
}

pub fn start(n: usize, seed: u64, store: Option<&Path>, cache: Option<&Path>) -> ServiceHandle {
    let config = ServiceConfig {
        store_path: store.map(Path::to_path_buf),
        cache_dir: cache.map(Path::to_path_buf),
        secret: SECRET.to_vec(),
        seed,
        render: layoutpref::layout::RenderParams {
            size: 64,
            node_radius: 2,
            edge_width: 1,
        },
        ..ServiceConfig::default()
    };
    let clock = SteppingClock::new(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(), TimeDelta::seconds(1));
    ServiceHandle::start(corpus(n), config, Arc::new(clock)).unwrap()
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, body.to_vec())
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, if b.is_empty() { Value::Null } else { serde_json::from_slice(&b).unwrap() })
}

pub async fn post(app: &Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

pub fn order_of(token: &str) -> [usize; 8] {
    TokenSigner::new(SECRET).verify(token).unwrap().display_order
}
pub struct SessionOutcome {
    pub expected: String,
    pub actual: String,
    pub labels: i64,
    pub stats_total: Value,
    pub skips: usize,
    pub duplicates: usize,
    pub forgeries: usize,
    pub exhausted: usize,
}

/// Plays 100 actions by three annotators (labels, skips, duplicate labels
/// and forged tokens) against a fresh service and returns the store file
/// alongside the one expected from the responses.
pub async fn scripted_session(store_path: &Path) -> SessionOutcome {
    let app = router(start(40, 5, Some(store_path), None));
    let annotators = ["ann-a", "ann-b", "ann-c"];
    let mut expected = String::new();
    let mut labels_stored = 0i64;
    let mut last_label: [Option<Value>; 3] = [None, None, None];
    let (mut skips, mut duplicates, mut forgeries, mut exhausted) = (0, 0, 0, 0);

    for i in 0..100usize {
        let who = i % 3;
        let ann = annotators[who];
        if i % 17 == 5 {
            if let Some(prev) = &last_label[who] {
                let (s, _) = post(&app, "/api/label", prev).await;
                assert_eq!(s, StatusCode::CONFLICT, "action {i}");
                duplicates += 1;
                continue;
            }
        }
        let (s, task) = get(&app, &format!("/api/next?annotator={ann}")).await;
        if s == StatusCode::NO_CONTENT {
            exhausted += 1;
            continue;
        }
        assert_eq!(s, StatusCode::OK);
        let graph_id = task["graph_id"].as_str().unwrap().to_string();
        let token = task["display_token"].as_str().unwrap().to_string();
        assert_eq!(task["images"].as_array().unwrap().len(), 8);
        if i % 23 == 11 {
            let forged = TokenSigner::new(b"not-the-secret".to_vec()).sign(&DisplayClaims {
                graph_id: graph_id.clone(),
                annotator: ann.into(),
                display_order: [0, 1, 2, 3, 4, 5, 6, 7],
                serial: 1,
            });
            let body = json!({"annotator": ann, "graph_id": graph_id, "position": 1,
                              "duration_ms": 10, "hard": false, "display_token": forged});
            let (s, _) = post(&app, "/api/label", &body).await;
            assert_eq!(s, StatusCode::FORBIDDEN);
            forgeries += 1;
            continue;
        }
        if i % 10 == 7 {
            let body = json!({"annotator": ann, "graph_id": graph_id, "display_token": token});
            let (s, ack) = post(&app, "/api/skip", &body).await;
            assert_eq!(s, StatusCode::OK);
            assert_eq!(ack["ok"], true);
            skips += 1;
            continue;
        }
        let position = i % 8 + 1;
        let duration = 1000 + 37 * i as u64;
        let hard = i % 5 == 0;
        let body = json!({"annotator": ann, "graph_id": graph_id, "position": position,
                          "duration_ms": duration, "hard": hard, "display_token": token});
        let (s, ack) = post(&app, "/api/label", &body).await;
        assert_eq!(s, StatusCode::OK, "action {i}: {ack}");
        let order = order_of(&token);
        let ts = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + TimeDelta::seconds(labels_stored);
        labels_stored += 1;
        let order_text: Vec<String> = order.iter().map(|x| x.to_string()).collect();
        expected.push_str(&format!(
            "{{\"graph_id\":\"{graph_id}\",\"annotator_id\":\"{ann}\",\"choice\":\"{}\",\"display_order\":[{}],\"duration_ms\":{duration},\"hard\":{hard},\"timestamp\":\"{}\"}}\n",
            TAGS[order[position - 1]],
            order_text.join(","),
            ts.format("%Y-%m-%dT%H:%M:%SZ"),
        ));
        last_label[who] = Some(body);
    }
    let (s, stats) = get(&app, "/api/stats").await;
    assert_eq!(s, StatusCode::OK);
    SessionOutcome {
        expected,
        actual: std::fs::read_to_string(store_path).unwrap(),
        labels: labels_stored,
        stats_total: stats["total_labels"].clone(),
        skips,
        duplicates,
        forgeries,
        exhausted,
    }
}


/// Share of `calls` assignments that come from the skip queue after one skip.
pub async fn resurfacing_rate(calls: usize) -> f64 {
    let h = start(20, 2024, None, None);
    let t = h.next("r").await.unwrap().unwrap();
    h.skip(SkipRequest {
        annotator: "r".into(),
        graph_id: t.graph_id,
        display_token: t.display_token,
    })
    .await
    .unwrap();
    let mut hits = 0;
    for _ in 0..calls {
        if h.next("r").await.unwrap().unwrap().from_skip_queue {
            hits += 1;
        }
    }
    hits as f64 / calls as f64
}

