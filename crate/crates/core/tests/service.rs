use std::collections::BTreeMap;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use lada::config::Config;
use lada::experiment::run_seed;
use lada::service::{bind, router, serve_on, AppState, MetricsRow, QueryView, Status};
use serde_json::{json, Value};
use tower::ServiceExt;

fn small_config() -> Config {
    let mut c = Config::default();
    c.data.n = 200;
    c.data.n_test = 50;
    c.model.hidden = vec![16, 8];
    c.model.epochs = 5;
    c.strategy.pool_size = 64;
    c.policy.steps = 5;
    c.policy.hidden = 8;
    c.run.rounds = 3;
    c.run.seeds = vec![7];
    c
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(v) => Body::from(serde_json::to_vec(&v).unwrap()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

async fn create(app: &Router, cfg: &Config) -> String {
    let (st, v) = call(app, "POST", "/sessions", Some(serde_json::to_value(cfg).unwrap())).await;
    assert_eq!(st, StatusCode::CREATED, "{v}");
    assert_eq!(v["phase"], "awaiting_labels");
    v["id"].as_str().unwrap().to_string()
}

async fn status(app: &Router, id: &str) -> Status {
    let (st, v) = call(app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    serde_json::from_value(v).unwrap()
}

/// Polls until training is over.
async fn settle(app: &Router, id: &str) -> Status {
    for _ in 0..3000 {
        let s = status(app, id).await;
        if s.phase != lada::service::Phase::Training {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("session {id} stuck in training");
}

async fn pending(app: &Router, id: &str) -> Vec<QueryView> {
    let (st, v) = call(app, "GET", &format!("/sessions/{id}/queries"), None).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

async fn metrics(app: &Router, id: &str) -> Vec<MetricsRow> {
    let (st, v) = call(app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!(st, StatusCode::OK);
    serde_json::from_value(v).unwrap()
}

fn labels_body(pairs: &[(usize, usize)]) -> Value {
    let m: BTreeMap<String, usize> = pairs.iter().map(|&(i, y)| (i.to_string(), y)).collect();
    json!({ "labels": m })
}

fn truth(cfg: &Config) -> Vec<usize> {
    cfg.load_dataset().unwrap().labels
}

#[tokio::test]
async fn health_is_ok() {
    let app = router(AppState::default());
    let (st, v) = call(&app, "GET", "/health", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn one_full_round() {
    let app = router(AppState::default());
    let cfg = small_config();
    let id = create(&app, &cfg).await;

    let s = status(&app, &id).await;
    assert_eq!((s.round, s.labeled, s.pending, s.classes), (0, 20, 10, 2));
    assert_eq!(metrics(&app, &id).await.len(), 1);

    let q = pending(&app, &id).await;
    assert_eq!(q, pending(&app, &id).await);
    assert_eq!(q.len(), 10);
    let mut by_pair: BTreeMap<usize, usize> = BTreeMap::new();
    for v in &q {
        *by_pair.entry(v.pair_id.expect("pairs")).or_default() += 1;
        assert_eq!(v.values.len(), 2);
        assert!(v.shape.is_none());
    }
    assert_eq!(by_pair.len(), 5);
    assert!(by_pair.values().all(|&n| n == 2));

    let y = truth(&cfg);
    let body = labels_body(&q.iter().map(|v| (v.instance_id, y[v.instance_id])).collect::<Vec<_>>());
    let (st, v) = call(&app, "POST", &format!("/sessions/{id}/labels"), Some(body)).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["phase"], "training");

    let s = settle(&app, &id).await;
    assert_eq!((s.round, s.labeled), (1, 30));
    let m = metrics(&app, &id).await;
    assert_eq!(m.len(), 2);
    assert_eq!(m[1].labeled, m[0].labeled + 10);
    assert!(m.iter().all(|r| (0.0..=1.0).contains(&r.test_acc)));
}

#[tokio::test]
async fn partial_submissions_accumulate_out_of_order() {
    let app = router(AppState::default());
    let cfg = small_config();
    let id = create(&app, &cfg).await;
    let q = pending(&app, &id).await;
    let y = truth(&cfg);
    let all: Vec<(usize, usize)> = q.iter().rev().map(|v| (v.instance_id, y[v.instance_id])).collect();
    let (st, v) = call(&app, "POST", &format!("/sessions/{id}/labels"), Some(labels_body(&all[..4]))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["phase"], "awaiting_labels");
    let seen = pending(&app, &id).await;
    assert_eq!(seen.iter().filter(|v| v.label.is_some()).count(), 4);
    let (st, v) = call(&app, "POST", &format!("/sessions/{id}/labels"), Some(labels_body(&all[4..]))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["phase"], "training");
    assert_eq!(settle(&app, &id).await.round, 1);
}

#[tokio::test]
async fn bad_requests_are_rejected_atomically() {
    let app = router(AppState::default());
    let cfg = small_config();
    let id = create(&app, &cfg).await;
    let q = pending(&app, &id).await;
    let first = q[0].instance_id;
    let url = format!("/sessions/{id}/labels");

    let not_pending = (0..200).find(|i| q.iter().all(|v| v.instance_id != *i)).unwrap();
    let (st, v) = call(&app, "POST", &url, Some(labels_body(&[(first, 0), (not_pending, 1)]))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "not_pending");
    assert!(v["detail"].as_str().unwrap().contains(&not_pending.to_string()));

    let (st, _) = call(&app, "POST", &url, Some(labels_body(&[(first, 0), (q[1].instance_id, 9)]))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);

    let dup = json!({ "labels": { first.to_string(): 0, format!("0{first}"): 1 } });
    let (st, _) = call(&app, "POST", &url, Some(dup)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);

    let (st, _) = call(&app, "POST", &url, Some(json!({ "labels": { "x": 0 } }))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);

    assert!(pending(&app, &id).await.iter().all(|v| v.label.is_none()));
}

#[tokio::test]
async fn relabeling_is_a_conflict() {
    let app = router(AppState::default());
    let id = create(&app, &small_config()).await;
    let q = pending(&app, &id).await;
    let url = format!("/sessions/{id}/labels");
    let (st, _) = call(&app, "POST", &url, Some(labels_body(&[(q[0].instance_id, 0)]))).await;
    assert_eq!(st, StatusCode::OK);
    let (st, v) = call(&app, "POST", &url, Some(labels_body(&[(q[0].instance_id, 1)]))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(v["error"], "conflict");
}

#[tokio::test]
async fn racing_clients_one_wins() {
    let app = router(AppState::default());
    let cfg = small_config();
    let id = create(&app, &cfg).await;
    let q = pending(&app, &id).await;
    let y = truth(&cfg);
    let body = labels_body(&q[..3].iter().map(|v| (v.instance_id, y[v.instance_id])).collect::<Vec<_>>());
    let url = format!("/sessions/{id}/labels");
    let (a, b) = tokio::join!(
        call(&app, "POST", &url, Some(body.clone())),
        call(&app, "POST", &url, Some(body.clone()))
    );
    let mut codes = [a.0, b.0];
    codes.sort();
    assert_eq!(codes, [StatusCode::OK, StatusCode::CONFLICT]);
}

#[tokio::test]
async fn errors_for_unknown_session_bad_config_and_missing_data() {
    let app = router(AppState::default());
    let (st, v) = call(&app, "GET", "/sessions/42", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "not_found");
    let (st, _) = call(&app, "GET", "/sessions/42/metrics", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let (st, v) = call(&app, "POST", "/sessions", Some(json!({ "model": { "widths": [3] } }))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "invalid_config");

    let mut cfg = small_config();
    cfg.strategy.budget = 7;
    let (st, _) = call(&app, "POST", "/sessions", Some(serde_json::to_value(&cfg).unwrap())).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);

    let mut cfg = small_config();
    cfg.data.source = lada::config::DataSource::Idx;
    cfg.data.images = Some("/nonexistent/images.idx".into());
    cfg.data.labels = Some("/nonexistent/labels.idx".into());
    let (st, v) = call(&app, "POST", "/sessions", Some(serde_json::to_value(&cfg).unwrap())).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["detail"].as_str().unwrap().contains("/nonexistent/images.idx"), "{v}");
}

/// Drives a session to the end with ground-truth labels.
async fn replay(app: &Router, id: &str, y: &[usize]) {
    loop {
        let s = settle(app, id).await;
        if s.phase == lada::service::Phase::Finished {
            return;
        }
        let q = pending(app, id).await;
        let open: Vec<(usize, usize)> = q
            .iter()
            .filter(|v| v.label.is_none())
            .map(|v| (v.instance_id, y[v.instance_id]))
            .collect();
        let (st, v) = call(app, "POST", &format!("/sessions/{id}/labels"), Some(labels_body(&open))).await;
        assert_eq!(st, StatusCode::OK, "{v}");
    }
}

fn strip(rows: Vec<MetricsRow>) -> Vec<MetricsRow> {
    rows.into_iter().map(|r| MetricsRow { wall_ms: 0, ..r }).collect()
}

fn in_process(cfg: &Config) -> Vec<MetricsRow> {
    let ds = cfg.load_dataset().unwrap();
    let rows = run_seed(cfg, &ds, cfg.run.seeds[0]).unwrap();
    strip(rows.iter().map(MetricsRow::from).collect())
}

#[tokio::test]
async fn replayed_labels_match_simulated_run() {
    let app = router(AppState::default());
    let cfg = small_config();
    let id = create(&app, &cfg).await;
    replay(&app, &id, &truth(&cfg)).await;
    let via_api = strip(metrics(&app, &id).await);
    assert_eq!(via_api.len(), 4);
    assert_eq!(via_api, in_process(&cfg));
    let (st, v) = call(&app, "GET", &format!("/sessions/{id}/queries"), None).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(v["error"], "phase");
}

#[tokio::test]
async fn restart_resumes_from_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let y = truth(&cfg);
    let app = router(AppState::open(Some(dir.path().to_path_buf())).unwrap());
    let id = create(&app, &cfg).await;
    let before = pending(&app, &id).await;
    let half: Vec<(usize, usize)> = before[..5].iter().map(|v| (v.instance_id, y[v.instance_id])).collect();
    let (st, _) = call(&app, "POST", &format!("/sessions/{id}/labels"), Some(labels_body(&half))).await;
    assert_eq!(st, StatusCode::OK);
    drop(app);

    let state = AppState::open(Some(dir.path().to_path_buf())).unwrap();
    state.resume_training().await;
    let app = router(state);
    let after = pending(&app, &id).await;
    assert_eq!(before.iter().map(|v| v.instance_id).collect::<Vec<_>>(), after.iter().map(|v| v.instance_id).collect::<Vec<_>>());
    assert_eq!(after.iter().filter(|v| v.label.is_some()).count(), 5);

    let id2 = create(&app, &cfg).await;
    assert_ne!(id, id2);

    replay(&app, &id, &y).await;
    assert_eq!(strip(metrics(&app, &id).await), in_process(&cfg));
}

#[tokio::test]
async fn real_socket_and_port_in_use() {
    let listener = bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve_on(listener, AppState::default(), async {
        let _ = rx.await;
    }));

    let v: Value = reqwest::get(format!("http://{addr}/health")).await.unwrap().json().await.unwrap();
    assert_eq!(v["status"], "ok");

    match bind(&addr.to_string()).await {
        Err(lada::Error::Io { path, .. }) => assert_eq!(path.to_string_lossy(), addr.to_string()),
        other => panic!("expected io error, got {other:?}"),
    }

    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}
