use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use kidd::koopman::{KoopmanConfig, KoopmanModel};
use kidd::numerics::Matrix;
use kidd::service::{router, AppState, ServiceConfig, HISTORY_HEADER};
use kidd::trajgen::{make_dataset, save_dataset, GeneratorConfig, Scenario, SplitSizes};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    cfg: ServiceConfig,
}

fn rotation_model() -> KoopmanModel {
    let mut m = KoopmanModel::new(KoopmanConfig { obs_dim: 5, ..Default::default() }, 4).unwrap();
    let (c, s) = (0.35f64.cos(), 0.35f64.sin());
    m.k = Matrix::from_fn(5, 5, |i, j| match (i, j) {
        (0, 0) | (1, 1) => 0.99 * c,
        (0, 1) => -0.99 * s,
        (1, 0) => 0.99 * s,
        (2, 2) => 0.6,
        (3, 3) => 0.3,
        (4, 4) => -0.1,
        (2, 3) => 0.05,
        _ => 0.0,
    });
    m
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let models = dir.path().join("models");
    std::fs::create_dir_all(&models).unwrap();
    rotation_model().save(&models.join("rot.json")).unwrap();
    std::fs::write(models.join("broken.json"), "{\"version\": 1}").unwrap();
    let data = make_dataset(Scenario::Circular, SplitSizes::new(2, 2, 5), 6, &GeneratorConfig::default()).unwrap();
    save_dataset(&data, &dir.path().join("circular.jsonl")).unwrap();
    let cfg = ServiceConfig { model_dir: models, data_dir: dir.path().to_path_buf(), ..Default::default() };
    Fixture { _dir: dir, cfg }
}

fn app(cfg: &ServiceConfig) -> Router {
    router(AppState::new(cfg.clone()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Option<String>, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let hash = resp.headers().get(HISTORY_HEADER).map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into())) };
    (status, hash, value)
}

async fn open(app: &Router) -> (String, Value) {
    let (status, hash, v) = call(app, "POST", "/sessions", Some(json!({"model": "rot", "scenario": "circular"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(hash.as_deref(), v["history_hash"].as_str());
    (v["session_id"].as_str().unwrap().to_string(), v)
}

fn poses(v: &Value) -> Vec<f64> {
    v["predicted"].as_array().unwrap().iter().flat_map(|p| p.as_array().unwrap().iter().map(|x| x.as_f64().unwrap())).collect()
}

#[tokio::test]
async fn identity_edit_keeps_rollouts_and_undo_restores() {
    let f = fixture();
    let app = app(&f.cfg);
    let (id, initial) = open(&app).await;
    let rollout = json!({"trajectory_index": 1, "horizon": 40});
    let (st, _, before) = call(&app, "POST", &format!("/sessions/{id}/rollout"), Some(rollout.clone())).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(before["predicted"].as_array().unwrap().len(), 40);
    assert_eq!(before["ground_truth"].as_array().unwrap().len(), 17);

    let (st, h, edited) = call(&app, "POST", &format!("/sessions/{id}/manipulate"), Some(json!({"pair": 0, "dr": 0.0, "dtheta": 0.0}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_ne!(h.unwrap(), initial["history_hash"].as_str().unwrap());
    assert_eq!(edited["edits"].as_array().unwrap().len(), 1);
    let (_, _, after) = call(&app, "POST", &format!("/sessions/{id}/rollout"), Some(rollout)).await;
    for (a, b) in poses(&before).iter().zip(poses(&after)) {
        assert!((a - b).abs() < 1e-6);
    }

    let (st, _, undone) = call(&app, "POST", &format!("/sessions/{id}/undo"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(undone["spectrum"], initial["spectrum"]);
    assert_eq!(undone["history_hash"], initial["history_hash"]);
    let (st, _, _) = call(&app, "POST", &format!("/sessions/{id}/undo"), None).await;
    assert_eq!(st, StatusCode::CONFLICT);
}

#[tokio::test]
async fn angle_edits_change_the_spectrum() {
    let f = fixture();
    let app = app(&f.cfg);
    let (id, initial) = open(&app).await;
    let angle0 = initial["spectrum"]["eigenvalues"][0]["angle"].as_f64().unwrap().abs();
    let (st, _, v) = call(&app, "POST", &format!("/sessions/{id}/manipulate"), Some(json!({"pair": 0, "theta_scale": 1.5}))).await;
    assert_eq!(st, StatusCode::OK);
    let e = &v["spectrum"]["eigenvalues"];
    assert!((e[0]["angle"].as_f64().unwrap().abs() - 1.5 * angle0).abs() < 1e-9);
    assert!((e[0]["im"].as_f64().unwrap() + e[1]["im"].as_f64().unwrap()).abs() < 1e-12);
    let (st, _, v) = call(&app, "POST", &format!("/sessions/{id}/manipulate"), Some(json!({"pair": 0, "r": 1.3}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["stability"]["stable"], false);
    let (st, _, v) = call(&app, "POST", &format!("/sessions/{id}/reduce"), Some(json!({"k": 2}))).await;
    assert_eq!(st, StatusCode::OK);
    let mags: Vec<f64> = v["spectrum"]["eigenvalues"].as_array().unwrap().iter().map(|e| e["magnitude"].as_f64().unwrap()).collect();
    assert!(mags[2..].iter().all(|m| *m < 1e-6));
    let (_, _, current) = call(&app, "GET", &format!("/sessions/{id}/spectrum"), None).await;
    assert_eq!(current, v["spectrum"]);
}

#[tokio::test]
async fn error_statuses() {
    let f = fixture();
    let app = app(&f.cfg);
    let (id, _) = open(&app).await;
    let m = format!("/sessions/{id}/manipulate");
    // mode 1 is the real eigenvalue 0.6
    assert_eq!(call(&app, "POST", &m, Some(json!({"pair": 1, "dtheta": 0.2}))).await.0, StatusCode::CONFLICT);
    assert_eq!(call(&app, "POST", &m, Some(json!({"pair": 17}))).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "POST", &m, Some(json!({"pair": 0, "r": 1.0, "r_scale": 2.0}))).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "POST", &m, Some(json!({"pair": 0, "r": -1.0}))).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "POST", &m, Some(json!({"pear": 0}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", &format!("/sessions/{id}/reduce"), Some(json!({"k": 0}))).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let r = format!("/sessions/{id}/rollout");
    assert_eq!(call(&app, "POST", &r, Some(json!({"trajectory_index": 0, "horizon": 201}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", &r, Some(json!({"trajectory_index": 0, "horizon": 200}))).await.0, StatusCode::OK);
    assert_eq!(call(&app, "POST", &r, Some(json!({"horizon": 5}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", &r, Some(json!({"initial_poses": [[0.1, 0.1, 0.0, 0.0]]}))).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, _, v) = call(&app, "POST", &r, Some(json!({"initial_poses": [[0.1, 0.1, 0.0, 0.0], [0.1, 0.2, 0.0, 0.0], [0.0, 0.2, 0.0, 0.0]], "horizon": 7}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["predicted"].as_array().unwrap().len(), 7);
    assert!(v.get("ground_truth").is_none());
    assert_eq!(call(&app, "POST", &r, Some(json!({"trajectory_index": 99}))).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    assert_eq!(call(&app, "GET", "/sessions/nope/spectrum", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/sessions", Some(json!({"model": "missing"}))).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/sessions", Some(json!({"model": "../rot"}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", "/sessions", Some(json!({"model": 3}))).await.0, StatusCode::BAD_REQUEST);
    let (st, _, v) = call(&app, "POST", "/sessions", Some(json!({"model": "broken"}))).await;
    assert_eq!(st, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(v["diagnostic_id"].as_str().is_some_and(|d| !d.is_empty()));

    assert_eq!(call(&app, "DELETE", &format!("/sessions/{id}"), None).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, "DELETE", &format!("/sessions/{id}"), None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sessions_are_isolated_and_the_base_file_is_untouched() {
    let f = fixture();
    let path = f.cfg.model_dir.join("rot.json");
    let before = std::fs::read(&path).unwrap();
    let app = app(&f.cfg);
    let (a, initial) = open(&app).await;
    let (b, _) = open(&app).await;
    let edits_a = [json!({"pair": 0, "theta_scale": 0.5}), json!({"pair": 1, "r": 0.1})];
    let edits_b = [json!({"pair": 0, "r_scale": 0.5})];
    let ((), ()) = tokio::join!(
        async {
            for e in &edits_a {
                assert_eq!(call(&app, "POST", &format!("/sessions/{a}/manipulate"), Some(e.clone())).await.0, StatusCode::OK);
            }
        },
        async {
            for e in &edits_b {
                assert_eq!(call(&app, "POST", &format!("/sessions/{b}/manipulate"), Some(e.clone())).await.0, StatusCode::OK);
            }
        }
    );
    let (_, _, va) = call(&app, "GET", &format!("/sessions/{a}"), None).await;
    let (_, _, vb) = call(&app, "GET", &format!("/sessions/{b}"), None).await;
    assert_eq!(va["edits"].as_array().unwrap().len(), 2);
    assert_eq!(vb["edits"].as_array().unwrap().len(), 1);
    let complex = |v: &Value| {
        v["spectrum"]["eigenvalues"].as_array().unwrap().iter().find(|e| e["im"].as_f64().unwrap() > 1e-9).unwrap().clone()
    };
    let angle = |v: &Value| complex(v)["angle"].as_f64().unwrap().abs();
    let mag = |v: &Value| complex(v)["magnitude"].as_f64().unwrap();
    assert!((angle(&va) - 0.175).abs() < 1e-9 && (mag(&va) - 0.99).abs() < 1e-9);
    assert!((angle(&vb) - 0.35).abs() < 1e-9 && (mag(&vb) - 0.495).abs() < 1e-9);

    // replaying a history in a fresh session lands on the same operator
    let (c, _) = open(&app).await;
    for e in &edits_a {
        call(&app, "POST", &format!("/sessions/{c}/manipulate"), Some(e.clone())).await;
    }
    let (_, _, vc) = call(&app, "GET", &format!("/sessions/{c}"), None).await;
    assert_eq!(vc["history_hash"], va["history_hash"]);
    assert_eq!(vc["spectrum"], va["spectrum"]);
    assert_ne!(va["spectrum"], initial["spectrum"]);
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

#[test]
fn replay_is_bit_exact() {
    use kidd::analysis::{Edit, Manipulation};
    use kidd::service::{replay, Session, SessionEdit};
    let base = Arc::new(rotation_model());
    let edits = vec![
        SessionEdit::Manipulate(Manipulation { pair: 0, radius: Some(Edit::Set(1.01)), angle: Some(Edit::Shift(0.2)) }),
        SessionEdit::Reduce { k: 3 },
        SessionEdit::Manipulate(Manipulation { pair: 1, radius: Some(Edit::Scale(0.5)), angle: None }),
    ];
    let mut s = Session::new("x".into(), "rot".into(), base.clone(), None);
    for e in &edits {
        s.push(e.clone()).unwrap();
    }
    assert_eq!(replay(&base.k, &edits).unwrap(), s.k);
}

#[tokio::test]
async fn datasets_docs_and_cors() {
    let f = fixture();
    let app = app(&f.cfg);
    let (st, _, v) = call(&app, "GET", "/datasets/circular/sample?index=3", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["poses"].as_array().unwrap().len(), 20);
    assert_eq!(v["visible"].as_array().unwrap().len(), 20);
    assert_eq!(v["split"], "test");
    assert_eq!(call(&app, "GET", "/datasets/circular/sample?index=5", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/datasets/collision/sample?index=0", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/datasets/spiral/sample?index=0", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/datasets/circular/sample", None).await.0, StatusCode::BAD_REQUEST);

    let (st, _, doc) = call(&app, "GET", "/openapi.json", None).await;
    assert_eq!(st, StatusCode::OK);
    assert!(doc["paths"]["/sessions/{id}/manipulate"].is_object());
    let (_, _, models) = call(&app, "GET", "/models", None).await;
    assert_eq!(models, json!(["broken", "rot"]));

    let req = Request::builder()
        .method("OPTIONS")
        .uri("/sessions")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}

#[tokio::test]
async fn snapshots_survive_a_restart() {
    let f = fixture();
    let snaps = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { snapshot_dir: Some(snaps.path().to_path_buf()), ..f.cfg.clone() };
    let first = app(&cfg);
    let (id, _) = open(&first).await;
    call(&first, "POST", &format!("/sessions/{id}/manipulate"), Some(json!({"pair": 0, "theta": 0.5}))).await;
    let (_, _, v1) = call(&first, "GET", &format!("/sessions/{id}"), None).await;

    let state = AppState::new(cfg.clone());
    assert_eq!(state.session_count(), 1);
    let second = router(state);
    let (st, _, v2) = call(&second, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v1, v2);
    assert!(Path::new(&snaps.path().join(format!("{id}.json"))).is_file());
}
