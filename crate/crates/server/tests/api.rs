use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use c3det_core::dataset::{load_image, read_meta, Split};
use c3det_core::synthgen::{generate, GenConfig, SplitCounts};
use c3det_core::UserInput;
use c3det_model::checkpoint::CheckpointInfo;
use c3det_model::params::ParamStore;
use c3det_model::{Checkpoint, Detector, ModelConfig};
use c3det_server::store::SessionFiles;
use c3det_server::{router, AppState, ServerConfig, QUEUE_DEPTH};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

struct Fixture {
    _dir: TempDir,
    data: PathBuf,
    sessions: PathBuf,
    checkpoint: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tinyset");
    let cfg = GenConfig {
        canvas: [64, 64],
        objects_per_image: [2, 5],
        object_size: [6, 12],
        splits: SplitCounts { train: 2, val: 1, test: 2 },
        seed: 5,
        ..GenConfig::default()
    };
    generate(&cfg, &data).unwrap();
    let meta = read_meta(&data).unwrap();
    let model = ModelConfig::desk();
    let params = ParamStore::<f32>::init(&model, meta.classes.len(), 3);
    let checkpoint = dir.path().join("model.json");
    Checkpoint::new(&model, &meta.classes, &params, CheckpointInfo::default()).save(&checkpoint).unwrap();
    let sessions = dir.path().join("sessions");
    Fixture {
        _dir: dir,
        data,
        sessions,
        checkpoint,
    }
}

fn config(f: &Fixture, with_model: bool) -> ServerConfig {
    ServerConfig {
        data: f.data.clone(),
        checkpoint: with_model.then(|| f.checkpoint.clone()),
        sessions_dir: f.sessions.clone(),
        port: 0,
    }
}

fn app(f: &Fixture, with_model: bool) -> (Arc<AppState>, Router) {
    let state = Arc::new(AppState::new(config(f, with_model)).unwrap());
    let r = router(state.clone());
    (state, r)
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&v).unwrap()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn send_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = send(app, method, uri, body).await;
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn new_session(app: &Router) -> String {
    let (status, v) = send_json(app, "POST", "/api/v1/sessions", Some(json!({"dataset": "default", "mode": "assisted"}))).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

fn offline_detections(f: &Fixture, image_id: &str, inputs: &[UserInput]) -> Value {
    let meta = read_meta(&f.data).unwrap();
    let image = load_image(&f.data, Split::Test, image_id, &meta).unwrap();
    let det = Detector::load(&f.checkpoint, Some(&meta.classes)).unwrap();
    serde_json::to_value(det.infer(&image, inputs).unwrap()).unwrap()
}

#[tokio::test]
async fn session_creation_persists_record_and_empty_log() {
    let f = fixture();
    let (_, app) = app(&f, false);
    let a = new_session(&app).await;
    let (status, v) = send_json(&app, "POST", "/api/v1/sessions", Some(json!({"dataset": "tinyset", "mode": "manual"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    let b = v["session_id"].as_str().unwrap().to_string();
    assert_ne!(a, b);

    let files = SessionFiles::new(f.sessions.join(&a));
    assert_eq!(std::fs::read(files.events()).unwrap(), Vec::<u8>::new());
    let record = files.load_record().unwrap();
    assert_eq!(record.session_id, a);
    assert_eq!(record.dataset, "tinyset");

    let (status, v) = send_json(&app, "GET", &format!("/api/v1/sessions/{b}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["mode"], "manual");
}

#[tokio::test]
async fn unknown_dataset_or_mode_is_rejected() {
    let f = fixture();
    let (_, app) = app(&f, false);
    let (status, v) = send_json(&app, "POST", "/api/v1/sessions", Some(json!({"dataset": "coco", "mode": "manual"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("coco"));
    let (status, _) = send_json(&app, "POST", "/api/v1/sessions", Some(json!({"dataset": "default", "mode": "auto"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = send(&app, "GET", "/api/v1/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn inference_matches_offline_model_and_is_pure() {
    let f = fixture();
    let (state, app) = app(&f, true);
    let clicks = vec![UserInput { x: 20.0, y: 30.0, class_id: 3 }];
    for inputs in [vec![], clicks] {
        let body = json!({"image_id": "test_00001", "user_inputs": inputs});
        let (status, first) = send_json(&app, "POST", "/api/v1/infer", Some(body.clone())).await;
        assert_eq!(status, StatusCode::OK, "{first}");
        assert_eq!(first["detections"], offline_detections(&f, "test_00001", &inputs));
        assert_eq!(first["model_version"], state.worker.as_ref().unwrap().version.as_str());
        assert!(first["latency_ms"].as_f64().unwrap() < 2000.0);
        let (_, second) = send_json(&app, "POST", "/api/v1/infer", Some(body)).await;
        assert_eq!(first["detections"], second["detections"]);
    }
}

#[tokio::test]
async fn inference_errors() {
    let f = fixture();
    let (_, app) = app(&f, true);
    let (status, v) = send_json(
        &app,
        "POST",
        "/api/v1/infer",
        Some(json!({"image_id": "test_00000", "user_inputs": [{"x": 3.0, "y": 3.0, "class_id": 99}]})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("99"));
    let (status, _) = send_json(
        &app,
        "POST",
        "/api/v1/infer",
        Some(json!({"image_id": "test_00000", "user_inputs": [{"x": 300.0, "y": 3.0, "class_id": 0}]})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send_json(&app, "POST", "/api/v1/infer", Some(json!({"image_id": "test_09999"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, no_model) = self::app(&f, false);
    let (status, _) = send_json(&no_model, "POST", "/api/v1/infer", Some(json!({"image_id": "test_00000"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn queue_rejects_beyond_depth() {
    let f = fixture();
    let (state, app) = app(&f, true);
    let busy = state.worker.as_ref().unwrap().occupy().await;
    let mut waiting = Vec::new();
    for _ in 0..QUEUE_DEPTH {
        let app = app.clone();
        waiting.push(tokio::spawn(async move {
            send(&app, "POST", "/api/v1/infer", Some(json!({"image_id": "test_00000"}))).await.0
        }));
    }
    let deadline = std::time::Instant::now() + Duration::from_secs(30);
    while state.worker.as_ref().unwrap().pending() < QUEUE_DEPTH {
        assert!(std::time::Instant::now() < deadline, "requests never reached the queue");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let (status, v) = send_json(&app, "POST", "/api/v1/infer", Some(json!({"image_id": "test_00000"}))).await;
    assert_eq!(status, StatusCode::TOO_MANY_REQUESTS, "{v}");
    drop(busy);
    for w in waiting {
        assert_eq!(w.await.unwrap(), StatusCode::OK);
    }
    assert_eq!(state.worker.as_ref().unwrap().pending(), 0);
}

#[tokio::test]
async fn annotations_round_trip_with_backup_generation() {
    let f = fixture();
    let (_, app) = app(&f, false);
    let id = new_session(&app).await;
    let uri = format!("/api/v1/sessions/{id}/annotations/train_00000");

    let (status, v) = send_json(&app, "GET", &uri, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({"boxes": []}));

    let first = json!({"boxes": [{"bbox": [1.0, 2.0, 10.0, 12.0], "class_id": 2}]});
    let second = json!({"boxes": [{"bbox": [5.0, 5.0, 20.0, 20.0], "class_id": 0}, {"bbox": [30.0, 30.0, 40.0, 44.5], "class_id": 7}]});
    let (status, _) = send(&app, "PUT", &uri, Some(first.clone())).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (_, v) = send_json(&app, "GET", &uri, None).await;
    assert_eq!(v, first);

    send(&app, "PUT", &uri, Some(second.clone())).await;
    let (_, v) = send_json(&app, "GET", &uri, None).await;
    assert_eq!(v, second);
    let files = SessionFiles::new(f.sessions.join(&id));
    let backup: Value = serde_json::from_slice(&std::fs::read(files.backup("train_00000")).unwrap()).unwrap();
    assert_eq!(backup, first["boxes"]);
}

#[tokio::test]
async fn invalid_annotations_are_rejected() {
    let f = fixture();
    let (_, app) = app(&f, false);
    let id = new_session(&app).await;
    let uri = format!("/api/v1/sessions/{id}/annotations/train_00000");
    for (body, expected) in [
        (json!({"boxes": [{"bbox": [10.0, 2.0, 10.0, 12.0], "class_id": 0}]}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"boxes": [{"bbox": [12.0, 2.0, 10.0, 12.0], "class_id": 0}]}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"boxes": [{"bbox": [1.0, 2.0, 10.0, 12.0], "class_id": 8}]}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"boxes": [{"bbox": [1.0, 2.0, 70.0, 12.0], "class_id": 0}]}), StatusCode::UNPROCESSABLE_ENTITY),
    ] {
        let (status, v) = send_json(&app, "PUT", &uri, Some(body.clone())).await;
        assert_eq!(status, expected, "{body} -> {v}");
        assert!(v["error"].is_string());
    }
    let (_, v) = send_json(&app, "GET", &uri, None).await;
    assert_eq!(v, json!({"boxes": []}), "rejected writes must not persist");

    let ok = json!({"boxes": []});
    let (status, _) = send(&app, "PUT", "/api/v1/sessions/nope/annotations/train_00000", Some(ok.clone())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, "PUT", &format!("/api/v1/sessions/{id}/annotations/zzz"), Some(ok)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_puts_leave_one_complete_snapshot() {
    let f = fixture();
    let (_, app) = app(&f, false);
    let id = new_session(&app).await;
    let uri = format!("/api/v1/sessions/{id}/annotations/test_00000");
    let bodies: Vec<Value> = (0..16)
        .map(|i| json!({"boxes": (0..=i).map(|j| json!({"bbox": [j as f64, 0.0, j as f64 + 5.0, 5.0], "class_id": j % 8})).collect::<Vec<_>>()}))
        .collect();
    let tasks: Vec<_> = bodies
        .iter()
        .cloned()
        .map(|b| {
            let app = app.clone();
            let uri = uri.clone();
            tokio::spawn(async move { send(&app, "PUT", &uri, Some(b)).await.0 })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::NO_CONTENT);
    }
    let (_, v) = send_json(&app, "GET", &uri, None).await;
    assert!(bodies.contains(&v), "snapshot is one of the written bodies");
}

#[tokio::test]
async fn export_counts_events_and_fixes_scores() {
    let f = fixture();
    let (_, app) = app(&f, false);
    let id = new_session(&app).await;
    let (status, v) = send_json(&app, "GET", &format!("/api/v1/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["annotations"], json!({}));
    assert_eq!(
        v["stats"]["counts"],
        json!({"click_hint": 0, "draw_box": 0, "delete_box": 0, "class_change": 0, "submit": 0})
    );
    assert_eq!(v["stats"]["elapsed_ms"], 0);

    let events = format!("/api/v1/sessions/{id}/events");
    for (kind, t) in [("draw_box", 100), ("draw_box", 250), ("draw_box", 250), ("submit", 900)] {
        let (status, _) = send(&app, "POST", &events, Some(json!({"type": kind, "t_ms": t, "payload": {"n": t}}))).await;
        assert_eq!(status, StatusCode::ACCEPTED);
    }
    send(
        &app,
        "PUT",
        &format!("/api/v1/sessions/{id}/annotations/test_00001"),
        Some(json!({"boxes": [{"bbox": [1.0, 1.0, 9.0, 9.0], "class_id": 4}]})),
    )
    .await;
    let (_, v) = send_json(&app, "GET", &format!("/api/v1/sessions/{id}/export"), None).await;
    assert_eq!(v["stats"]["counts"]["draw_box"], 3);
    assert_eq!(v["stats"]["counts"]["submit"], 1);
    assert_eq!(v["stats"]["counts"]["click_hint"], 0);
    assert_eq!(v["stats"]["total_events"], 4);
    assert_eq!(v["stats"]["elapsed_ms"], 900);
    let boxes = v["annotations"]["test_00001"].as_array().unwrap();
    assert_eq!(boxes.len(), 1);
    assert!(boxes.iter().all(|b| b["score"] == 1.0));
    assert_eq!(boxes[0]["bbox"], json!([1.0, 1.0, 9.0, 9.0]));
}

#[tokio::test]
async fn event_log_rejects_regressions_and_unknown_types() {
    let f = fixture();
    let (_, app) = app(&f, false);
    let id = new_session(&app).await;
    let events = format!("/api/v1/sessions/{id}/events");
    assert_eq!(send(&app, "POST", &events, Some(json!({"type": "click_hint", "t_ms": 50}))).await.0, StatusCode::ACCEPTED);
    let (status, v) = send_json(&app, "POST", &events, Some(json!({"type": "submit", "t_ms": 49}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("49"));
    let (status, _) = send_json(&app, "POST", &events, Some(json!({"type": "zoom", "t_ms": 60}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = send(&app, "POST", "/api/v1/sessions/nope/events", Some(json!({"type": "submit", "t_ms": 1}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let lines = std::fs::read_to_string(SessionFiles::new(f.sessions.join(&id)).events()).unwrap();
    assert_eq!(lines.lines().count(), 1, "rejected events are not logged");
}

#[tokio::test]
async fn export_is_prefix_extension_of_earlier_export() {
    let f = fixture();
    let (_, app) = app(&f, false);
    let id = new_session(&app).await;
    let events = format!("/api/v1/sessions/{id}/events");
    let kinds = ["click_hint", "draw_box", "delete_box", "class_change", "submit"];
    let log = SessionFiles::new(f.sessions.join(&id)).events();
    let mut previous = String::new();
    let mut previous_counts: Option<Value> = None;
    for i in 0..20u64 {
        send(&app, "POST", &events, Some(json!({"type": kinds[(i * 7 % 5) as usize], "t_ms": i * 10}))).await;
        let now = std::fs::read_to_string(&log).unwrap();
        assert!(now.starts_with(&previous), "log is append-only");
        previous = now;
        let (_, v) = send_json(&app, "GET", &format!("/api/v1/sessions/{id}/export"), None).await;
        if let Some(p) = &previous_counts {
            for k in kinds {
                assert!(v["stats"]["counts"][k].as_u64() >= p[k].as_u64());
            }
        }
        previous_counts = Some(v["stats"]["counts"].clone());
    }
}

#[tokio::test]
async fn sessions_survive_restart_and_torn_lines() {
    let f = fixture();
    let id = {
        let (_, app) = app(&f, false);
        let id = new_session(&app).await;
        send(&app, "POST", &format!("/api/v1/sessions/{id}/events"), Some(json!({"type": "draw_box", "t_ms": 500}))).await;
        id
    };
    // A crash in the middle of an append leaves a partial final line.
    let log = SessionFiles::new(f.sessions.join(&id)).events();
    let mut bytes = std::fs::read(&log).unwrap();
    bytes.extend_from_slice(br#"{"type":"sub"#);
    std::fs::write(&log, bytes).unwrap();

    let (_, app) = app(&f, false);
    let (status, v) = send_json(&app, "GET", &format!("/api/v1/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["stats"]["counts"]["draw_box"], 1);
    assert_eq!(v["stats"]["total_events"], 1);
    let (status, _) = send(&app, "POST", &format!("/api/v1/sessions/{id}/events"), Some(json!({"type": "submit", "t_ms": 400}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "ordering survives the restart");
}

#[tokio::test]
async fn dataset_image_and_description_endpoints() {
    let f = fixture();
    let (_, app) = app(&f, true);
    let (status, v) = send_json(&app, "GET", "/api/v1/dataset", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["name"], "tinyset");
    assert_eq!(v["classes"].as_array().unwrap().len(), 8);
    assert_eq!(v["image_size"], json!([64, 64]));
    assert_eq!(v["images"]["test"], json!(["test_00000", "test_00001"]));

    let (status, png) = send(&app, "GET", "/api/v1/images/val_00000", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    assert_eq!(send(&app, "GET", "/api/v1/images/nope", None).await.0, StatusCode::NOT_FOUND);

    let (status, doc) = send_json(&app, "GET", "/api/v1/openapi", None).await;
    assert_eq!(status, StatusCode::OK);
    for path in ["/api/v1/sessions", "/api/v1/infer", "/api/v1/sessions/{id}/export", "/api/v1/sessions/{id}/events"] {
        assert!(doc["paths"].get(path).is_some(), "{path} documented");
    }
    assert!(doc["info"]["description"].as_str().unwrap().contains("score is always 1"));

    let (_, health) = send_json(&app, "GET", "/api/v1/health", None).await;
    assert_eq!(health["model_loaded"], true);
}

#[test]
fn missing_dataset_fails_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    let err = AppState::new(ServerConfig {
        data: dir.path().join("absent"),
        checkpoint: None,
        sessions_dir: dir.path().join("s"),
        port: 0,
    })
    .err()
    .expect("startup must fail");
    assert!(err.to_string().contains("meta.json"), "{err}");
}
