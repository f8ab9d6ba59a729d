use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use futures::StreamExt;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use hsi_core::cvae::{Model, ModelConfig};
use hsi_core::geometry::{icosphere, BodyMesh};
use hsi_core::interaction::default_class_names;
use hsi_core::pipeline::{body_hierarchy, humanoid, place_body, scene_sdf, PlacementReport, PreparedScene};
use hsi_core::synthgen::{generate_body, SceneBuilder};
use hsi_service::{router, wire, AppState, Catalog};

fn tiny_model(seed: u64) -> Model {
    let config = ModelConfig {
        latent_dim: 4,
        conv_width: 4,
        fc_width: 8,
        decoder_convs: 1,
        ..Default::default()
    };
    Model::new(config, body_hierarchy(), default_class_names(), seed).unwrap()
}

/// Decoder pinned to "no contact, void everywhere".
fn void_model() -> Model {
    let mut m = tiny_model(1);
    m.zero_params("dec.out");
    let names = m.param_names();
    let b = names.iter().position(|n| n == "dec.out.b").unwrap();
    m.params[b].data[0] = -20.0;
    m.params[b].data[1] = 20.0;
    m
}

fn catalog(model: Model) -> Catalog {
    let mut b = SceneBuilder::new();
    b.add_box(0, [-2.0, -2.0, -0.2], [2.0, 2.0, 0.0]);
    b.add_box(2, [0.5, 0.5, 0.0], [1.0, 1.0, 0.45]);
    let scene = b.build();
    let sdf = scene_sdf(&scene, 48).unwrap();
    let stand = generate_body(humanoid(), "stand", None).unwrap();
    let ball = BodyMesh::from_mesh(icosphere(2, 0.3));
    Catalog::from_parts(model, vec![("room".into(), scene, sdf)], vec![("stand".into(), stand), ("ball".into(), ball)]).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn wait_for(app: &Router, job: u64, done: impl Fn(&Value) -> bool) -> Value {
    let start = Instant::now();
    loop {
        let (s, v) = call_json(app, "GET", &format!("/api/job/{job}"), None).await;
        assert_eq!(s, StatusCode::OK);
        if done(&v) {
            return v;
        }
        assert!(start.elapsed() < Duration::from_secs(300), "job {job} stuck: {v}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

fn finished(v: &Value) -> bool {
    matches!(v["state"].as_str(), Some("done" | "failed" | "cancelled"))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn lists_and_mesh_wire_format() {
    let app = router(AppState::new(catalog(tiny_model(0))));
    let (s, scenes) = call_json(&app, "GET", "/api/scenes", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(scenes[0]["id"], "room");
    let (s, bytes) = call(&app, "GET", "/api/scene/room/mesh", None).await;
    assert_eq!(s, StatusCode::OK);
    let (mesh, labels) = wire::decode_mesh(&bytes).unwrap();
    assert_eq!(mesh.vertex_count(), 16);
    assert_eq!(mesh.faces.len(), 24);
    assert_eq!(labels.iter().filter(|&&l| l == 2).count(), 8);
    assert_eq!(&bytes[0..4], &16u32.to_le_bytes());
    assert_eq!(bytes.len(), 8 + 16 * 12 + 24 * 12 + 16 * 2);
    let (s, _) = call(&app, "GET", "/api/scene/nope/mesh", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (_, bodies) = call_json(&app, "GET", "/api/bodies", None).await;
    let ids: Vec<&str> = bodies.as_array().unwrap().iter().map(|b| b["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["ball", "stand"]);
    assert_eq!(bodies[1]["compatible"], true);
    assert_eq!(bodies[0]["compatible"], false);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sample_and_request_errors() {
    let app = router(AppState::new(catalog(tiny_model(0))));
    let (s, maps) = call_json(&app, "POST", "/api/sample", Some(json!({"body_id": "stand", "n": 3, "seed": 4}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(maps.as_array().unwrap().len(), 3);
    assert_eq!(maps[2]["id"], 2);
    assert_eq!(maps[0]["contact"].as_array().unwrap().len(), 2562);
    let (s, _) = call(&app, "POST", "/api/sample", Some(json!({"body_id": "ball", "n": 1}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, "POST", "/api/sample", Some(json!({"body_id": "ghost", "n": 1}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/api/sample", Some(json!({"body": "stand"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let place = |extra: Value| {
        let mut v = json!({"body_id": "stand", "scene_id": "room", "fmap_id": 0});
        v.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
        v
    };
    let (s, _) = call(&app, "POST", "/api/place", Some(place(json!({"fmap_id": 99})))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/api/place", Some(place(json!({"scene_id": "attic"})))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let bad_init = json!({"init": {"translation": [0, 0, 0], "yaw": 0, "pose_delta": [[0, 0, 0]]}});
    let (s, _) = call(&app, "POST", "/api/place", Some(place(bad_init))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", "/api/place", Some(place(json!({"init": {"translation": [0, 0], "yaw": 0}})))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "GET", "/api/job/77", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/api/job/77/cancel", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn optimal_init_is_returned_unchanged() {
    let app = router(AppState::new(catalog(void_model())));
    call_json(&app, "POST", "/api/sample", Some(json!({"body_id": "stand", "n": 1}))).await;
    let init = json!({"translation": [-1.0, -1.0, 0.8], "yaw": 0.4});
    let (s, created) = call_json(
        &app,
        "POST",
        "/api/place",
        Some(json!({"body_id": "stand", "scene_id": "room", "fmap_id": 0, "init": init, "mode": "fixed_pose"})),
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let v = wait_for(&app, created["job"].as_u64().unwrap(), finished).await;
    assert_eq!(v["state"], "done");
    let report: PlacementReport = serde_json::from_value(v["result"].clone()).unwrap();
    assert!(report.energies.total.abs() < 1e-12);
    for (a, b) in report.transform.translation.iter().zip([-1.0, -1.0, 0.8]) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!((report.transform.yaw - 0.4).abs() < 1e-6);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn job_result_matches_direct_placement() {
    let cat = catalog(tiny_model(3));
    let mut settings = cat.settings.clone();
    settings.n_samples = 1;
    settings.n_seeds = 6;
    settings.options.iterations = 15;
    let body = cat.bodies["stand"].clone();
    let model = cat.model.clone();
    let scene = cat.scenes["room"].scene.clone();
    let sdf = cat.scenes["room"].sdf.clone();
    let app = router(AppState::new(cat));
    call_json(&app, "POST", "/api/sample", Some(json!({"body_id": "stand", "n": 2, "seed": 7}))).await;
    let (_, created) = call_json(
        &app,
        "POST",
        "/api/place",
        Some(json!({"body_id": "stand", "scene_id": "room", "fmap_id": 0, "n_seeds": 6, "iterations": 15})),
    )
    .await;
    let v = wait_for(&app, created["job"].as_u64().unwrap(), finished).await;
    assert_eq!(v["state"], "done", "{v}");
    let via_service: PlacementReport = serde_json::from_value(v["result"].clone()).unwrap();
    let prepared = PreparedScene::new(scene, sdf).unwrap();
    let direct = tokio::task::spawn_blocking(move || place_body(&model, &body, &prepared, &settings, 7).unwrap())
        .await
        .unwrap();
    assert_eq!(via_service.to_json(), direct.to_json());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn websocket_streams_monotone_progress() {
    let state = AppState::new(catalog(tiny_model(5)));
    let app = router(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    let (mut socket, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/api/ws")).await.unwrap();
    call_json(&app, "POST", "/api/sample", Some(json!({"body_id": "stand", "n": 1, "seed": 1}))).await;
    let (_, created) = call_json(
        &app,
        "POST",
        "/api/place",
        Some(json!({"body_id": "stand", "scene_id": "room", "fmap_id": 0, "n_seeds": 4, "iterations": 25})),
    )
    .await;
    let job = created["job"].as_u64().unwrap();
    let mut steps = Vec::new();
    let mut energies = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(300);
    while Instant::now() < deadline {
        let msg = tokio::time::timeout(Duration::from_secs(120), socket.next()).await.unwrap().unwrap().unwrap();
        let Ok(text) = msg.into_text() else { continue };
        let ev: Value = serde_json::from_str(&text).unwrap();
        if ev["job"] != job {
            continue;
        }
        match ev["type"].as_str().unwrap() {
            "progress" => {
                steps.push(ev["step"].as_u64().unwrap());
                energies.push(ev["total_energy"].as_f64().unwrap());
            }
            "state" if ev["state"] == "done" => break,
            "state" => assert_ne!(ev["state"], "failed"),
            other => panic!("unexpected event {other}"),
        }
    }
    assert!(!steps.is_empty());
    assert!(steps.iter().enumerate().all(|(i, &s)| s == i as u64));
    assert!(energies.windows(2).all(|w| w[1] <= w[0]));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cancel_keeps_best_so_far_and_queue_is_fifo() {
    let mut cat = catalog(tiny_model(6));
    cat.settings.options.iterations = 1_000_000;
    cat.settings.options.patience = 1_000_000;
    let app = router(AppState::new(cat));
    call_json(&app, "POST", "/api/sample", Some(json!({"body_id": "stand", "n": 1}))).await;
    let req = json!({"body_id": "stand", "scene_id": "room", "fmap_id": 0, "n_seeds": 2});
    let (_, a) = call_json(&app, "POST", "/api/place", Some(req.clone())).await;
    let (_, b) = call_json(&app, "POST", "/api/place", Some(req)).await;
    let (a, b) = (a["job"].as_u64().unwrap(), b["job"].as_u64().unwrap());
    assert!(b > a);
    wait_for(&app, a, |v| v["state"] == "running" && v["step"].as_u64().unwrap() >= 3).await;
    let (_, vb) = call_json(&app, "GET", &format!("/api/job/{b}"), None).await;
    assert_eq!(vb["state"], "queued");
    let (s, vb) = call_json(&app, "POST", &format!("/api/job/{b}/cancel"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(vb["state"], "cancelled");
    call(&app, "POST", &format!("/api/job/{a}/cancel"), None).await;
    let va = wait_for(&app, a, finished).await;
    assert_eq!(va["state"], "cancelled");
    let report: PlacementReport = serde_json::from_value(va["result"].clone()).unwrap();
    assert!(report.iterations >= 3);
    assert!(report.transform.is_finite() && report.energies.total.is_finite());
    let vb = wait_for(&app, b, finished).await;
    assert_eq!(vb["state"], "cancelled");
    assert!(vb.get("result").is_none());
}
