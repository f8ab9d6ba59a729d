//! Local HTTP and WebSocket service over the placement engine: browse
//! scenes and bodies, sample feature maps, and run placement jobs from a
//! rough user-supplied start or from a full seed search.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc};

use hsi_core::cvae::Model;
use hsi_core::geometry::{BodyMesh, SceneMesh, UpAxis};
use hsi_core::interaction::FeatureMap;
use hsi_core::pipeline::{
    load_body, load_model, load_scene, place_with_map, sample_maps, scene_sdf, PipelineError, PlacementReport,
    PreparedScene, BODY_DIR, DEFAULT_SDF_RESOLUTION, SCENE_DIR,
};
use hsi_core::placement::{upsample_feature_map, PlaceSettings, PlacementTransform, RefineMode};
use hsi_core::sdf::SdfGrid;

pub mod wire;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Pipeline(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

/// Scenes, bodies and the model, loaded once.
pub struct Catalog {
    pub model: Model,
    pub scenes: BTreeMap<String, PreparedScene>,
    pub bodies: BTreeMap<String, BodyMesh>,
    /// Settings used for every job unless a request overrides them.
    pub settings: PlaceSettings,
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn files_with(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

impl Catalog {
    /// Reads `data/scenes/*.ply` (with `*.sdf` next to them when present)
    /// and `data/bodies/*.obj`. Bodies that fail to load are skipped.
    pub fn load(data: &Path, model: &Path, up: UpAxis) -> Result<Self, PipelineError> {
        let model = load_model(model)?;
        let mut scenes = BTreeMap::new();
        for p in files_with(&data.join(SCENE_DIR), "ply") {
            let scene = load_scene(&p, up)?;
            let sdf_path = p.with_extension("sdf");
            let sdf = if sdf_path.exists() {
                SdfGrid::load(&sdf_path)?
            } else {
                scene_sdf(&scene, DEFAULT_SDF_RESOLUTION)?
            };
            scenes.insert(stem(&p), PreparedScene::new(scene, sdf)?);
        }
        let mut bodies = BTreeMap::new();
        for p in files_with(&data.join(BODY_DIR), "obj") {
            match load_body(&p, up) {
                Ok(b) => {
                    bodies.insert(stem(&p), b);
                }
                Err(e) => log::warn!("skipping body {}: {e}", p.display()),
            }
        }
        Ok(Self {
            model,
            scenes,
            bodies,
            settings: PlaceSettings::default(),
        })
    }

    pub fn from_parts(model: Model, scenes: Vec<(String, SceneMesh, SdfGrid)>, bodies: Vec<(String, BodyMesh)>) -> Result<Self, PipelineError> {
        let mut s = BTreeMap::new();
        for (id, scene, sdf) in scenes {
            s.insert(id, PreparedScene::new(scene, sdf)?);
        }
        Ok(Self {
            model,
            scenes: s,
            bodies: bodies.into_iter().collect(),
            settings: PlaceSettings::default(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobView {
    pub id: u64,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<PlacementReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub step: usize,
    pub best_energy: Option<f64>,
}

struct Job {
    view: JobView,
    cancel: Arc<AtomicBool>,
}

struct StoredMap {
    body_id: String,
    sample: usize,
    seed: u64,
    map: FeatureMap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Progress { job: u64, step: usize, total_energy: f64 },
    State { job: u64, state: JobState },
}

struct PlaceJob {
    id: u64,
    body_id: String,
    scene_id: String,
    fmap: usize,
    init: Option<PlacementTransform>,
    settings: PlaceSettings,
    seed: u64,
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState {
    catalog: Arc<Catalog>,
    maps: Arc<Mutex<Vec<StoredMap>>>,
    jobs: Arc<Mutex<BTreeMap<u64, Job>>>,
    next_job: Arc<Mutex<u64>>,
    queue: mpsc::UnboundedSender<PlaceJob>,
    events: broadcast::Sender<Event>,
}

impl AppState {
    /// Starts the FIFO worker; needs a running Tokio runtime.
    pub fn new(catalog: Catalog) -> Self {
        let (queue, rx) = mpsc::unbounded_channel();
        let (events, _) = broadcast::channel(4096);
        let state = Self {
            catalog: Arc::new(catalog),
            maps: Arc::default(),
            jobs: Arc::default(),
            next_job: Arc::new(Mutex::new(1)),
            queue,
            events,
        };
        tokio::spawn(worker(state.clone(), rx));
        state
    }

    fn set_state(&self, id: u64, state: JobState) {
        if let Some(j) = self.jobs.lock().unwrap().get_mut(&id) {
            j.view.state = state;
        }
        let _ = self.events.send(Event::State { job: id, state });
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Event> {
        self.events.subscribe()
    }
}

async fn worker(state: AppState, mut rx: mpsc::UnboundedReceiver<PlaceJob>) {
    while let Some(job) = rx.recv().await {
        let id = job.id;
        let cancel = match state.jobs.lock().unwrap().get(&id) {
            Some(j) if j.view.state == JobState::Queued => j.cancel.clone(),
            _ => continue,
        };
        state.set_state(id, JobState::Running);
        let st = state.clone();
        let flag = cancel.clone();
        let outcome = tokio::task::spawn_blocking(move || run_job(&st, &job, &flag)).await;
        let mut jobs = state.jobs.lock().unwrap();
        let Some(entry) = jobs.get_mut(&id) else { continue };
        let final_state = match outcome {
            Ok(Ok(report)) => {
                entry.view.best_energy = Some(report.energies.total);
                entry.view.result = Some(report);
                if cancel.load(Ordering::SeqCst) {
                    JobState::Cancelled
                } else {
                    JobState::Done
                }
            }
            Ok(Err(e)) => {
                entry.view.error = Some(e.to_string());
                JobState::Failed
            }
            Err(e) => {
                entry.view.error = Some(format!("job panicked: {e}"));
                JobState::Failed
            }
        };
        entry.view.state = final_state;
        drop(jobs);
        let _ = state.events.send(Event::State { job: id, state: final_state });
    }
}

fn run_job(state: &AppState, job: &PlaceJob, cancel: &AtomicBool) -> Result<PlacementReport, ServiceError> {
    let cat = &state.catalog;
    let body = &cat.bodies[&job.body_id];
    let prepared = &cat.scenes[&job.scene_id];
    let (map, sample) = {
        let maps = state.maps.lock().unwrap();
        let m = &maps[job.fmap];
        (m.map.clone(), m.sample)
    };
    let mut step = 0usize;
    let candidates = place_with_map(
        &cat.model,
        body,
        &map,
        sample,
        prepared,
        &job.settings,
        job.seed,
        job.init.as_ref(),
        |_, entry| {
            let _ = state.events.send(Event::Progress {
                job: job.id,
                step,
                total_energy: entry.best,
            });
            if let Some(j) = state.jobs.lock().unwrap().get_mut(&job.id) {
                j.view.step = step;
                j.view.best_energy = Some(entry.best);
            }
            step += 1;
            if cancel.load(Ordering::SeqCst) {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        },
    )?;
    Ok(PlacementReport::from_candidates(candidates, job.seed, &job.settings)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SceneInfo {
    pub id: String,
    pub vertices: usize,
    pub faces: usize,
    pub class_names: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BodyInfo {
    pub id: String,
    pub vertices: usize,
    pub rigged: bool,
    pub compatible: bool,
}

async fn list_scenes(State(s): State<AppState>) -> Json<Vec<SceneInfo>> {
    Json(
        s.catalog
            .scenes
            .iter()
            .map(|(id, p)| SceneInfo {
                id: id.clone(),
                vertices: p.scene.mesh.vertex_count(),
                faces: p.scene.mesh.faces.len(),
                class_names: p.scene.class_names.clone(),
            })
            .collect(),
    )
}

async fn scene_mesh(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let p = s
        .catalog
        .scenes
        .get(&id)
        .ok_or_else(|| ServiceError::NotFound(format!("unknown scene `{id}`")))?;
    let bytes = wire::encode_mesh(&p.scene.mesh, &p.scene.labels);
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

async fn list_bodies(State(s): State<AppState>) -> Json<Vec<BodyInfo>> {
    let expected = s.catalog.model.body_resolution();
    Json(
        s.catalog
            .bodies
            .iter()
            .map(|(id, b)| BodyInfo {
                id: id.clone(),
                vertices: b.vertex_count(),
                rigged: b.skeleton.is_some(),
                compatible: b.vertex_count() == expected,
            })
            .collect(),
    )
}

fn body_for<'a>(s: &'a AppState, id: &str) -> ApiResult<&'a BodyMesh> {
    let b = s
        .catalog
        .bodies
        .get(id)
        .ok_or_else(|| ServiceError::NotFound(format!("unknown body `{id}`")))?;
    let expected = s.catalog.model.body_resolution();
    if b.vertex_count() != expected {
        return Err(ServiceError::Conflict(format!(
            "body `{id}` has {} vertices, the model expects {expected}",
            b.vertex_count()
        )));
    }
    Ok(b)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleRequest {
    pub body_id: String,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MapSummary {
    pub id: usize,
    pub body_id: String,
    pub sample: usize,
    /// Contact probability per body vertex.
    pub contact: Vec<f32>,
    /// Most likely feature class per body vertex (0 is void).
    pub classes: Vec<u16>,
    pub contact_vertices: usize,
}

async fn sample(State(s): State<AppState>, Json(req): Json<SampleRequest>) -> ApiResult<Json<Vec<MapSummary>>> {
    if req.n == 0 || req.n > 256 {
        return Err(ServiceError::Unprocessable("n must be in 1..=256".into()));
    }
    let body = body_for(&s, &req.body_id)?.clone();
    let st = s.clone();
    let maps = tokio::task::spawn_blocking(move || sample_maps(&st.catalog.model, &body, req.n, req.seed))
        .await
        .map_err(|e| ServiceError::Unprocessable(e.to_string()))??;
    let mut stored = s.maps.lock().unwrap();
    let mut out = Vec::with_capacity(maps.len());
    for (k, m) in maps.into_iter().enumerate() {
        let full = upsample_feature_map(&s.catalog.model, &m);
        let id = stored.len();
        out.push(MapSummary {
            id,
            body_id: req.body_id.clone(),
            sample: k,
            contact: full.contact.iter().map(|&c| c as f32).collect(),
            classes: full.argmax_classes(),
            contact_vertices: full.contact.iter().filter(|&&c| c >= 0.5).count(),
        });
        stored.push(StoredMap {
            body_id: req.body_id.clone(),
            sample: k,
            seed: req.seed,
            map: m,
        });
    }
    Ok(Json(out))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlaceRequest {
    pub body_id: String,
    pub scene_id: String,
    pub fmap_id: usize,
    #[serde(default)]
    pub init: Option<PlacementTransform>,
    #[serde(default)]
    pub mode: RefineMode,
    /// Defaults to the seed the feature map was sampled with.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n_seeds: Option<usize>,
    #[serde(default)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobCreated {
    pub job: u64,
}

async fn place(State(s): State<AppState>, Json(req): Json<PlaceRequest>) -> ApiResult<(StatusCode, Json<JobCreated>)> {
    let body = body_for(&s, &req.body_id)?;
    if !s.catalog.scenes.contains_key(&req.scene_id) {
        return Err(ServiceError::NotFound(format!("unknown scene `{}`", req.scene_id)));
    }
    let map_seed = {
        let maps = s.maps.lock().unwrap();
        let m = maps
            .get(req.fmap_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown feature map {}", req.fmap_id)))?;
        if m.body_id != req.body_id {
            return Err(ServiceError::Conflict(format!(
                "feature map {} was sampled for body `{}`",
                req.fmap_id, m.body_id
            )));
        }
        m.seed
    };
    if let Some(t) = &req.init {
        if !t.is_finite() {
            return Err(ServiceError::Unprocessable("init transform is not finite".into()));
        }
        let joints = body.skeleton.as_ref().map_or(0, |sk| sk.joint_count());
        if t.pose_delta.as_ref().is_some_and(|d| d.len() != joints) {
            return Err(ServiceError::Unprocessable(format!("pose_delta must have {joints} entries")));
        }
    }
    let mut settings = s.catalog.settings.clone();
    settings.mode = req.mode;
    settings.n_samples = 1;
    if let Some(n) = req.n_seeds {
        if n == 0 {
            return Err(ServiceError::Unprocessable("n_seeds must be at least 1".into()));
        }
        settings.n_seeds = n;
    }
    if let Some(it) = req.iterations {
        settings.options.iterations = it;
    }
    let id = {
        let mut n = s.next_job.lock().unwrap();
        let id = *n;
        *n += 1;
        id
    };
    s.jobs.lock().unwrap().insert(
        id,
        Job {
            view: JobView {
                id,
                state: JobState::Queued,
                result: None,
                error: None,
                step: 0,
                best_energy: None,
            },
            cancel: Arc::new(AtomicBool::new(false)),
        },
    );
    let _ = s.events.send(Event::State { job: id, state: JobState::Queued });
    s.queue
        .send(PlaceJob {
            id,
            body_id: req.body_id,
            scene_id: req.scene_id,
            fmap: req.fmap_id,
            init: req.init,
            settings,
            seed: req.seed.unwrap_or(map_seed),
        })
        .map_err(|_| ServiceError::Unprocessable("worker stopped".into()))?;
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job: id })))
}

async fn job(State(s): State<AppState>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<JobView>> {
    s.jobs
        .lock()
        .unwrap()
        .get(&id)
        .map(|j| Json(j.view.clone()))
        .ok_or_else(|| ServiceError::NotFound(format!("unknown job {id}")))
}

async fn cancel(State(s): State<AppState>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<JobView>> {
    let queued = {
        let jobs = s.jobs.lock().unwrap();
        let j = jobs.get(&id).ok_or_else(|| ServiceError::NotFound(format!("unknown job {id}")))?;
        j.cancel.store(true, Ordering::SeqCst);
        j.view.state == JobState::Queued
    };
    if queued {
        s.set_state(id, JobState::Cancelled);
    }
    job(State(s), UrlPath(id)).await
}

async fn ws(State(s): State<AppState>, upgrade: WebSocketUpgrade) -> Response {
    let rx = s.subscribe();
    upgrade.on_upgrade(move |socket| forward_events(socket, rx))
}

async fn forward_events(mut socket: WebSocket, mut rx: broadcast::Receiver<Event>) {
    loop {
        match rx.recv().await {
            Ok(ev) => {
                let text = serde_json::to_string(&ev).expect("event serializes");
                if socket.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("websocket subscriber dropped {n} events"),
            Err(broadcast::error::RecvError::Closed) => break,
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/scenes", get(list_scenes))
        .route("/api/scene/{id}/mesh", get(scene_mesh))
        .route("/api/bodies", get(list_bodies))
        .route("/api/sample", post(sample))
        .route("/api/place", post(place))
        .route("/api/job/{id}", get(job))
        .route("/api/job/{id}/cancel", post(cancel))
        .route("/api/ws", get(ws))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(catalog: Catalog, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(catalog))).await
}
