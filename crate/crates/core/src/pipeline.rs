//! File-level steps shared by the command line and the service: data
//! generation, SDF building, feature extraction, training, sampling,
//! placement and evaluation.

use std::fs;
use std::io::BufWriter;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cvae::{train, Checkpoint, CvaeError, EpochStats, Model, ModelConfig, TrainOptions, TrainingMetadata};
use crate::geometry::{
    load_labeled_mesh, save_obj, save_ply, BodyMesh, Bvh, GeometryError, MeshFormat, SceneMesh, SkeletonFile, TriMesh,
    UpAxis,
};
use crate::interaction::{default_class_names, extract_features, FeatureMap, InteractionDataset, InteractionError};
use crate::meshnet::MeshHierarchy;
use crate::metrics::{diversity, plausibility, MetricsError};
use crate::placement::{
    place_map, placed_vertices, rank_candidates, upsample_feature_map, EnergyBreakdown, PlaceSettings, PlacedCandidate,
    Placement, PlacementError, PlacementTransform, TraceEntry,
};
use crate::rng::{derive_indexed, derive_seed};
use crate::sdf::{build_sdf, SdfError, SdfGrid, SdfOptions};
use crate::synthgen::{generate_body, generate_frames, generate_scene, Humanoid, SynthError, POSE_NAMES};

pub const HIERARCHY_LEVELS: usize = 4;
pub const DEFAULT_SDF_RESOLUTION: usize = 96;
pub const SCENE_DIR: &str = "scenes";
pub const BODY_DIR: &str = "bodies";
pub const DATASET_FILE: &str = "dataset.posa";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sdf(#[from] SdfError),
    #[error(transparent)]
    Interaction(#[from] InteractionError),
    #[error(transparent)]
    Model(#[from] CvaeError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}: {1}")]
    Json(String, serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io(path.display().to_string(), e)
}

/// The synthetic humanoid shared by every step.
pub fn humanoid() -> &'static Humanoid {
    static H: OnceLock<Humanoid> = OnceLock::new();
    H.get_or_init(Humanoid::new)
}

/// Mesh hierarchy of the humanoid's topology.
pub fn body_hierarchy() -> Arc<MeshHierarchy> {
    static H: OnceLock<Arc<MeshHierarchy>> = OnceLock::new();
    H.get_or_init(|| Arc::new(humanoid().hierarchy(HIERARCHY_LEVELS))).clone()
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Json(path.display().to_string(), e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(io_err(p)),
        _ => Ok(()),
    }
}

/// `foo.obj` → `foo.skeleton.json`.
pub fn skeleton_path(obj: &Path) -> PathBuf {
    let stem = obj.file_stem().and_then(|s| s.to_str()).unwrap_or("body");
    obj.with_file_name(format!("{stem}.skeleton.json"))
}

/// A body from OBJ or PLY, rigged when a skeleton file sits next to it.
/// Rigged bodies are re-posed from the skeleton and must agree with the
/// mesh file to within a millimeter.
pub fn load_body(path: &Path, up: UpAxis) -> Result<BodyMesh> {
    let format = MeshFormat::from_path(path)?;
    let mesh = load_labeled_mesh(path, format)?.mesh;
    let to_internal = up.to_internal();
    let sk_path = skeleton_path(path);
    if !sk_path.exists() {
        return Ok(BodyMesh::from_mesh(to_internal.apply_mesh(&mesh)));
    }
    let file: SkeletonFile = read_json(&sk_path)?;
    let root = to_internal.compose(&file.root());
    let body = BodyMesh::from_skeleton(file.skeleton, mesh.faces.clone(), root)?;
    let moved = to_internal.apply_mesh(&mesh);
    let worst = body
        .mesh
        .vertices
        .iter()
        .zip(&moved.vertices)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    if worst > 1e-3 {
        return Err(PipelineError::Invalid(format!(
            "{} disagrees with its skeleton by {worst:.4} m",
            path.display()
        )));
    }
    Ok(body)
}

/// OBJ plus skeleton JSON when rigged.
pub fn save_body(body: &BodyMesh, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    save_obj(&body.mesh, path)?;
    if let Some(sk) = SkeletonFile::from_body(body) {
        write_json(&sk, &skeleton_path(path))?;
    }
    Ok(())
}

/// A labeled scene; unlabeled files get the `other` class everywhere.
pub fn load_scene(path: &Path, up: UpAxis) -> Result<SceneMesh> {
    let loaded = load_labeled_mesh(path, MeshFormat::from_path(path)?)?;
    let names = default_class_names();
    let labels = loaded
        .labels
        .unwrap_or_else(|| vec![(names.len() - 1) as u16; loaded.mesh.vertex_count()]);
    let mesh = up.to_internal().apply_mesh(&loaded.mesh);
    Ok(SceneMesh::new(mesh, labels, names)?)
}

pub fn save_scene(scene: &SceneMesh, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    save_ply(&scene.mesh, Some(&scene.labels), path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataConfig {
    pub frames: usize,
    pub scenes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataSummary {
    pub config: GenDataConfig,
    pub frames: usize,
    pub vertex_count: usize,
    pub pose_counts: Vec<(String, usize)>,
    pub skipped: Vec<(usize, String)>,
    pub scenes: Vec<String>,
    pub bodies: Vec<String>,
    pub dataset: String,
}

/// Rooms, one body per pose and a training dataset under `out`.
pub fn gen_data(config: &GenDataConfig, out: &Path) -> Result<GenDataSummary> {
    if config.frames == 0 {
        return Err(PipelineError::Invalid("frames must be at least 1".into()));
    }
    fs::create_dir_all(out.join(SCENE_DIR)).map_err(io_err(out))?;
    fs::create_dir_all(out.join(BODY_DIR)).map_err(io_err(out))?;
    let mut scenes = Vec::new();
    for k in 0..config.scenes {
        let name = format!("scene_{k:03}.ply");
        let scene = generate_scene(derive_indexed(config.seed, "scene", k as u64));
        save_scene(&scene, &out.join(SCENE_DIR).join(&name))?;
        scenes.push(format!("{SCENE_DIR}/{name}"));
    }
    let h = humanoid();
    let mut bodies = Vec::new();
    for pose in POSE_NAMES {
        let body = generate_body(h, pose, None)?;
        let name = format!("{pose}.obj");
        save_body(&body, &out.join(BODY_DIR).join(&name))?;
        bodies.push(format!("{BODY_DIR}/{name}"));
    }
    let hierarchy = body_hierarchy();
    let generated = generate_frames(h, &hierarchy, ModelConfig::default().feature_level, config.frames, config.seed)?;
    generated.dataset.save(&out.join(DATASET_FILE))?;
    let pose_counts = POSE_NAMES
        .iter()
        .map(|p| (p.to_string(), generated.poses.iter().filter(|q| q == p).count()))
        .collect();
    let summary = GenDataSummary {
        config: config.clone(),
        frames: generated.dataset.frames.len(),
        vertex_count: generated.dataset.vertex_count,
        pose_counts,
        skipped: generated.skipped,
        scenes,
        bodies,
        dataset: DATASET_FILE.into(),
    };
    write_json(&summary, &out.join(MANIFEST_FILE))?;
    Ok(summary)
}

pub fn scene_sdf(scene: &SceneMesh, resolution: usize) -> Result<SdfGrid> {
    Ok(build_sdf(&scene.mesh, &SdfOptions::for_mesh(&scene.mesh, resolution))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdfSummary {
    pub dims: [usize; 3],
    pub cell_size: f64,
    pub origin: [f64; 3],
    pub min_value: f64,
    pub max_value: f64,
}

pub fn build_sdf_file(scene: &Path, resolution: usize, out: &Path, up: UpAxis) -> Result<SdfSummary> {
    let scene = load_scene(scene, up)?;
    let sdf = scene_sdf(&scene, resolution)?;
    ensure_parent(out)?;
    sdf.save(out)?;
    let (min_value, max_value) = sdf
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    Ok(SdfSummary {
        dims: sdf.dims,
        cell_size: sdf.cell_size,
        origin: [sdf.origin.x, sdf.origin.y, sdf.origin.z],
        min_value,
        max_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub threshold: f64,
    pub class_names: Vec<String>,
    pub contact: Vec<u8>,
    /// Feature class per vertex: 0 void, otherwise scene class plus one.
    pub classes: Vec<u16>,
    pub distances: Vec<f64>,
    pub contact_count: usize,
}

pub fn extract_features_file(body: &Path, scene: &Path, threshold: f64, up: UpAxis) -> Result<FeatureReport> {
    let body = load_body(body, up)?;
    let scene = load_scene(scene, up)?;
    let bvh = Bvh::build(&scene.mesh)?;
    let (record, fmap) = extract_features(&body.mesh.vertices, &scene, &bvh, threshold)?;
    let contact = fmap.binary_contact(0.5);
    Ok(FeatureReport {
        threshold,
        class_names: scene.class_names.clone(),
        contact_count: contact.iter().filter(|&&c| c == 1).count(),
        classes: fmap.argmax_classes(),
        contact,
        distances: record.distances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub options: TrainOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            options: TrainOptions::default(),
        }
    }
}

/// Trains a fresh model on a dataset file and writes the checkpoint.
pub fn train_file(
    dataset: &Path,
    config: &TrainConfig,
    seed: u64,
    out: &Path,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainingMetadata> {
    let data = InteractionDataset::load(dataset)?;
    let mut model_config = config.model.clone();
    model_config.num_classes = data.num_feature_classes();
    let model = Model::new(model_config, body_hierarchy(), data.class_names.clone(), derive_seed(seed, "model-init"))?;
    let ckpt = train(model, &data, &config.options, derive_seed(seed, "train"), on_epoch)?;
    ensure_parent(out)?;
    ckpt.save(out)?;
    Ok(ckpt.metadata)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub seed: u64,
    pub class_names: Vec<String>,
    /// Feature maps at the model's resolution.
    pub maps: Vec<FeatureMap>,
}

pub fn load_model(path: &Path) -> Result<Model> {
    Ok(Checkpoint::load(path)?.model)
}

/// Feature maps for `body`, seeded the same way as [`place_file`].
pub fn sample_maps(model: &Model, body: &BodyMesh, n: usize, seed: u64) -> Result<Vec<FeatureMap>> {
    Ok(model.sample(body, n, derive_seed(seed, "feature-maps"))?)
}

pub fn sample_file(model: &Path, body: &Path, n: usize, seed: u64, up: UpAxis) -> Result<SampleReport> {
    let model = load_model(model)?;
    let body = load_body(body, up)?;
    Ok(SampleReport {
        seed,
        class_names: model.class_names.clone(),
        maps: sample_maps(&model, &body, n, seed)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub transform: PlacementTransform,
    pub energies: EnergyBreakdown,
    pub converged: bool,
    pub sample: usize,
    pub seed_rank: usize,
    pub iterations: usize,
}

impl From<&PlacedCandidate> for CandidateReport {
    fn from(c: &PlacedCandidate) -> Self {
        Self {
            transform: c.result.transform.clone(),
            energies: c.result.energy,
            converged: c.result.converged,
            sample: c.sample,
            seed_rank: c.seed_rank,
            iterations: c.result.trace.len(),
        }
    }
}

/// Placement output: the best candidate inline plus ranked alternatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementReport {
    pub transform: PlacementTransform,
    pub energies: EnergyBreakdown,
    pub converged: bool,
    pub sample: usize,
    pub seed_rank: usize,
    pub iterations: usize,
    pub alternatives: Vec<CandidateReport>,
    pub seed: u64,
    pub settings: PlaceSettings,
}

impl PlacementReport {
    /// `candidates` must be non-empty; they are ranked here.
    pub fn from_candidates(mut candidates: Vec<PlacedCandidate>, seed: u64, settings: &PlaceSettings) -> Result<Self> {
        if candidates.is_empty() {
            return Err(PipelineError::Invalid("no placement candidates".into()));
        }
        rank_candidates(&mut candidates);
        let best = CandidateReport::from(&candidates[0]);
        Ok(Self {
            transform: best.transform,
            energies: best.energies,
            converged: best.converged,
            sample: best.sample,
            seed_rank: best.seed_rank,
            iterations: best.iterations,
            alternatives: candidates[1..].iter().map(CandidateReport::from).collect(),
            seed,
            settings: settings.clone(),
        })
    }

    /// Every candidate transform, best first.
    pub fn transforms(&self) -> impl Iterator<Item = &PlacementTransform> {
        std::iter::once(&self.transform).chain(self.alternatives.iter().map(|a| &a.transform))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("placement report serializes");
        s.push('\n');
        s
    }
}

/// A scene ready for placement.
pub struct PreparedScene {
    pub scene: SceneMesh,
    pub sdf: SdfGrid,
    pub bvh: Bvh,
}

impl PreparedScene {
    pub fn new(scene: SceneMesh, sdf: SdfGrid) -> Result<Self> {
        let bvh = Bvh::build(&scene.mesh)?;
        Ok(Self { scene, sdf, bvh })
    }
}

/// Places `body` against one feature map (model resolution) of sample
/// index `sample`. This is the unit of work of both [`place_body`] and the
/// service's placement jobs.
#[allow(clippy::too_many_arguments)]
pub fn place_with_map(
    model: &Model,
    body: &BodyMesh,
    fmap: &FeatureMap,
    sample: usize,
    prepared: &PreparedScene,
    settings: &PlaceSettings,
    seed: u64,
    init: Option<&PlacementTransform>,
    progress: impl FnMut(usize, &TraceEntry) -> ControlFlow<()>,
) -> Result<Vec<PlacedCandidate>> {
    let full = upsample_feature_map(model, fmap);
    let problem = Placement::new(
        body,
        &full,
        &prepared.sdf,
        &prepared.scene,
        &prepared.bvh,
        settings.weights,
        settings.options.clone(),
    )?;
    Ok(place_map(&problem, sample, settings, seed, init, progress)?)
}

/// Samples `n_samples` maps and places against each in parallel.
pub fn place_body(
    model: &Model,
    body: &BodyMesh,
    prepared: &PreparedScene,
    settings: &PlaceSettings,
    seed: u64,
) -> Result<PlacementReport> {
    use rayon::prelude::*;
    if settings.n_samples == 0 {
        return Err(PipelineError::Invalid("n_samples must be at least 1".into()));
    }
    let maps = sample_maps(model, body, settings.n_samples, seed)?;
    let per_map: Vec<Result<Vec<PlacedCandidate>>> = maps
        .par_iter()
        .enumerate()
        .map(|(s, m)| place_with_map(model, body, m, s, prepared, settings, seed, None, |_, _| ControlFlow::Continue(())))
        .collect();
    let mut all = Vec::new();
    for r in per_map {
        all.extend(r?);
    }
    PlacementReport::from_candidates(all, seed, settings)
}

/// Runs placement from files, writes `out` (JSON) and the placed best body
/// next to it as OBJ.
#[allow(clippy::too_many_arguments)]
pub fn place_file(
    model: &Path,
    body: &Path,
    scene: &Path,
    sdf: &Path,
    settings: &PlaceSettings,
    seed: u64,
    out: &Path,
    up: UpAxis,
) -> Result<PlacementReport> {
    let model = load_model(model)?;
    let body = load_body(body, up)?;
    let prepared = PreparedScene::new(load_scene(scene, up)?, SdfGrid::load(sdf)?)?;
    let report = place_body(&model, &body, &prepared, settings, seed)?;
    ensure_parent(out)?;
    fs::write(out, report.to_json()).map_err(io_err(out))?;
    let placed = TriMesh::new(placed_vertices(&body, &report.transform), body.mesh.faces.clone())?;
    let obj = out.with_extension("obj");
    let file = fs::File::create(&obj).map_err(io_err(&obj))?;
    crate::geometry::write_obj(&placed, &mut BufWriter::new(file)).map_err(io_err(&obj))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub placements: Vec<String>,
    pub non_collision: Vec<f64>,
    pub contact: Vec<u8>,
    pub non_collision_mean: f64,
    pub contact_mean: f64,
    /// Natural-log entropy of the cluster histogram; `null` with fewer
    /// candidate transforms than clusters.
    pub entropy: Option<f64>,
    pub cluster_size: Option<f64>,
    pub k: usize,
    pub histogram: Option<Vec<usize>>,
    pub samples: usize,
}

/// Placed bodies (`*.obj` next to each placement `*.json`) scored against
/// the SDF; diversity over every candidate transform.
pub fn eval_dir(placements: &Path, sdf: &Path, k: usize, seed: u64) -> Result<EvalReport> {
    let sdf = SdfGrid::load(sdf)?;
    let mut files: Vec<PathBuf> = fs::read_dir(placements)
        .map_err(io_err(placements))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json") && p.with_extension("obj").exists())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(PipelineError::Invalid(format!("no placements found in {}", placements.display())));
    }
    let mut bodies = Vec::new();
    let mut features = Vec::new();
    for f in &files {
        let report: PlacementReport = read_json(f)?;
        features.extend(report.transforms().map(|t| t.feature_vector()));
        bodies.push(load_labeled_mesh(&f.with_extension("obj"), MeshFormat::Obj)?.mesh.vertices);
    }
    let plaus = plausibility(bodies.iter().map(|b| b.as_slice()), &sdf);
    let div = if features.len() >= k {
        Some(diversity(&features, k, derive_seed(seed, "diversity"))?)
    } else {
        log::warn!("{} candidate transforms, fewer than k = {k}; diversity skipped", features.len());
        None
    };
    Ok(EvalReport {
        placements: files
            .iter()
            .map(|f| f.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
        non_collision: plaus.non_collision,
        contact: plaus.contact,
        non_collision_mean: plaus.non_collision_mean,
        contact_mean: plaus.contact_mean,
        entropy: div.as_ref().map(|d| d.entropy),
        cluster_size: div.as_ref().map(|d| d.cluster_size),
        histogram: div.map(|d| d.histogram),
        k,
        samples: features.len(),
    })
}
