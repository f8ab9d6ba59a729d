//! Affordance placement: find a rigid transform (and optionally small joint
//! perturbations) that makes a body's sampled contact map touch the scene
//! without penetrating it.

use std::f64::consts::PI;
use std::ops::ControlFlow;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AdamState;
use crate::cvae::{CvaeError, Model};
use crate::geometry::{wrap_angle, yaw_rotation, BodyMesh, Bvh, Point, SceneMesh, Vector};
use crate::interaction::{FeatureMap, CONTACT_THRESHOLD, VOID_CLASS};
use crate::rng::{derive_indexed, derive_seed, rng_indexed};
use crate::sdf::SdfGrid;

const LOG_CLAMP: f64 = 1e-7;
/// Energies above this abort refinement.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("feature map has {found} vertices, body has {expected}")]
    Resolution { expected: usize, found: usize },
    #[error("feature map has {found} classes, scene needs {expected}")]
    Classes { expected: usize, found: usize },
    #[error("invalid placement input: {0}")]
    Invalid(String),
    #[error("no seed produced a finite energy")]
    NoFiniteSeed,
    #[error(transparent)]
    Model(#[from] CvaeError),
}

type Result<T> = std::result::Result<T, PlacementError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementWeights {
    pub contact: f64,
    pub semantic: f64,
    pub penetration: f64,
    pub regularization: f64,
}

impl Default for PlacementWeights {
    fn default() -> Self {
        Self {
            contact: 1.0,
            semantic: 0.5,
            penetration: 10.0,
            regularization: 1.0,
        }
    }
}

impl PlacementWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.contact, self.semantic, self.penetration, self.regularization];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(PlacementError::Invalid(format!("weights must be finite and non-negative: {all:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    /// Translation, yaw and joint perturbations.
    #[default]
    Full,
    /// Translation and yaw only.
    FixedPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementOptions {
    /// Contact probabilities are binarized at this cut; `None` uses them raw.
    pub contact_cut: Option<f64>,
    /// Weight each vertex's semantic cross entropy by its contact value.
    pub semantic_gating: bool,
    pub pose_delta_cap: f64,
    pub iterations: usize,
    pub lr_translation: f64,
    pub lr_yaw: f64,
    pub lr_pose: f64,
    /// Stop after this many iterations without improvement.
    pub patience: usize,
    /// Vertical grid step of the seed search.
    pub z_step: f64,
    /// Seeds refined per sampled feature map.
    pub refine_per_map: usize,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        Self {
            contact_cut: Some(0.5),
            semantic_gating: false,
            pose_delta_cap: 0.3,
            iterations: 200,
            lr_translation: 0.01,
            lr_yaw: 0.02,
            lr_pose: 0.02,
            patience: 40,
            z_step: 0.05,
            refine_per_map: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementTransform {
    pub translation: [f64; 3],
    /// Radians about the up axis, in (-π, π].
    pub yaw: f64,
    /// Per-joint axis-angle perturbations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_delta: Option<Vec<[f64; 3]>>,
}

impl PlacementTransform {
    pub fn new(translation: [f64; 3], yaw: f64) -> Self {
        Self {
            translation,
            yaw: wrap_angle(yaw),
            pose_delta: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.pose_delta.iter().flatten().flatten().all(|v| v.is_finite())
    }

    fn delta_vectors(&self) -> Option<Vec<Vector>> {
        self.pose_delta.as_ref().map(|d| d.iter().map(|v| Vector::from(*v)).collect())
    }

    /// Parameter vector `(x, y, z, yaw, δ…)` for diversity metrics.
    pub fn feature_vector(&self) -> Vec<f64> {
        let mut v = self.translation.to_vec();
        v.push(self.yaw);
        v.extend(self.pose_delta.iter().flatten().flatten());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EnergyBreakdown {
    pub afford_contact: f64,
    pub afford_semantic: f64,
    pub pen: f64,
    pub reg: f64,
    pub total: f64,
    /// Vertices that fell outside the SDF domain.
    pub clamped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub total: f64,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    pub transform: PlacementTransform,
    pub energy: EnergyBreakdown,
    pub initial_energy: f64,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    #[serde(default)]
    pub cancelled: bool,
}

/// `λ1 Σ (c_i d_i)²` over vertices.
pub fn contact_term(contact: &[f64], distances: &[f64], weight: f64) -> f64 {
    weight * contact.iter().zip(distances).map(|(c, d)| (c * d).powi(2)).sum::<f64>()
}

/// `λ_pen Σ_{d_i < 0} d_i²`.
pub fn penetration_term(distances: &[f64], weight: f64) -> f64 {
    weight * distances.iter().filter(|&&d| d < 0.0).map(|d| d * d).sum::<f64>()
}

/// A body, its full-resolution feature map and a scene.
pub struct Placement<'a> {
    pub body: &'a BodyMesh,
    pub sdf: &'a SdfGrid,
    pub scene: &'a SceneMesh,
    pub bvh: &'a Bvh,
    pub weights: PlacementWeights,
    pub options: PlacementOptions,
    contact: Vec<f64>,
    semantics: Vec<f64>,
    num_classes: usize,
    /// Lowest local body height.
    base: f64,
}

struct Differentiable {
    value: f64,
    translation: Vector,
    yaw: f64,
}

impl<'a> Placement<'a> {
    pub fn new(
        body: &'a BodyMesh,
        fgen: &FeatureMap,
        sdf: &'a SdfGrid,
        scene: &'a SceneMesh,
        bvh: &'a Bvh,
        weights: PlacementWeights,
        options: PlacementOptions,
    ) -> Result<Self> {
        weights.validate()?;
        if fgen.resolution() != body.vertex_count() {
            return Err(PlacementError::Resolution {
                expected: body.vertex_count(),
                found: fgen.resolution(),
            });
        }
        if fgen.num_classes != scene.num_classes() + 1 {
            return Err(PlacementError::Classes {
                expected: scene.num_classes() + 1,
                found: fgen.num_classes,
            });
        }
        let contact = match options.contact_cut {
            Some(cut) => fgen.contact.iter().map(|&c| if c >= cut { 1.0 } else { 0.0 }).collect(),
            None => fgen.contact.clone(),
        };
        let (lo, _) = body.mesh.bounds().ok_or_else(|| PlacementError::Invalid("empty body".into()))?;
        Ok(Self {
            body,
            sdf,
            scene,
            bvh,
            weights,
            options,
            contact,
            semantics: fgen.semantics.clone(),
            num_classes: fgen.num_classes,
            base: lo.z,
        })
    }

    /// Per-vertex contact weights used by the contact term.
    pub fn contact_weights(&self) -> &[f64] {
        &self.contact
    }

    fn body_vertices(&self, delta: Option<&[Vector]>) -> Vec<Point> {
        match delta {
            Some(d) => self
                .body
                .with_pose_delta(d)
                .unwrap_or_else(|| self.body.mesh.vertices.clone()),
            None => self.body.mesh.vertices.clone(),
        }
    }

    /// World vertices under `t`.
    pub fn vertices(&self, t: &PlacementTransform) -> Vec<Point> {
        let delta = t.delta_vectors();
        let local = self.body_vertices(delta.as_deref());
        let r = yaw_rotation(t.yaw);
        let tr = Vector::from(t.translation);
        local.iter().map(|v| r * v + tr).collect()
    }

    /// Observed feature class per vertex: closest scene class plus one when
    /// within the contact threshold, void otherwise.
    pub fn observed_classes(&self, world: &[Point], sdf_values: &[f64]) -> Vec<u16> {
        let margin = CONTACT_THRESHOLD + 2.0 * self.sdf.cell_size;
        world
            .iter()
            .zip(sdf_values)
            .map(|(p, &d)| {
                if d.abs() > margin {
                    return VOID_CLASS;
                }
                let hit = self.bvh.closest_point(p);
                if hit.distance <= CONTACT_THRESHOLD {
                    self.scene.face_label(hit.face_index) + 1
                } else {
                    VOID_CLASS
                }
            })
            .collect()
    }

    fn semantic_term(&self, world: &[Point], d: &[f64]) -> f64 {
        let obs = self.observed_classes(world, d);
        let nc = self.num_classes;
        let sum: f64 = obs
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let q = self.semantics[i * nc + k as usize].max(LOG_CLAMP);
                let ce = -q.ln();
                if self.options.semantic_gating {
                    self.contact[i] * ce
                } else {
                    ce
                }
            })
            .sum();
        self.weights.semantic * sum
    }

    fn reg_term(&self, t: &PlacementTransform) -> f64 {
        let sq: f64 = t.pose_delta.iter().flatten().flatten().map(|v| v * v).sum();
        self.weights.regularization * sq
    }

    fn assemble(&self, contact: f64, semantic: f64, pen: f64, reg: f64, clamped: usize) -> EnergyBreakdown {
        EnergyBreakdown {
            afford_contact: contact,
            afford_semantic: semantic,
            pen,
            reg,
            total: contact + semantic + pen + reg,
            clamped,
        }
    }

    /// Every energy term at `t`.
    pub fn energy(&self, t: &PlacementTransform) -> EnergyBreakdown {
        let world = self.vertices(t);
        let samples: Vec<_> = world.iter().map(|p| self.sdf.sample(p)).collect();
        let d: Vec<f64> = samples.iter().map(|s| s.value).collect();
        let clamped = samples.iter().filter(|s| s.clamped).count();
        self.assemble(
            contact_term(&self.contact, &d, self.weights.contact),
            self.semantic_term(&world, &d),
            penetration_term(&d, self.weights.penetration),
            self.reg_term(t),
            clamped,
        )
    }

    /// Contact plus penetration for already-posed local vertices.
    fn smooth_value(&self, local: &[Point], yaw: f64, tr: &Vector) -> f64 {
        let r = yaw_rotation(yaw);
        let (lc, lp) = (self.weights.contact, self.weights.penetration);
        local
            .iter()
            .zip(&self.contact)
            .map(|(v, &c)| {
                let d = self.sdf.sample(&(r * v + tr)).value;
                let mut e = lc * (c * d).powi(2);
                if d < 0.0 {
                    e += lp * d * d;
                }
                e
            })
            .sum()
    }

    /// Contact plus penetration and its analytic gradient in `(τ, yaw)`.
    fn smooth_with_gradient(&self, local: &[Point], yaw: f64, tr: &Vector) -> Differentiable {
        let r = yaw_rotation(yaw);
        let (lc, lp) = (self.weights.contact, self.weights.penetration);
        let mut out = Differentiable {
            value: 0.0,
            translation: Vector::zeros(),
            yaw: 0.0,
        };
        for (v, &c) in local.iter().zip(&self.contact) {
            let rv = r * v;
            let g = self.sdf.sample_gradient(&(rv + tr));
            let d = g.value;
            let mut e = lc * (c * d).powi(2);
            let mut de = 2.0 * lc * c * c * d;
            if d < 0.0 {
                e += lp * d * d;
                de += 2.0 * lp * d;
            }
            out.value += e;
            let gx = g.gradient * de;
            out.translation += gx;
            out.yaw += gx.dot(&Vector::z().cross(&rv.coords));
        }
        out
    }

    /// Contact plus penetration plus regularizer and its gradient with
    /// respect to `(τ, yaw, δ)`; the joint part uses central differences.
    pub fn smooth_gradient(&self, t: &PlacementTransform) -> (f64, Vector, f64, Option<Vec<Vector>>) {
        let delta = t.delta_vectors();
        let tr = Vector::from(t.translation);
        let local = self.body_vertices(delta.as_deref());
        let base = self.smooth_with_gradient(&local, t.yaw, &tr);
        let reg = self.reg_term(t);
        let dgrad = delta.as_ref().map(|d| {
            let h = 1e-5;
            let mut g = vec![Vector::zeros(); d.len()];
            let mut work = d.clone();
            for j in 0..d.len() {
                for k in 0..3 {
                    let orig = work[j][k];
                    work[j][k] = orig + h;
                    let fp = self.smooth_value(&self.body_vertices(Some(&work)), t.yaw, &tr);
                    work[j][k] = orig - h;
                    let fm = self.smooth_value(&self.body_vertices(Some(&work)), t.yaw, &tr);
                    work[j][k] = orig;
                    g[j][k] = (fp - fm) / (2.0 * h) + 2.0 * self.weights.regularization * orig;
                }
            }
            g
        });
        (base.value + reg, base.translation, base.yaw, dgrad)
    }

    /// Heights that sweep the body's lowest point across the scene's vertical extent.
    fn z_candidates(&self, lo: f64, hi: f64) -> Vec<f64> {
        let step = self.options.z_step.max(1e-3);
        let base = lo - self.base;
        let n = ((hi - lo).max(0.0) / step).floor() as usize + 1;
        (0..n).map(|i| base + i as f64 * step).collect()
    }

    /// Best height for a given horizontal position and yaw: a coarse grid
    /// scan refined with a five-times finer one around the best step.
    fn best_height(&self, x: f64, y: f64, yaw: f64, zs: &[f64]) -> f64 {
        let local = self.body_vertices(None);
        let eval = |z: f64| self.smooth_value(&local, yaw, &Vector::new(x, y, z));
        let mut best = (f64::INFINITY, zs[0]);
        for &z in zs {
            let e = eval(z);
            if e < best.0 {
                best = (e, z);
            }
        }
        let fine = self.options.z_step / 5.0;
        let center = best.1;
        for k in -4..=4 {
            let z = center + k as f64 * fine;
            let e = eval(z);
            if e < best.0 {
                best = (e, z);
            }
        }
        best.1
    }

    /// Random horizontal positions and yaws, each at its best height, ranked
    /// by full energy (ties by seed index).
    pub fn seed_search(&self, n_seeds: usize, seed: u64) -> Result<Vec<(PlacementTransform, EnergyBreakdown)>> {
        if n_seeds == 0 {
            return Err(PlacementError::Invalid("n_seeds must be at least 1".into()));
        }
        let (lo, hi) = self
            .scene
            .mesh
            .bounds()
            .ok_or_else(|| PlacementError::Invalid("empty scene".into()))?;
        let zs = self.z_candidates(lo.z, hi.z);
        let mut ranked: Vec<(usize, PlacementTransform, EnergyBreakdown)> = (0..n_seeds)
            .into_par_iter()
            .map(|k| {
                let mut rng = rng_indexed(seed, "placement-seed", k as u64);
                let x = rng.gen_range(lo.x..=hi.x);
                let y = rng.gen_range(lo.y..=hi.y);
                let yaw = wrap_angle(rng.gen_range(-PI..PI));
                let z = self.best_height(x, y, yaw, &zs);
                let t = PlacementTransform::new([x, y, z], yaw);
                let e = self.energy(&t);
                (k, t, e)
            })
            .collect();
        ranked.retain(|r| r.2.total.is_finite());
        if ranked.is_empty() {
            return Err(PlacementError::NoFiniteSeed);
        }
        ranked.sort_by(|a, b| a.2.total.total_cmp(&b.2.total).then(a.0.cmp(&b.0)));
        Ok(ranked.into_iter().map(|(_, t, e)| (t, e)).collect())
    }

    /// Adam descent from `init`; the semantic term is frozen at its initial
    /// value while iterating and re-evaluated for the returned transform.
    /// `progress` may stop the run early by returning `Break`.
    pub fn refine(
        &self,
        init: &PlacementTransform,
        mode: RefineMode,
        mut progress: impl FnMut(&TraceEntry) -> ControlFlow<()>,
    ) -> Result<PlacementResult> {
        if !init.is_finite() {
            return Err(PlacementError::Invalid("initial transform is not finite".into()));
        }
        let joints = self.body.skeleton.as_ref().map(|s| s.joint_count());
        let mut cur = init.clone();
        if mode == RefineMode::Full {
            if let (None, Some(n)) = (&cur.pose_delta, joints) {
                cur.pose_delta = Some(vec![[0.0; 3]; n]);
            }
        } else if cur.pose_delta.is_some() && joints.is_none() {
            cur.pose_delta = None;
        }
        let start = cur.clone();
        let initial = self.energy(&start);
        let frozen = {
            let world = self.vertices(&cur);
            let d: Vec<f64> = world.iter().map(|p| self.sdf.sample(p).value).collect();
            self.semantic_term(&world, &d)
        };
        let mut best_t = start.clone();
        let mut best = initial.total;
        let mut trace = Vec::new();
        let mut converged = false;
        let mut cancelled = false;
        let mut since_best = 0usize;
        let mut adam_t = AdamState::<f64>::new(&[3], self.options.lr_translation);
        let mut adam_y = AdamState::<f64>::new(&[1], self.options.lr_yaw);
        let n_delta = cur.pose_delta.as_ref().map_or(0, |d| d.len() * 3);
        let mut adam_p = AdamState::<f64>::new(&[n_delta], self.options.lr_pose);
        for it in 0..self.options.iterations {
            let (value, gt, gy, gd) = self.smooth_gradient(&cur);
            let total = value + frozen;
            if !total.is_finite() || total > DIVERGENCE_LIMIT {
                break;
            }
            if total < best {
                best = total;
                best_t = cur.clone();
                since_best = 0;
            } else {
                since_best += 1;
            }
            let entry = TraceEntry {
                iteration: it,
                total,
                best,
            };
            trace.push(entry);
            if progress(&entry).is_break() {
                cancelled = true;
                break;
            }
            let gnorm = gt.norm_squared() + gy * gy + gd.iter().flatten().map(|v| v.norm_squared()).sum::<f64>();
            if gnorm.sqrt() < 1e-12 || since_best >= self.options.patience {
                converged = true;
                break;
            }
            let mut tr = cur.translation;
            adam_t.update(&mut [&mut tr[..]], &[gt.as_slice()]).expect("shapes fixed");
            cur.translation = tr;
            let mut yaw = [cur.yaw];
            adam_y.update(&mut [&mut yaw[..]], &[&[gy][..]]).expect("shapes fixed");
            cur.yaw = wrap_angle(yaw[0]);
            if let (Some(d), Some(g)) = (cur.pose_delta.as_mut(), gd) {
                let mut flat: Vec<f64> = d.iter().flatten().copied().collect();
                let gflat: Vec<f64> = g.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
                adam_p.update(&mut [&mut flat[..]], &[&gflat[..]]).expect("shapes fixed");
                for (j, slot) in d.iter_mut().enumerate() {
                    let mut v = Vector::new(flat[3 * j], flat[3 * j + 1], flat[3 * j + 2]);
                    let n = v.norm();
                    if n > self.options.pose_delta_cap {
                        v *= self.options.pose_delta_cap / n;
                    }
                    *slot = [v.x, v.y, v.z];
                }
            }
        }
        let mut energy = self.energy(&best_t);
        if energy.total > initial.total {
            best_t = start;
            energy = initial;
        }
        Ok(PlacementResult {
            transform: best_t,
            energy,
            initial_energy: initial.total,
            trace,
            converged,
            cancelled,
        })
    }
}

/// One candidate of [`place`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedCandidate {
    pub sample: usize,
    pub seed_rank: usize,
    pub result: PlacementResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceOutcome {
    pub best: PlacedCandidate,
    pub alternatives: Vec<PlacedCandidate>,
    pub feature_maps: Vec<FeatureMap>,
}

/// Feature map from the model's resolution to the body's.
pub fn upsample_feature_map(model: &Model, fmap: &FeatureMap) -> FeatureMap {
    let h = &model.hierarchy;
    let level = model.config.feature_level;
    FeatureMap {
        contact: h.upsample(&fmap.contact, 1, level),
        semantics: h.upsample(&fmap.semantics, fmap.num_classes, level),
        num_classes: fmap.num_classes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceSettings {
    pub weights: PlacementWeights,
    pub options: PlacementOptions,
    pub mode: RefineMode,
    pub n_samples: usize,
    pub n_seeds: usize,
}

impl Default for PlaceSettings {
    fn default() -> Self {
        Self {
            weights: PlacementWeights::default(),
            options: PlacementOptions::default(),
            mode: RefineMode::Full,
            n_samples: 4,
            n_seeds: 64,
        }
    }
}

/// Candidates for the feature map of sample `sample`: refined from `init`
/// when given, otherwise from the best seeds of a seed search.
/// `progress` receives the seed rank and each trace entry.
pub fn place_map(
    problem: &Placement,
    sample: usize,
    settings: &PlaceSettings,
    seed: u64,
    init: Option<&PlacementTransform>,
    mut progress: impl FnMut(usize, &TraceEntry) -> ControlFlow<()>,
) -> Result<Vec<PlacedCandidate>> {
    let starts: Vec<PlacementTransform> = match init {
        Some(t) => vec![t.clone()],
        None => problem
            .seed_search(settings.n_seeds, derive_indexed(seed, "seed-search", sample as u64))?
            .into_iter()
            .take(settings.options.refine_per_map.max(1))
            .map(|(t, _)| t)
            .collect(),
    };
    let mut out = Vec::with_capacity(starts.len());
    for (rank, t) in starts.iter().enumerate() {
        let result = problem.refine(t, settings.mode, |e| progress(rank, e))?;
        let stop = result.cancelled;
        out.push(PlacedCandidate {
            sample,
            seed_rank: rank,
            result,
        });
        if stop {
            break;
        }
    }
    Ok(out)
}

/// Orders candidates by energy, then sample, then seed rank.
pub fn rank_candidates(all: &mut [PlacedCandidate]) {
    all.sort_by(|a, b| {
        a.result
            .energy
            .total
            .total_cmp(&b.result.energy.total)
            .then(a.sample.cmp(&b.sample))
            .then(a.seed_rank.cmp(&b.seed_rank))
    });
}

/// Samples feature maps for `body`, seeds and refines each, and ranks all
/// refined candidates by energy (ties by sample, then seed rank).
pub fn place(
    model: &Model,
    body: &BodyMesh,
    scene: &SceneMesh,
    sdf: &SdfGrid,
    bvh: &Bvh,
    settings: &PlaceSettings,
    seed: u64,
) -> Result<PlaceOutcome> {
    if settings.n_samples == 0 {
        return Err(PlacementError::Invalid("n_samples must be at least 1".into()));
    }
    let maps = model.sample(body, settings.n_samples, derive_seed(seed, "feature-maps"))?;
    let full: Vec<FeatureMap> = maps.iter().map(|m| upsample_feature_map(model, m)).collect();
    let per_map: Vec<Result<Vec<PlacedCandidate>>> = full
        .par_iter()
        .enumerate()
        .map(|(s, fmap)| {
            let p = Placement::new(body, fmap, sdf, scene, bvh, settings.weights, settings.options.clone())?;
            place_map(&p, s, settings, seed, None, |_, _| ControlFlow::Continue(()))
        })
        .collect();
    let mut all = Vec::new();
    for r in per_map {
        all.extend(r?);
    }
    rank_candidates(&mut all);
    let best = all.remove(0);
    Ok(PlaceOutcome {
        best,
        alternatives: all,
        feature_maps: maps,
    })
}

/// Transform applied to a body: world vertices for metrics and export.
pub fn placed_vertices(body: &BodyMesh, t: &PlacementTransform) -> Vec<Point> {
    let local = match t.delta_vectors() {
        Some(d) => body.with_pose_delta(&d).unwrap_or_else(|| body.mesh.vertices.clone()),
        None => body.mesh.vertices.clone(),
    };
    let r = yaw_rotation(t.yaw);
    let tr = Vector::from(t.translation);
    local.iter().map(|v| r * v + tr).collect()
}
