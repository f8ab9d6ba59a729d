//! Posed bodies staged on fitted supports, with features extracted against
//! the staged scene.

use rand::Rng;
use rayon::prelude::*;

use super::humanoid::{generate_body, pose_library, pose_spec, BodyPart, Humanoid, PoseSpec, Support};
use super::scene::{self, BoxPart, FurnitureItem, SceneBuilder};
use super::SynthError;
use crate::geometry::{Bvh, BodyMesh, Point, RigidTransform, SceneMesh, Vector};
use crate::interaction::{canonicalize, default_class_names, extract_features, Frame, InteractionDataset, CONTACT_THRESHOLD};
use crate::meshnet::MeshHierarchy;
use crate::rng::{derive_indexed, rng_indexed};

/// Distance under which a vertex of the unjittered staged pose belongs to
/// the pose's expected-contact mask.
pub const MASK_DISTANCE: f64 = 0.02;

/// A body placed on its support inside a small generated scene.
#[derive(Debug, Clone)]
pub struct StagedFrame {
    pub pose: String,
    /// Body as generated (lowest vertex on z = 0), before staging.
    pub body: BodyMesh,
    /// Body in scene coordinates.
    pub placed: BodyMesh,
    pub scene: SceneMesh,
    /// Class of the main support.
    pub support_class: u16,
}

fn lift(body: &BodyMesh, dz: f64) -> BodyMesh {
    let t = RigidTransform::new(nalgebra::Rotation3::identity(), Vector::new(0.0, 0.0, dz));
    BodyMesh {
        mesh: t.apply_mesh(&body.mesh),
        skeleton: body.skeleton.clone(),
        root: t.compose(&body.root),
    }
}

fn min_z_in(vs: &[Point], x: (f64, f64), y: (f64, f64)) -> Option<f64> {
    vs.iter()
        .filter(|p| p.x >= x.0 && p.x <= x.1 && p.y >= y.0 && p.y <= y.1)
        .map(|p| p.z)
        .min_by(f64::total_cmp)
}

fn region_extent(vs: &[Point], mask: impl Fn(usize) -> bool, axis: usize, max: bool) -> f64 {
    let it = vs.iter().enumerate().filter(|(i, _)| mask(*i)).map(|(_, p)| p[axis]);
    if max {
        it.fold(f64::NEG_INFINITY, f64::max)
    } else {
        it.fold(f64::INFINITY, f64::min)
    }
}

struct Rect {
    min: [f64; 2],
    max: [f64; 2],
}

impl Rect {
    fn distance(&self, p: [f64; 2]) -> f64 {
        let dx = (self.min[0] - p[0]).max(p[0] - self.max[0]).max(0.0);
        let dy = (self.min[1] - p[1]).max(p[1] - self.max[1]).max(0.0);
        dx.hypot(dy)
    }
}

/// Stages `body` (a `spec` pose) on a support fitted to its geometry.
pub fn stage(
    humanoid: &Humanoid,
    spec: &PoseSpec,
    body: BodyMesh,
    rng: &mut impl Rng,
    distractors: bool,
) -> Result<StagedFrame, SynthError> {
    let vs = body.mesh.vertices.clone();
    let (lo, hi) = body.mesh.bounds().ok_or(SynthError::Staging("empty body".into()))?;
    let parts = &humanoid.parts;
    let mut b = SceneBuilder::new();
    let mut keep_out = vec![Rect {
        min: [lo.x, lo.y],
        max: [hi.x, hi.y],
    }];
    let (cx, cy) = ((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
    b.add_box(scene::FLOOR, [cx - 3.0, cy - 3.0, -0.1], [cx + 3.0, cy + 3.0, 0.0]);
    let mut dz = 0.0;
    let add = |b: &mut SceneBuilder, keep: &mut Vec<Rect>, class: u16, min: [f64; 3], max: [f64; 3]| {
        b.add_box(class, min, max);
        keep.push(Rect {
            min: [min[0], min[1]],
            max: [max[0], max[1]],
        });
    };
    let support_class = match spec.support {
        Support::Floor => scene::FLOOR,
        Support::Seat => {
            let on_sofa = rng.gen_bool(0.4);
            let (class, half, depth, thick) = if on_sofa {
                (scene::SOFA, rng.gen_range(0.8..1.0), 0.45, 0.2)
            } else {
                (scene::CHAIR, 0.25, 0.42, 0.06)
            };
            let y_back = region_extent(&vs, |i| parts[i] == BodyPart::Torso, 1, false);
            let y0 = y_back - 0.03;
            let y1 = y_back + depth;
            let h = min_z_in(&vs, (-half, half), (y0, y1)).ok_or(SynthError::Staging("nothing above seat".into()))?;
            if h < 0.2 {
                return Err(SynthError::Staging(format!("seat height {h:.3} too low")));
            }
            add(&mut b, &mut keep_out, class, [-half, y0, 0.0], [half, y1, h]);
            add(&mut b, &mut keep_out, class, [-half, y0 - thick, 0.0], [half, y0, h + 0.45]);
            class
        }
        Support::Bed => {
            let class = if rng.gen_bool(0.75) { scene::BED } else { scene::SOFA };
            let m = rng.gen_range(0.05..0.2);
            let height = rng.gen_range(0.38..0.55);
            add(&mut b, &mut keep_out, class, [lo.x - m, lo.y - m, 0.0], [hi.x + m, hi.y + m, height]);
            if class == scene::SOFA {
                add(&mut b, &mut keep_out, class, [hi.x + m, lo.y - m, 0.0], [hi.x + m + 0.2, hi.y + m, height + 0.45]);
            }
            dz = height;
            class
        }
        Support::Shelf => {
            let hand = &humanoid.regions.right_hand;
            let tip_y = region_extent(&vs, |i| hand[i], 1, true);
            let hx = region_extent(&vs, |i| hand[i], 0, true);
            let toes = region_extent(&vs, |i| matches!(parts[i], BodyPart::LeftLeg | BodyPart::RightLeg), 1, true);
            let y0 = (toes + 0.05).max(tip_y - 0.12);
            let y1 = tip_y + 0.25;
            let x = (hx - 0.35, hx + 0.35);
            let h = min_z_in(&vs, x, (y0, y1)).ok_or(SynthError::Staging("hand not over shelf".into()))?;
            add(&mut b, &mut keep_out, scene::SHELF, [x.0, y0, 0.0], [x.1, y1, h]);
            scene::SHELF
        }
        Support::Wall => {
            let yw = hi.y;
            add(&mut b, &mut keep_out, scene::WALL, [cx - 1.5, yw, 0.0], [cx + 1.5, yw + 0.12, 2.4]);
            scene::WALL
        }
    };
    if distractors {
        let count = rng.gen_range(0..=3);
        for _ in 0..count {
            let (class, boxes) = match rng.gen_range(0..5) {
                0 => (scene::TABLE, scene::table(rng.gen_range(0.7..0.78))),
                1 => (scene::SHELF, scene::shelf(rng.gen_range(1.0..1.8))),
                2 => (scene::OTHER, scene::cabinet()),
                3 => (scene::CHAIR, scene::chair(rng.gen_range(0.38..0.44))),
                _ => (scene::WALL, vec![BoxPart::new([-1.0, -0.05, 0.0], [1.0, 0.05, 2.4])]),
            };
            for _ in 0..20 {
                let item = FurnitureItem {
                    class,
                    boxes: boxes.clone(),
                    yaw: std::f64::consts::FRAC_PI_2 * rng.gen_range(0..4) as f64,
                    position: [cx + rng.gen_range(-2.2..2.2), cy + rng.gen_range(-2.2..2.2), 0.0],
                };
                let r = item.footprint_radius();
                let c = [item.position[0], item.position[1]];
                if keep_out.iter().all(|k| k.distance(c) > r + 0.35) {
                    b.add_item(&item);
                    keep_out.push(Rect {
                        min: [c[0] - r, c[1] - r],
                        max: [c[0] + r, c[1] + r],
                    });
                    break;
                }
            }
        }
    }
    let scene = b.build();
    let placed = lift(&body, dz);
    Ok(StagedFrame {
        pose: spec.name.clone(),
        body,
        placed,
        scene,
        support_class,
    })
}

/// Expected-contact mask of a library pose at full resolution.
pub fn contact_mask(humanoid: &Humanoid, pose: &str) -> Result<Vec<bool>, SynthError> {
    let spec = pose_spec(pose)?;
    let body = generate_body(humanoid, pose, None)?;
    let staged = stage(humanoid, &spec, body, &mut rng_indexed(0, "mask", 0), false)?;
    let bvh = Bvh::build(&staged.scene.mesh)?;
    let (rec, _) = extract_features(&staged.placed.mesh.vertices, &staged.scene, &bvh, CONTACT_THRESHOLD)?;
    Ok(rec.distances.iter().map(|&d| d <= MASK_DISTANCE).collect())
}

const POSE_WEIGHTS: [f64; 5] = [0.3, 0.25, 0.2, 0.125, 0.125];

/// Output of [`generate_frames`].
#[derive(Debug, Clone)]
pub struct GeneratedFrames {
    pub dataset: InteractionDataset,
    /// Pose name of each kept frame.
    pub poses: Vec<String>,
    /// Frame indices that could not be staged, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// One staged frame for index `i`, retrying with fresh draws.
pub fn staged_frame(humanoid: &Humanoid, seed: u64, i: usize) -> Result<StagedFrame, SynthError> {
    let library = pose_library();
    let mut last = None;
    for attempt in 0..4u64 {
        let mut rng = rng_indexed(derive_indexed(seed, "frame", i as u64), "attempt", attempt);
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        let mut k = POSE_WEIGHTS.len() - 1;
        for (j, w) in POSE_WEIGHTS.iter().enumerate() {
            acc += w;
            if u < acc {
                k = j;
                break;
            }
        }
        let spec = &library[k];
        let body = humanoid.pose(&spec.jittered(&mut rng), &spec.root_rotation);
        match stage(humanoid, spec, body, &mut rng, true) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap())
}

/// Feature-resolution training frame for a staged body.
pub fn frame_from_staged(staged: &StagedFrame, hierarchy: &MeshHierarchy, level: usize) -> Result<Frame, SynthError> {
    let bvh = Bvh::build(&staged.scene.mesh)?;
    let pts = hierarchy.downsample_points(&staged.placed.mesh.vertices, level);
    let (rec, _) = extract_features(&pts, &staged.scene, &bvh, CONTACT_THRESHOLD)?;
    let (contact, classes) = crate::interaction::contact_labels(&rec, CONTACT_THRESHOLD);
    if !contact.iter().any(|&c| c == 1) {
        return Err(SynthError::Staging("no vertex in contact".into()));
    }
    let canon = canonicalize(&staged.body);
    let positions = hierarchy
        .downsample_points(&canon.mesh.vertices, level)
        .iter()
        .map(|p| [p.x as f32, p.y as f32, p.z as f32])
        .collect();
    Ok(Frame {
        positions,
        contact,
        classes,
    })
}

/// `n` frames at hierarchy level `level`; deterministic per `seed`.
pub fn generate_frames(
    humanoid: &Humanoid,
    hierarchy: &MeshHierarchy,
    level: usize,
    n: usize,
    seed: u64,
) -> Result<GeneratedFrames, SynthError> {
    if n == 0 {
        return Err(SynthError::NoFrames);
    }
    let results: Vec<Result<(String, Frame), String>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let staged = staged_frame(humanoid, seed, i).map_err(|e| e.to_string())?;
            let frame = frame_from_staged(&staged, hierarchy, level).map_err(|e| e.to_string())?;
            Ok((staged.pose, frame))
        })
        .collect();
    let mut out = GeneratedFrames {
        dataset: InteractionDataset::new(hierarchy.levels[level].vertex_count(), default_class_names()),
        poses: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((pose, frame)) => {
                out.dataset.push(frame)?;
                out.poses.push(pose);
            }
            Err(e) => out.skipped.push((i, e)),
        }
    }
    Ok(out)
}
