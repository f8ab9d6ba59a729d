//! Fixed-topology humanoid: an icosphere whose caps are pulled out into
//! limbs, skinned to an 11-joint skeleton, plus a small pose library.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::geometry::{axis_angle, icosphere, BodyMesh, Joint, Point, RigidTransform, Skeleton, TriMesh, Vector};
use crate::meshnet::{build_hierarchy, MeshHierarchy};
use crate::rng::rng_for;

/// Subdivision level of the template sphere (2562 vertices).
pub const BODY_SUBDIVISIONS: u32 = 4;

pub const JOINT_NAMES: [&str; 11] = [
    "pelvis",
    "spine",
    "head",
    "l_shoulder",
    "l_elbow",
    "r_shoulder",
    "r_elbow",
    "l_hip",
    "l_knee",
    "r_hip",
    "r_knee",
];

const PARENTS: [Option<usize>; 11] = [
    None,
    Some(0),
    Some(1),
    Some(1),
    Some(3),
    Some(1),
    Some(5),
    Some(0),
    Some(7),
    Some(0),
    Some(9),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BodyPart {
    Torso,
    Head,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

/// Vertex sets used by masks and evaluations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BodyRegions {
    pub left_foot: Vec<bool>,
    pub right_foot: Vec<bool>,
    pub left_hand: Vec<bool>,
    pub right_hand: Vec<bool>,
    pub back: Vec<bool>,
    pub buttocks: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Humanoid {
    /// Unit sphere sharing the body's topology.
    pub template: TriMesh,
    pub skeleton: Skeleton,
    pub parts: Vec<BodyPart>,
    pub regions: BodyRegions,
}

struct Limb {
    part: BodyPart,
    anchor: Vector,
    cap: f64,
    points: Vec<Point>,
    radii: Vec<f64>,
    /// Joint driving each segment.
    joints: Vec<u16>,
    parent: u16,
}

const TIP_START: f64 = 0.85;
const TORSO_CENTER: [f64; 3] = [0.0, 0.0, 1.15];
const TORSO_AXES: [f64; 3] = [0.17, 0.11, 0.33];

fn p(x: f64, y: f64, z: f64) -> Point {
    Point::new(x, y, z)
}

fn joint_positions() -> [Point; 11] {
    [
        p(0.0, 0.0, 0.95),
        p(0.0, 0.0, 1.2),
        p(0.0, 0.0, 1.47),
        p(-0.2, 0.0, 1.42),
        p(-0.296, 0.0, 1.157),
        p(0.2, 0.0, 1.42),
        p(0.296, 0.0, 1.157),
        p(-0.1, 0.0, 0.92),
        p(-0.1, 0.0, 0.5),
        p(0.1, 0.0, 0.92),
        p(0.1, 0.0, 0.5),
    ]
}

fn limbs() -> Vec<Limb> {
    let j = joint_positions();
    let arm = |side: f64, part, sh: u16, el: u16| Limb {
        part,
        anchor: Vector::new(0.94 * side, 0.0, 0.34).normalize(),
        cap: 30f64.to_radians(),
        points: vec![
            j[sh as usize],
            j[el as usize],
            p(0.36 * side, 0.0, 0.98),
            p(0.39 * side, 0.0, 0.9),
        ],
        radii: vec![0.055, 0.045, 0.035, 0.035],
        joints: vec![sh, el, el],
        parent: 1,
    };
    let leg = |side: f64, part, hip: u16, knee: u16| Limb {
        part,
        anchor: Vector::new(0.5 * side, 0.0, -0.866).normalize(),
        cap: 28f64.to_radians(),
        points: vec![
            j[hip as usize],
            j[knee as usize],
            p(0.1 * side, -0.03, 0.045),
            p(0.1 * side, 0.15, 0.04),
        ],
        radii: vec![0.08, 0.055, 0.045, 0.04],
        joints: vec![hip, knee, knee],
        parent: 0,
    };
    vec![
        Limb {
            part: BodyPart::Head,
            anchor: Vector::z(),
            cap: 30f64.to_radians(),
            points: vec![p(0.0, 0.0, 1.47), p(0.0, 0.0, 1.6)],
            radii: vec![0.06, 0.1],
            joints: vec![2],
            parent: 1,
        },
        arm(-1.0, BodyPart::LeftArm, 3, 4),
        arm(1.0, BodyPart::RightArm, 5, 6),
        leg(-1.0, BodyPart::LeftLeg, 7, 8),
        leg(1.0, BodyPart::RightLeg, 9, 10),
    ]
}

fn perpendicular_frame(dir: &Vector) -> (Vector, Vector) {
    let reference = if dir.y.abs() < 0.9 { Vector::y() } else { Vector::x() };
    let n1 = (reference - dir * reference.dot(dir)).normalize();
    (n1, dir.cross(&n1))
}

/// Minimal rotation of a frame from one segment direction to the next.
fn transport(frame: (Vector, Vector), from: &Vector, to: &Vector) -> (Vector, Vector) {
    let rot = nalgebra::Rotation3::rotation_between(from, to).unwrap_or_else(nalgebra::Rotation3::identity);
    (rot * frame.0, rot * frame.1)
}

fn blend(a: u16, b: u16, t: f64) -> Vec<(u16, f64)> {
    let t = t.clamp(0.0, 1.0);
    if a == b || t >= 1.0 {
        vec![(b, 1.0)]
    } else if t <= 0.0 {
        vec![(a, 1.0)]
    } else {
        vec![(a, 1.0 - t), (b, t)]
    }
}

struct Placed {
    pos: Point,
    part: BodyPart,
    segment: usize,
    weights: Vec<(u16, f64)>,
}

fn place_on_limb(limb: &Limb, d: &Vector) -> Option<Placed> {
    let phi = d.dot(&limb.anchor).clamp(-1.0, 1.0).acos();
    if phi > limb.cap {
        return None;
    }
    // equal-area parameter, so vertices spread evenly along the limb
    let s = 1.0 - (1.0 - phi.cos()) / (1.0 - limb.cap.cos());
    let (e1, e2) = perpendicular_frame(&limb.anchor);
    let psi = d.dot(&e2).atan2(d.dot(&e1));
    let dirs: Vec<Vector> = limb.points.windows(2).map(|w| (w[1] - w[0]).normalize()).collect();
    let lens: Vec<f64> = limb.points.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let mut frames = vec![perpendicular_frame(&dirs[0])];
    for k in 1..dirs.len() {
        let f = transport(frames[k - 1], &dirs[k - 1], &dirs[k]);
        frames.push(f);
    }
    let total: f64 = lens.iter().sum();
    let last = dirs.len() - 1;
    let (pos, seg, ell) = if s < TIP_START {
        let ell = s / TIP_START * total;
        let mut acc = 0.0;
        let mut seg = last;
        for (k, &l) in lens.iter().enumerate() {
            if ell <= acc + l || k == last {
                seg = k;
                break;
            }
            acc += l;
        }
        let t = ((ell - acc) / lens[seg]).clamp(0.0, 1.0);
        let center = limb.points[seg] + (limb.points[seg + 1] - limb.points[seg]) * t;
        let r = limb.radii[seg] + (limb.radii[seg + 1] - limb.radii[seg]) * t;
        let (n1, n2) = frames[seg];
        (center + (n1 * psi.cos() + n2 * psi.sin()) * r, seg, ell)
    } else {
        let beta = (s - TIP_START) / (1.0 - TIP_START) * FRAC_PI_2;
        let (n1, n2) = frames[last];
        let r = limb.radii[last + 1];
        let ring = n1 * psi.cos() + n2 * psi.sin();
        (limb.points[last + 1] + (ring * beta.cos() + dirs[last] * beta.sin()) * r, last, total)
    };
    let own = limb.joints[seg];
    let mut weights = if seg == 0 && limb.joints.len() > 1 {
        let knee = lens[0];
        blend(limb.joints[0], limb.joints[1], (ell - (knee - 0.05)) / 0.1)
    } else if seg == 1 {
        blend(limb.joints[0], own, (ell - (lens[0] - 0.05)) / 0.1)
    } else {
        vec![(own, 1.0)]
    };
    if ell < 0.08 {
        let t = 0.5 + 0.5 * ell / 0.08;
        weights = blend(limb.parent, weights[0].0, t);
    }
    Some(Placed {
        pos,
        part: limb.part,
        segment: seg,
        weights,
    })
}

fn place_on_torso(d: &Vector) -> Placed {
    let pos = p(
        TORSO_CENTER[0] + TORSO_AXES[0] * d.x,
        TORSO_CENTER[1] + TORSO_AXES[1] * d.y,
        TORSO_CENTER[2] + TORSO_AXES[2] * d.z,
    );
    Placed {
        pos,
        part: BodyPart::Torso,
        segment: 0,
        weights: blend(0, 1, (pos.z - 1.05) / 0.25),
    }
}

impl Humanoid {
    /// The default 2562-vertex humanoid in its rest pose (feet on z = 0,
    /// facing +y, arms slightly lowered).
    pub fn new() -> Self {
        Self::with_subdivisions(BODY_SUBDIVISIONS)
    }

    pub fn with_subdivisions(subdivisions: u32) -> Self {
        let template = icosphere(subdivisions, 1.0);
        let limbs = limbs();
        let placed: Vec<Placed> = template
            .vertices
            .iter()
            .map(|v| {
                let d = v.coords;
                limbs
                    .iter()
                    .find_map(|l| place_on_limb(l, &d))
                    .unwrap_or_else(|| place_on_torso(&d))
            })
            .collect();
        let floor = placed.iter().map(|q| q.pos.z).fold(f64::INFINITY, f64::min);
        let jp = joint_positions();
        let joints = JOINT_NAMES
            .iter()
            .zip(PARENTS)
            .zip(jp)
            .map(|((n, parent), pos)| Joint {
                name: n.to_string(),
                parent,
                rest_position: pos - Vector::z() * floor,
            })
            .collect();
        let rest: Vec<Point> = placed.iter().map(|q| q.pos - Vector::z() * floor).collect();
        let weights = placed.iter().map(|q| q.weights.clone()).collect();
        let skeleton = Skeleton::new(joints, rest.clone(), weights).expect("humanoid skeleton is valid");
        let n = rest.len();
        let mut regions = BodyRegions {
            left_foot: vec![false; n],
            right_foot: vec![false; n],
            left_hand: vec![false; n],
            right_hand: vec![false; n],
            back: vec![false; n],
            buttocks: vec![false; n],
        };
        for (i, q) in placed.iter().enumerate() {
            let r = rest[i];
            match q.part {
                BodyPart::LeftLeg => regions.left_foot[i] = q.segment == 2,
                BodyPart::RightLeg => regions.right_foot[i] = q.segment == 2,
                BodyPart::LeftArm => regions.left_hand[i] = q.segment == 2,
                BodyPart::RightArm => regions.right_hand[i] = q.segment == 2,
                BodyPart::Torso => {
                    regions.back[i] = r.y < -0.05 && r.z > 0.98 && r.z < 1.42;
                    regions.buttocks[i] = r.y < 0.0 && r.z <= 0.98;
                }
                BodyPart::Head => {}
            }
        }
        Self {
            template,
            skeleton,
            parts: placed.iter().map(|q| q.part).collect(),
            regions,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.template.vertex_count()
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.template.faces
    }

    /// Pooling hierarchy built on the template sphere, where the quadric
    /// simplification is well conditioned; connectivity is the body's.
    pub fn hierarchy(&self, levels: usize) -> MeshHierarchy {
        build_hierarchy(&self.template, 4, levels).expect("template sphere simplifies")
    }

    /// Rest-pose body mesh.
    pub fn rest_mesh(&self) -> TriMesh {
        TriMesh::new(self.skeleton.rest_vertices.clone(), self.template.faces.clone()).expect("valid faces")
    }

    /// Poses the skeleton, rotates by `root_rotation` and lifts the result so
    /// its lowest vertex sits on z = 0.
    pub fn pose(&self, pose: &[Vector], root_rotation: &Vector) -> BodyMesh {
        let mut sk = self.skeleton.clone();
        sk.pose = pose.to_vec();
        let rot = axis_angle(root_rotation);
        let frames = sk.forward(pose);
        let lowest = sk
            .skin(&frames)
            .iter()
            .map(|v| (rot * v).z)
            .fold(f64::INFINITY, f64::min);
        let root = RigidTransform::new(rot, Vector::new(0.0, 0.0, -lowest));
        BodyMesh::from_skeleton(sk, self.template.faces.clone(), root).expect("valid faces")
    }
}

impl Default for Humanoid {
    fn default() -> Self {
        Self::new()
    }
}

/// What a pose rests on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Support {
    Floor,
    Seat,
    Bed,
    Shelf,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub name: String,
    /// Local axis-angle per joint.
    pub joints: Vec<Vector>,
    pub root_rotation: Vector,
    /// Per-joint bound on the norm of the random perturbation.
    pub jitter: Vec<f64>,
    pub support: Support,
}

pub const POSE_NAMES: [&str; 5] = ["stand", "sit", "lie", "reach", "touch-wall"];

fn jitter_profile(arms: f64, head: f64, spine: f64, legs: f64) -> Vec<f64> {
    vec![0.0, spine, head, arms, arms, arms, arms, legs, legs, legs, legs]
}

/// The parametric pose library.
pub fn pose_library() -> Vec<PoseSpec> {
    let zero = || vec![Vector::zeros(); 11];
    let stand = PoseSpec {
        name: "stand".into(),
        joints: zero(),
        root_rotation: Vector::zeros(),
        jitter: jitter_profile(0.15, 0.1, 0.05, 0.02),
        support: Support::Floor,
    };
    let mut sit = zero();
    sit[7] = Vector::new(FRAC_PI_2, 0.0, 0.0);
    sit[9] = sit[7];
    sit[8] = Vector::new(-FRAC_PI_2, 0.0, 0.0);
    sit[10] = sit[8];
    let mut reach = zero();
    reach[5] = Vector::new(0.9, 0.0, 0.0);
    let mut touch = zero();
    touch[5] = Vector::new(1.45, 0.0, 0.0);
    vec![
        stand,
        PoseSpec {
            name: "sit".into(),
            joints: sit,
            root_rotation: Vector::zeros(),
            jitter: jitter_profile(0.15, 0.1, 0.03, 0.04),
            support: Support::Seat,
        },
        PoseSpec {
            name: "lie".into(),
            joints: zero(),
            root_rotation: Vector::new(FRAC_PI_2, 0.0, 0.0),
            jitter: jitter_profile(0.1, 0.1, 0.03, 0.03),
            support: Support::Bed,
        },
        PoseSpec {
            name: "reach".into(),
            joints: reach,
            root_rotation: Vector::zeros(),
            jitter: {
                let mut j = jitter_profile(0.15, 0.1, 0.03, 0.02);
                j[5] = 0.05;
                j[6] = 0.05;
                j
            },
            support: Support::Shelf,
        },
        PoseSpec {
            name: "touch-wall".into(),
            joints: touch,
            root_rotation: Vector::zeros(),
            jitter: {
                let mut j = jitter_profile(0.15, 0.1, 0.03, 0.02);
                j[5] = 0.05;
                j[6] = 0.05;
                j
            },
            support: Support::Wall,
        },
    ]
}

pub fn pose_spec(name: &str) -> Result<PoseSpec, SynthError> {
    pose_library()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| SynthError::UnknownPose(name.to_string()))
}

impl PoseSpec {
    /// Joint angles with a random perturbation of norm at most `jitter[j]`.
    pub fn jittered(&self, rng: &mut impl Rng) -> Vec<Vector> {
        self.joints
            .iter()
            .zip(&self.jitter)
            .map(|(base, &b)| {
                if b <= 0.0 {
                    return *base;
                }
                let dir = loop {
                    let v = Vector::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let n = v.norm();
                    if n > 1e-3 && n <= 1.0 {
                        break v / n;
                    }
                };
                base + dir * (b * rng.gen_range(0.0..1.0))
            })
            .collect()
    }
}

/// A library pose, optionally jittered with `jitter_seed`, resting on z = 0.
pub fn generate_body(humanoid: &Humanoid, pose: &str, jitter_seed: Option<u64>) -> Result<BodyMesh, SynthError> {
    let spec = pose_spec(pose)?;
    let joints = match jitter_seed {
        Some(s) => spec.jittered(&mut rng_for(s, "pose-jitter")),
        None => spec.joints.clone(),
    };
    Ok(humanoid.pose(&joints, &spec.root_rotation))
}
