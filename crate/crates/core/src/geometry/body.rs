//! Articulated body: joint tree, linear blend skinning and the posed mesh.

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use super::mesh::{Point, TriMesh, Vector};
use super::transform::{axis_angle, RigidTransform};
use super::GeometryError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub rest_position: Point,
}

/// Joint tree with rest-pose geometry, per-joint local rotations
/// (axis-angle) and sparse skinning weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
    pub rest_vertices: Vec<Point>,
    /// Per vertex: `(joint, weight)` pairs summing to one.
    pub weights: Vec<Vec<(u16, f64)>>,
    pub pose: Vec<Vector>,
}

/// World frame of one joint after forward kinematics.
#[derive(Debug, Clone, Copy)]
pub struct JointFrame {
    pub rotation: Rotation3<f64>,
    pub position: Point,
}

impl Skeleton {
    pub fn new(
        joints: Vec<Joint>,
        rest_vertices: Vec<Point>,
        weights: Vec<Vec<(u16, f64)>>,
    ) -> Result<Self, GeometryError> {
        for (j, joint) in joints.iter().enumerate() {
            if let Some(p) = joint.parent {
                if p >= j {
                    return Err(GeometryError::Skeleton(format!(
                        "joint {j} has parent {p}; parents must precede children"
                    )));
                }
            }
        }
        if weights.len() != rest_vertices.len() {
            return Err(GeometryError::AttributeLength {
                attribute: "skinning weights",
                expected: rest_vertices.len(),
                found: weights.len(),
            });
        }
        for (v, ws) in weights.iter().enumerate() {
            let sum: f64 = ws.iter().map(|w| w.1).sum();
            if (sum - 1.0).abs() > 1e-6 || ws.iter().any(|w| w.0 as usize >= joints.len()) {
                return Err(GeometryError::Skeleton(format!(
                    "vertex {v}: skinning weights invalid (sum {sum})"
                )));
            }
        }
        let pose = vec![Vector::zeros(); joints.len()];
        Ok(Self {
            joints,
            rest_vertices,
            weights,
            pose,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Forward kinematics for `pose` (local axis-angle per joint).
    pub fn forward(&self, pose: &[Vector]) -> Vec<JointFrame> {
        let mut frames: Vec<JointFrame> = Vec::with_capacity(self.joints.len());
        for (j, joint) in self.joints.iter().enumerate() {
            let local = axis_angle(&pose[j]);
            let frame = match joint.parent {
                None => JointFrame {
                    rotation: local,
                    position: joint.rest_position,
                },
                Some(p) => {
                    let pf = frames[p];
                    JointFrame {
                        rotation: pf.rotation * local,
                        position: pf.position
                            + pf.rotation * (joint.rest_position - self.joints[p].rest_position),
                    }
                }
            };
            frames.push(frame);
        }
        frames
    }

    /// Per-joint transformed copy of one rest vertex: `R_j (v - rest_j) + p_j`.
    pub fn joint_image(&self, frames: &[JointFrame], joint: usize, vertex: usize) -> Point {
        let f = &frames[joint];
        f.position + f.rotation * (self.rest_vertices[vertex] - self.joints[joint].rest_position)
    }

    /// Linear blend skinning in the body frame (before the root transform).
    pub fn skin(&self, frames: &[JointFrame]) -> Vec<Point> {
        (0..self.rest_vertices.len())
            .map(|v| {
                let mut acc = Vector::zeros();
                for &(j, w) in &self.weights[v] {
                    acc += self.joint_image(frames, j as usize, v).coords * w;
                }
                Point::from(acc)
            })
            .collect()
    }

    /// Whether `joint` lies in the subtree rooted at `ancestor` (inclusive).
    pub fn is_descendant(&self, joint: usize, ancestor: usize) -> bool {
        let mut cur = Some(joint);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.joints[c].parent;
        }
        false
    }
}

/// A posed body: mesh vertices are in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyMesh {
    pub mesh: TriMesh,
    pub skeleton: Option<Skeleton>,
    pub root: RigidTransform,
}

impl BodyMesh {
    /// Poses `skeleton` with its current `pose` and places it with `root`.
    pub fn from_skeleton(
        skeleton: Skeleton,
        faces: Vec<[u32; 3]>,
        root: RigidTransform,
    ) -> Result<Self, GeometryError> {
        let verts = posed_vertices(&skeleton, &skeleton.pose, &root);
        let mesh = TriMesh::new(verts, faces)?;
        Ok(Self {
            mesh,
            skeleton: Some(skeleton),
            root,
        })
    }

    /// A body known only by its vertices (e.g. loaded from a file).
    pub fn from_mesh(mesh: TriMesh) -> Self {
        Self {
            mesh,
            skeleton: None,
            root: RigidTransform::identity(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    /// Re-poses with per-joint perturbations added to the stored pose.
    pub fn with_pose_delta(&self, delta: &[Vector]) -> Option<Vec<Point>> {
        let sk = self.skeleton.as_ref()?;
        let pose: Vec<Vector> = sk.pose.iter().zip(delta).map(|(p, d)| p + d).collect();
        Some(posed_vertices(sk, &pose, &self.root))
    }
}

pub fn posed_vertices(skeleton: &Skeleton, pose: &[Vector], root: &RigidTransform) -> Vec<Point> {
    let frames = skeleton.forward(pose);
    skeleton
        .skin(&frames)
        .into_iter()
        .map(|v| root.apply(&v))
        .collect()
}

/// Serializable form of a body's skeleton and root transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonFile {
    pub skeleton: Skeleton,
    /// Root rotation as an axis-angle vector.
    pub root_rotation: Vector,
    pub root_translation: Vector,
}

impl SkeletonFile {
    pub fn from_body(body: &BodyMesh) -> Option<Self> {
        Some(Self {
            skeleton: body.skeleton.clone()?,
            root_rotation: body.root.rotation.scaled_axis(),
            root_translation: body.root.translation,
        })
    }

    pub fn root(&self) -> RigidTransform {
        RigidTransform::new(axis_angle(&self.root_rotation), self.root_translation)
    }
}
