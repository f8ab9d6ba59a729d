//! Rigid transforms. Internally the up axis is always +Z; [`UpAxis`] converts
//! at IO boundaries.

use nalgebra::{Rotation3, Unit};
use serde::{Deserialize, Serialize};

use super::mesh::{Point, TriMesh, Vector};

/// A rotation followed by a translation: `v' = R v + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Rotation by `yaw` radians about the up axis, then translation.
    pub fn from_yaw(yaw: f64, translation: Vector) -> Self {
        Self::new(yaw_rotation(yaw), translation)
    }

    pub fn apply(&self, p: &Point) -> Point {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector) -> Vector {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn apply_mesh(&self, mesh: &TriMesh) -> TriMesh {
        TriMesh {
            vertices: mesh.vertices.iter().map(|v| self.apply(v)).collect(),
            faces: mesh.faces.clone(),
            normals: mesh
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| self.rotation * n).collect()),
        }
    }
}

pub fn up() -> Vector {
    Vector::z()
}

pub fn yaw_rotation(yaw: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector::z_axis(), yaw)
}

/// `v' = R_up(yaw) v + translation` for every vertex; faces unchanged.
pub fn apply_rigid(mesh: &TriMesh, translation: Vector, yaw: f64) -> TriMesh {
    RigidTransform::from_yaw(yaw, translation).apply_mesh(mesh)
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Rotation from an axis-angle vector (angle = norm).
pub fn axis_angle(v: &Vector) -> Rotation3<f64> {
    let angle = v.norm();
    if angle < 1e-300 {
        return Rotation3::identity();
    }
    Rotation3::from_axis_angle(&Unit::new_unchecked(v / angle), angle)
}

/// Up-axis convention of files read or written by the tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpAxis {
    Y,
    #[default]
    Z,
}

impl std::str::FromStr for UpAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "y" | "+y" => Ok(UpAxis::Y),
            "z" | "+z" => Ok(UpAxis::Z),
            other => Err(format!("unsupported up axis `{other}` (expected y or z)")),
        }
    }
}

impl UpAxis {
    /// Transform taking file coordinates into the internal Z-up frame.
    pub fn to_internal(self) -> RigidTransform {
        match self {
            UpAxis::Z => RigidTransform::identity(),
            UpAxis::Y => RigidTransform::new(
                Rotation3::from_axis_angle(&Vector::x_axis(), std::f64::consts::FRAC_PI_2),
                Vector::zeros(),
            ),
        }
    }

    pub fn to_file(self) -> RigidTransform {
        self.to_internal().inverse()
    }
}
