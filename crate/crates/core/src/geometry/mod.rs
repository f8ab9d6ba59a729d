//! Triangle meshes, rigid transforms, mesh IO and closest-point queries.

mod body;
mod bvh;
mod io;
mod mesh;
mod primitives;
mod transform;

pub use body::{posed_vertices, BodyMesh, Joint, JointFrame, Skeleton, SkeletonFile};
pub use bvh::{closest_barycentric, closest_point_brute_force, Bvh, ClosestPointResult};
pub use io::{
    load_labeled_mesh, load_mesh, parse_obj, save_obj, save_ply, write_obj, write_ply, LoadedMesh,
    MeshFormat,
};
pub use primitives::{box_mesh, icosphere};
pub use mesh::{Point, SceneMesh, TriMesh, Vector};
pub use transform::{apply_rigid, axis_angle, up, wrap_angle, yaw_rotation, RigidTransform, UpAxis};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("face {face} references vertex {index} but the mesh has {vertex_count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("face {face} is degenerate (repeated vertex index)")]
    DegenerateFace { face: usize },
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("{attribute}: expected {expected} entries, found {found}")]
    AttributeLength {
        attribute: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("vertex {vertex} has label {label} but only {classes} classes exist")]
    LabelOutOfRange { vertex: usize, label: u16, classes: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot infer mesh format from `{0}`")]
    UnknownFormat(String),
    #[error("skeleton: {0}")]
    Skeleton(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

/// Builds a closest-point structure; alias kept for the operation name.
pub fn build_bvh(mesh: &TriMesh) -> Result<Bvh, GeometryError> {
    Bvh::build(mesh)
}
