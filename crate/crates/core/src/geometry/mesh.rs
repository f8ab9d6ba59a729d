//! Triangle mesh data model.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

pub type Point = Point3<f64>;
pub type Vector = Vector3<f64>;

/// An indexed triangle mesh. Coordinates are meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vector>>,
}

impl TriMesh {
    /// Builds a mesh, rejecting out-of-range and degenerate faces.
    pub fn new(vertices: Vec<Point>, faces: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        validate_faces(vertices.len(), &faces)?;
        Ok(Self {
            vertices,
            faces,
            normals: None,
        })
    }

    pub fn with_normals(mut self, normals: Vec<Vector>) -> Result<Self, GeometryError> {
        if normals.len() != self.vertices.len() {
            return Err(GeometryError::AttributeLength {
                attribute: "normals",
                expected: self.vertices.len(),
                found: normals.len(),
            });
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, face: usize) -> [Point; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Axis-aligned bounds `(min, max)`; `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Point, Point)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    /// Area-weighted face normals accumulated per vertex, normalized.
    pub fn vertex_normals(&self) -> Vec<Vector> {
        let mut acc = vec![Vector::zeros(); self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = self.triangle_of(f);
            let n = (b - a).cross(&(c - a));
            for &i in f {
                acc[i as usize] += n;
            }
        }
        acc.into_iter()
            .map(|n| n.try_normalize(1e-300).unwrap_or_else(Vector::zeros))
            .collect()
    }

    /// Appends `other`, offsetting its indices.
    pub fn append(&mut self, other: &TriMesh) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]));
        self.normals = None;
    }

    /// Vertex adjacency lists (sorted, deduplicated).
    pub fn neighbors(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                adj[a as usize].push(b);
                adj[b as usize].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    fn triangle_of(&self, f: &[u32; 3]) -> [Point; 3] {
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }
}

pub(crate) fn validate_faces(vertex_count: usize, faces: &[[u32; 3]]) -> Result<(), GeometryError> {
    for (i, f) in faces.iter().enumerate() {
        if let Some(&bad) = f.iter().find(|&&v| v as usize >= vertex_count) {
            return Err(GeometryError::FaceIndexOutOfRange {
                face: i,
                index: bad as usize,
                vertex_count,
            });
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(GeometryError::DegenerateFace { face: i });
        }
    }
    Ok(())
}

/// A scene mesh with a semantic class per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMesh {
    pub mesh: TriMesh,
    pub labels: Vec<u16>,
    pub class_names: Vec<String>,
}

impl SceneMesh {
    pub fn new(
        mesh: TriMesh,
        labels: Vec<u16>,
        class_names: Vec<String>,
    ) -> Result<Self, GeometryError> {
        if labels.len() != mesh.vertex_count() {
            return Err(GeometryError::AttributeLength {
                attribute: "labels",
                expected: mesh.vertex_count(),
                found: labels.len(),
            });
        }
        if let Some((vertex, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= class_names.len())
        {
            return Err(GeometryError::LabelOutOfRange {
                vertex,
                label,
                classes: class_names.len(),
            });
        }
        Ok(Self {
            mesh,
            labels,
            class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Majority label of a face's three vertices; ties resolve to the lowest class id.
    pub fn face_label(&self, face: usize) -> u16 {
        let f = self.mesh.faces[face];
        let mut l = [
            self.labels[f[0] as usize],
            self.labels[f[1] as usize],
            self.labels[f[2] as usize],
        ];
        l.sort_unstable();
        // sorted: a pair in the top two is the majority, otherwise l[0] is
        // either the majority or the lowest of three distinct labels
        if l[1] == l[2] {
            l[1]
        } else {
            l[0]
        }
    }
}
