//! Body-centric interaction features: per-vertex contact and semantics,
//! canonical body orientation, and the `.posa` training dataset.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Rotation3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BodyMesh, Bvh, Point, RigidTransform, SceneMesh, Vector};

/// Contact threshold in meters.
pub const CONTACT_THRESHOLD: f64 = 0.05;

/// Semantic class index reserved for "no contact".
pub const VOID_CLASS: u16 = 0;

pub const DEFAULT_CLASS_NAMES: [&str; 8] =
    ["floor", "wall", "chair", "sofa", "bed", "table", "shelf", "other"];

const MAGIC: &[u8; 6] = b"POSA1\n";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum InteractionError {
    #[error("scene mesh is empty")]
    EmptyScene,
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("dataset: {0}")]
    Format(String),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
}

pub fn default_class_names() -> Vec<String> {
    DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Class names for `n` object classes: the built-in list when it matches,
/// otherwise generic names.
pub fn class_names_for(n: usize) -> Vec<String> {
    if n == DEFAULT_CLASS_NAMES.len() {
        default_class_names()
    } else {
        (0..n).map(|i| format!("class{i}")).collect()
    }
}

/// Per-vertex contact and semantic distribution over `num_classes`
/// (object classes plus void at index 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub contact: Vec<f64>,
    /// Row-major `vertex × num_classes`.
    pub semantics: Vec<f64>,
    pub num_classes: usize,
}

impl FeatureMap {
    /// Training-style map from binary contact and hard class ids.
    pub fn from_labels(contact: &[u8], classes: &[u16], num_classes: usize) -> Self {
        let mut semantics = vec![0.0; contact.len() * num_classes];
        for (i, &c) in classes.iter().enumerate() {
            semantics[i * num_classes + c as usize] = 1.0;
        }
        Self {
            contact: contact.iter().map(|&c| c as f64).collect(),
            semantics,
            num_classes,
        }
    }

    pub fn resolution(&self) -> usize {
        self.contact.len()
    }

    pub fn semantic_row(&self, vertex: usize) -> &[f64] {
        &self.semantics[vertex * self.num_classes..(vertex + 1) * self.num_classes]
    }

    /// Most likely class per vertex (ties to the lowest id).
    pub fn argmax_classes(&self) -> Vec<u16> {
        (0..self.resolution())
            .map(|v| {
                let row = self.semantic_row(v);
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best as u16
            })
            .collect()
    }

    /// Contact thresholded at `cut`.
    pub fn binary_contact(&self, cut: f64) -> Vec<u8> {
        self.contact.iter().map(|&c| (c >= cut) as u8).collect()
    }
}

/// Raw per-vertex proximity to the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactRecord {
    pub distances: Vec<f64>,
    /// Scene label (0-based object class) of the closest surface point.
    pub closest_labels: Vec<u16>,
}

/// Distance, contact and semantic features for body vertices against a scene.
pub fn extract_features(
    vertices: &[Point],
    scene: &SceneMesh,
    bvh: &Bvh,
    threshold: f64,
) -> Result<(ContactRecord, FeatureMap), InteractionError> {
    if !(threshold > 0.0) {
        return Err(InteractionError::BadThreshold(threshold));
    }
    if scene.mesh.faces.is_empty() || bvh.face_count() == 0 {
        return Err(InteractionError::EmptyScene);
    }
    let hits: Vec<(f64, u16)> = vertices
        .par_iter()
        .map(|p| {
            let hit = bvh.closest_point(p);
            (hit.distance, scene.face_label(hit.face_index))
        })
        .collect();
    let record = ContactRecord {
        distances: hits.iter().map(|h| h.0).collect(),
        closest_labels: hits.iter().map(|h| h.1).collect(),
    };
    let (contact, classes) = contact_labels(&record, threshold);
    let fmap = FeatureMap::from_labels(&contact, &classes, scene.num_classes() + 1);
    Ok((record, fmap))
}

/// Binary contact and class ids (void when not in contact).
pub fn contact_labels(record: &ContactRecord, threshold: f64) -> (Vec<u8>, Vec<u16>) {
    record
        .distances
        .iter()
        .zip(&record.closest_labels)
        .map(|(&d, &l)| if d <= threshold { (1, l + 1) } else { (0, VOID_CLASS) })
        .unzip()
}

/// Euler angles of `r = Rz(yaw) · Ry(pitch) · Rx(roll)`.
/// At gimbal lock the yaw is set to zero and the residual goes to `roll`.
pub fn decompose_zyx(r: &Rotation3<f64>) -> (f64, f64, f64) {
    let m = r.matrix();
    let sb = (-m[(2, 0)]).clamp(-1.0, 1.0);
    if sb.abs() > 1.0 - 1e-7 {
        let pitch = sb.signum() * std::f64::consts::FRAC_PI_2;
        let roll = (sb.signum() * m[(0, 1)]).atan2(m[(1, 1)]);
        return (roll, pitch, 0.0);
    }
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let pitch = sb.asin();
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    (roll, pitch, yaw)
}

/// Canonical root: only the rotation about the body X axis survives, and the
/// horizontal translation is removed.
pub fn canonical_root(root: &RigidTransform) -> RigidTransform {
    let (roll, _, _) = decompose_zyx(&root.rotation);
    RigidTransform::new(
        Rotation3::from_axis_angle(&Vector::x_axis(), roll),
        Vector::new(0.0, 0.0, root.translation.z),
    )
}

/// Re-expresses the body with its canonical root transform.
pub fn canonicalize(body: &BodyMesh) -> BodyMesh {
    let canon = canonical_root(&body.root);
    let change = canon.compose(&body.root.inverse());
    BodyMesh {
        mesh: change.apply_mesh(&body.mesh),
        skeleton: body.skeleton.clone(),
        root: canon,
    }
}

/// One training pair at feature resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub positions: Vec<[f32; 3]>,
    pub contact: Vec<u8>,
    pub classes: Vec<u16>,
}

impl Frame {
    pub fn feature_map(&self, num_classes: usize) -> FeatureMap {
        FeatureMap::from_labels(&self.contact, &self.classes, num_classes)
    }

    pub fn points(&self) -> Vec<Point> {
        self.positions
            .iter()
            .map(|p| Point::new(p[0] as f64, p[1] as f64, p[2] as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub vertex_count: usize,
    pub class_names: Vec<String>,
    pub frames: Vec<Frame>,
}

impl InteractionDataset {
    pub fn new(vertex_count: usize, class_names: Vec<String>) -> Self {
        Self {
            vertex_count,
            class_names,
            frames: Vec::new(),
        }
    }

    /// Object classes plus void.
    pub fn num_feature_classes(&self) -> usize {
        self.class_names.len() + 1
    }

    pub fn push(&mut self, frame: Frame) -> Result<(), InteractionError> {
        self.check_frame(&frame, self.frames.len())?;
        self.frames.push(frame);
        Ok(())
    }

    fn check_frame(&self, f: &Frame, index: usize) -> Result<(), InteractionError> {
        let v = self.vertex_count;
        if f.positions.len() != v || f.contact.len() != v || f.classes.len() != v {
            return Err(InteractionError::Format(format!(
                "frame {index} has inconsistent vertex count (expected {v})"
            )));
        }
        let nc = self.num_feature_classes() as u16;
        if let Some(&c) = f.classes.iter().find(|&&c| c >= nc) {
            return Err(InteractionError::Format(format!(
                "frame {index} has class {c} but only {nc} feature classes exist"
            )));
        }
        if f.contact.iter().any(|&c| c > 1) {
            return Err(InteractionError::Format(format!("frame {index} has non-binary contact")));
        }
        Ok(())
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), InteractionError> {
        for (i, f) in self.frames.iter().enumerate() {
            self.check_frame(f, i)?;
        }
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.frames.len() as u32)?;
        w.write_u32::<LittleEndian>(self.vertex_count as u32)?;
        w.write_u16::<LittleEndian>(self.class_names.len() as u16)?;
        for f in &self.frames {
            for p in &f.positions {
                for &c in p {
                    w.write_f32::<LittleEndian>(c)?;
                }
            }
            w.write_all(&f.contact)?;
            for &c in &f.classes {
                w.write_u16::<LittleEndian>(c)?;
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self, InteractionError> {
        let truncated = |_| InteractionError::Format("truncated file".into());
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(InteractionError::Format("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != VERSION {
            return Err(InteractionError::Format(format!("unsupported version {version}")));
        }
        let n = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let v = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let no = r.read_u16::<LittleEndian>().map_err(truncated)? as usize;
        let mut ds = Self::new(v, class_names_for(no));
        let mut pos = vec![0f32; v * 3];
        for i in 0..n {
            r.read_f32_into::<LittleEndian>(&mut pos).map_err(truncated)?;
            let mut contact = vec![0u8; v];
            r.read_exact(&mut contact).map_err(truncated)?;
            let mut classes = vec![0u16; v];
            r.read_u16_into::<LittleEndian>(&mut classes).map_err(truncated)?;
            let frame = Frame {
                positions: pos.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
                contact,
                classes,
            };
            ds.check_frame(&frame, i)?;
            ds.frames.push(frame);
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<(), InteractionError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, InteractionError> {
        let bytes = fs::read(path)?;
        Self::read(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{box_mesh, TriMesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn floor_scene() -> (SceneMesh, Bvh) {
        let mesh = TriMesh::new(
            vec![
                Point::new(-5.0, -5.0, 0.0),
                Point::new(5.0, -5.0, 0.0),
                Point::new(5.0, 5.0, 0.0),
                Point::new(-5.0, 5.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let scene = SceneMesh::new(mesh, vec![0; 4], default_class_names()).unwrap();
        let bvh = Bvh::build(&scene.mesh).unwrap();
        (scene, bvh)
    }

    #[test]
    fn threshold_semantics() {
        let (scene, bvh) = floor_scene();
        let pts = [
            Point::new(0.0, 0.0, 0.03),
            Point::new(0.5, 0.5, 0.05),
            Point::new(1.0, 0.0, 0.06),
        ];
        let (rec, f) = extract_features(&pts, &scene, &bvh, CONTACT_THRESHOLD).unwrap();
        assert_eq!(rec.distances[1], 0.05);
        assert_eq!(f.contact, vec![1.0, 1.0, 0.0]);
        assert_eq!(f.argmax_classes(), vec![1, 1, 0]);
        assert_eq!(f.semantic_row(0), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.semantic_row(2)[0], 1.0);
        assert!(matches!(
            extract_features(&pts, &scene, &bvh, 0.0),
            Err(InteractionError::BadThreshold(_))
        ));
    }

    #[test]
    fn closest_label_uses_face_majority() {
        let mesh = box_mesh(Point::new(0.0, 0.0, 0.0), Point::new(1.0, 1.0, 1.0));
        let labels = vec![2, 2, 2, 2, 5, 5, 5, 5];
        let scene = SceneMesh::new(mesh, labels, default_class_names()).unwrap();
        let bvh = Bvh::build(&scene.mesh).unwrap();
        let (rec, f) =
            extract_features(&[Point::new(0.5, 0.5, -0.01), Point::new(0.5, 0.5, 1.02)], &scene, &bvh, 0.05)
                .unwrap();
        assert_eq!(rec.closest_labels, vec![2, 5]);
        assert_eq!(f.argmax_classes(), vec![3, 6]);
    }

    fn rz(a: f64) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector::z_axis(), a)
    }
    fn ry(a: f64) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector::y_axis(), a)
    }
    fn rx(a: f64) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector::x_axis(), a)
    }

    fn some_body() -> BodyMesh {
        BodyMesh::from_mesh(crate::geometry::icosphere(1, 0.3))
    }

    #[test]
    fn yaw_is_removed() {
        let base = some_body();
        let root = RigidTransform::new(rz(std::f64::consts::FRAC_PI_2), Vector::new(2.0, -1.0, 0.4));
        let yawed = BodyMesh {
            mesh: root.apply_mesh(&base.mesh),
            skeleton: None,
            root,
        };
        let canon = canonicalize(&yawed);
        for (a, b) in canon.mesh.vertices.iter().zip(&base.mesh.vertices) {
            assert!((a - (b + Vector::new(0.0, 0.0, 0.4))).norm() < 1e-6);
        }
    }

    #[test]
    fn pitch_is_preserved() {
        let half = std::f64::consts::FRAC_PI_2;
        let root = RigidTransform::new(rz(0.7) * rx(half), Vector::zeros());
        let c = canonical_root(&root);
        assert_eq!(c.rotation.angle(), half);
        assert!((c.rotation.axis().unwrap().into_inner() - Vector::x()).norm() < 1e-12);
    }

    #[test]
    fn decomposition_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (a, b, c) = (
                rng.gen_range(-3.1..3.1),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.1..3.1),
            );
            // oracle: elementwise product of the three elementary matrices
            let (ca, sa, cb, sb, cc, sc) = (f64::cos(a), f64::sin(a), f64::cos(b), f64::sin(b), f64::cos(c), f64::sin(c));
            let m = nalgebra::Matrix3::new(
                cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa,
                sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa,
                -sb, cb * sa, cb * ca,
            );
            let r = Rotation3::from_matrix_unchecked(m);
            assert!((r.matrix() - (rz(c) * ry(b) * rx(a)).matrix()).amax() < 1e-12);
            let (x, y, z) = decompose_zyx(&r);
            assert!((x - a).abs() < 1e-9 && (y - b).abs() < 1e-9 && (z - c).abs() < 1e-9);
            let canon = canonical_root(&RigidTransform::new(r, Vector::zeros()));
            assert!((canon.rotation.matrix() - rx(a).matrix()).amax() < 1e-9);
        }
    }

    #[test]
    fn gimbal_lock_goes_to_x() {
        let r = rz(0.4) * ry(std::f64::consts::FRAC_PI_2) * rx(0.1);
        let (x, y, z) = decompose_zyx(&r);
        assert_eq!(z, 0.0);
        assert!((y - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let back = ry(y) * rx(x);
        assert!((back.matrix() - r.matrix()).amax() < 1e-6);
    }

    fn random_frame(rng: &mut ChaCha8Rng, v: usize, nc: u16) -> Frame {
        let contact: Vec<u8> = (0..v).map(|_| rng.gen_range(0..2)).collect();
        Frame {
            positions: (0..v).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect(),
            classes: contact.iter().map(|&c| if c == 1 { rng.gen_range(1..nc) } else { 0 }).collect(),
            contact,
        }
    }

    #[test]
    fn dataset_round_trips() {
        let empty = InteractionDataset::new(5, default_class_names());
        let mut buf = Vec::new();
        empty.write(&mut buf).unwrap();
        assert_eq!(buf.len(), 6 + 4 + 4 + 4 + 2);
        assert_eq!(InteractionDataset::read(&mut buf.as_slice()).unwrap(), empty);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ds = InteractionDataset::new(7, default_class_names());
        ds.push(random_frame(&mut rng, 7, 9)).unwrap();
        let mut buf = Vec::new();
        ds.write(&mut buf).unwrap();
        let back = InteractionDataset::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back.frames[0].positions.iter().map(|p| p.map(f32::to_bits)).collect::<Vec<_>>(),
            ds.frames[0].positions.iter().map(|p| p.map(f32::to_bits)).collect::<Vec<_>>());
        assert_eq!(back, ds);

        let mut ds = InteractionDataset::new(20, default_class_names());
        for _ in 0..1000 {
            ds.push(random_frame(&mut rng, 20, 9)).unwrap();
        }
        let mut buf = Vec::new();
        ds.write(&mut buf).unwrap();
        assert_eq!(InteractionDataset::read(&mut buf.as_slice()).unwrap(), ds);

        buf.truncate(buf.len() - 1);
        assert!(InteractionDataset::read(&mut buf.as_slice()).is_err());
        buf[0] = b'X';
        assert!(InteractionDataset::read(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn inconsistent_frames_rejected() {
        let mut ds = InteractionDataset::new(3, default_class_names());
        let bad = Frame {
            positions: vec![[0.0; 3]; 2],
            contact: vec![0; 2],
            classes: vec![0; 2],
        };
        assert!(ds.push(bad).is_err());
    }
}
