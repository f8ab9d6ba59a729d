//! Dense signed distance field over a scene mesh.
//!
//! Values live at voxel centroids `origin + (i + 0.5) * cell_size` and are
//! positive in free space, negative inside closed geometry. Magnitudes are
//! exact closest-point distances; signs come from ray-crossing parity along
//! the three axes, with an angle-weighted pseudo-normal test where the axes
//! disagree (open or holed meshes).

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Bvh, GeometryError, Point, TriMesh, Vector};

const MAGIC: &[u8; 4] = b"SDF1";

/// Default cap on the number of voxels (512³).
pub const DEFAULT_MAX_VOXELS: usize = 512 * 512 * 512;

#[derive(Debug, Error)]
pub enum SdfError {
    #[error("resolution {0} is below the minimum of 8 voxels per axis")]
    ResolutionTooSmall(usize),
    #[error("grid of {dims:?} voxels exceeds the cap of {cap}")]
    TooManyVoxels { dims: [usize; 3], cap: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("sdf file: {0}")]
    Format(String),
    #[error("sdf io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy)]
pub struct SdfOptions {
    /// Voxel count along the longest axis of the padded bounding box.
    pub resolution: usize,
    /// Free space added on every side of the bounding box, in meters.
    pub padding: f64,
    pub max_voxels: usize,
}

impl SdfOptions {
    /// Resolution with the default padding of 10% of the bounding-box diagonal.
    pub fn for_mesh(mesh: &TriMesh, resolution: usize) -> Self {
        Self {
            resolution,
            padding: default_padding(mesh, 0.1),
            max_voxels: DEFAULT_MAX_VOXELS,
        }
    }
}

/// `fraction` of the mesh bounding-box diagonal.
pub fn default_padding(mesh: &TriMesh, fraction: f64) -> f64 {
    mesh.bounds()
        .map(|(lo, hi)| (hi - lo).norm() * fraction)
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    /// Minimum corner of the voxel grid.
    pub origin: Point,
    pub cell_size: f64,
    pub dims: [usize; 3],
    /// Signed distances, x fastest.
    pub values: Vec<f32>,
}

/// Result of a sample: value plus whether the query was outside the
/// interpolation domain and got clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub value: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfGradient {
    pub gradient: Vector,
    pub value: f64,
    pub clamped: bool,
}

pub fn build_sdf(mesh: &TriMesh, options: &SdfOptions) -> Result<SdfGrid, SdfError> {
    if options.resolution < 8 {
        return Err(SdfError::ResolutionTooSmall(options.resolution));
    }
    let bvh = Bvh::build(mesh)?;
    let (lo, hi) = mesh.bounds().ok_or(GeometryError::EmptyMesh)?;
    let pad = Vector::repeat(options.padding.max(0.0));
    let (lo, hi) = (lo - pad, hi + pad);
    let extent = hi - lo;
    // f32-representable origin/cell so the file format round-trips exactly
    let cell = ((extent.max() / options.resolution as f64) as f32) as f64;
    let dims = [0, 1, 2].map(|k| ((extent[k] / cell).ceil() as usize).max(2));
    let total = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .unwrap_or(usize::MAX);
    if total > options.max_voxels {
        return Err(SdfError::TooManyVoxels {
            dims,
            cap: options.max_voxels,
        });
    }
    let center = Point::from((lo.coords + hi.coords) * 0.5);
    let half = Vector::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * (cell * 0.5);
    let origin = (center - half).map(|c| (c as f32) as f64);

    let grid_geom = GridGeom { origin, cell, dims };
    let parity = ParityField::compute(&bvh, &grid_geom);
    let normals = PseudoNormals::new(mesh);

    let slab = dims[0] * dims[1];
    let mut values = vec![0f32; total];
    values
        .par_chunks_mut(slab)
        .enumerate()
        .for_each(|(k, chunk)| {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = grid_geom.centroid(i, j, k);
                    let hit = bvh.closest_point(&p);
                    let votes = parity.inside_votes(i, j, k);
                    let inside = match votes {
                        0 => false,
                        3 => true,
                        _ => match normals.side(mesh, &p, &hit) {
                            Some(outside) => !outside,
                            None => votes >= 2,
                        },
                    };
                    let d = if inside { -hit.distance } else { hit.distance };
                    chunk[j * dims[0] + i] = d as f32;
                }
            }
        });
    Ok(SdfGrid {
        origin,
        cell_size: cell,
        dims,
        values,
    })
}

#[derive(Debug, Clone, Copy)]
struct GridGeom {
    origin: Point,
    cell: f64,
    dims: [usize; 3],
}

impl GridGeom {
    fn centroid(&self, i: usize, j: usize, k: usize) -> Point {
        self.origin + Vector::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.cell
    }

    fn coord(&self, axis: usize, idx: usize) -> f64 {
        self.origin[axis] + (idx as f64 + 0.5) * self.cell
    }
}

/// Per-voxel inside/outside parity bits for rays cast toward +x, +y, +z.
struct ParityField {
    dims: [usize; 3],
    bits: Vec<u8>,
}

impl ParityField {
    fn compute(bvh: &Bvh, g: &GridGeom) -> Self {
        let dims = g.dims;
        let mut bits = vec![0u8; dims[0] * dims[1] * dims[2]];
        for axis in 0..3 {
            let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
            let lines: Vec<(usize, usize)> = (0..dims[a2])
                .flat_map(|v| (0..dims[a1]).map(move |u| (u, v)))
                .collect();
            let per_line: Vec<Vec<bool>> = lines
                .par_iter()
                .map(|&(ui, vi)| {
                    let u = g.coord(a1, ui);
                    let v = g.coord(a2, vi);
                    let mut crossings = Vec::new();
                    bvh.for_each_on_axis_line(axis, u, v, |f| {
                        let [a, b, c] = bvh.faces()[f];
                        let tri = [
                            bvh.vertices()[a as usize],
                            bvh.vertices()[b as usize],
                            bvh.vertices()[c as usize],
                        ];
                        if let Some(t) = axis_line_crossing(&tri, axis, u, v) {
                            crossings.push(t);
                        }
                    });
                    crossings.sort_by(f64::total_cmp);
                    (0..dims[axis])
                        .map(|s| {
                            let pos = g.coord(axis, s);
                            let after = crossings.len() - crossings.partition_point(|&t| t <= pos);
                            after % 2 == 1
                        })
                        .collect()
                })
                .collect();
            for (&(ui, vi), inside) in lines.iter().zip(&per_line) {
                for (s, &odd) in inside.iter().enumerate() {
                    if odd {
                        let mut idx = [0usize; 3];
                        idx[axis] = s;
                        idx[a1] = ui;
                        idx[a2] = vi;
                        bits[idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])] |= 1 << axis;
                    }
                }
            }
        }
        Self { dims, bits }
    }

    fn inside_votes(&self, i: usize, j: usize, k: usize) -> u32 {
        (self.bits[i + self.dims[0] * (j + self.dims[1] * k)]).count_ones()
    }
}

/// Coordinate along `axis` where the axis-parallel line through `(u, v)`
/// crosses the triangle, if it does. Shared edges and vertices are claimed by
/// exactly one triangle of a consistently oriented fan (top-left rule).
fn axis_line_crossing(tri: &[Point; 3], axis: usize, u: f64, v: f64) -> Option<f64> {
    let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
    let mut p = [
        (tri[0][a1], tri[0][a2], tri[0][axis]),
        (tri[1][a1], tri[1][a2], tri[1][axis]),
        (tri[2][a1], tri[2][a2], tri[2][axis]),
    ];
    let edge = |a: (f64, f64, f64), b: (f64, f64, f64), pu: f64, pv: f64| {
        (b.0 - a.0) * (pv - a.1) - (b.1 - a.1) * (pu - a.0)
    };
    let area = edge(p[0], p[1], p[2].0, p[2].1);
    if area == 0.0 {
        return None;
    }
    if area < 0.0 {
        p.swap(1, 2);
    }
    let area = area.abs();
    let top_left = |a: (f64, f64, f64), b: (f64, f64, f64)| {
        let (du, dv) = (b.0 - a.0, b.1 - a.1);
        dv < 0.0 || (dv == 0.0 && du < 0.0)
    };
    let mut w = [0.0; 3];
    for k in 0..3 {
        let (a, b) = (p[(k + 1) % 3], p[(k + 2) % 3]);
        let e = edge(a, b, u, v);
        if e < 0.0 || (e == 0.0 && !top_left(a, b)) {
            return None;
        }
        w[k] = e;
    }
    Some((w[0] * p[0].2 + w[1] * p[1].2 + w[2] * p[2].2) / area)
}

/// Angle-weighted pseudo-normals per vertex and summed face normals per edge.
struct PseudoNormals {
    face: Vec<Vector>,
    vertex: Vec<Vector>,
    edge: HashMap<(u32, u32), Vector>,
}

impl PseudoNormals {
    fn new(mesh: &TriMesh) -> Self {
        let mut face = Vec::with_capacity(mesh.faces.len());
        let mut vertex = vec![Vector::zeros(); mesh.vertices.len()];
        let mut edge: HashMap<(u32, u32), Vector> = HashMap::new();
        for (fi, f) in mesh.faces.iter().enumerate() {
            let [a, b, c] = mesh.triangle(fi);
            let n = (b - a).cross(&(c - a)).try_normalize(1e-300).unwrap_or_else(Vector::zeros);
            face.push(n);
            let pts = [a, b, c];
            for k in 0..3 {
                let p0 = pts[k];
                let e1 = pts[(k + 1) % 3] - p0;
                let e2 = pts[(k + 2) % 3] - p0;
                let denom = e1.norm() * e2.norm();
                let angle = if denom > 0.0 {
                    (e1.dot(&e2) / denom).clamp(-1.0, 1.0).acos()
                } else {
                    0.0
                };
                vertex[f[k] as usize] += n * angle;
                let (i, j) = (f[k], f[(k + 1) % 3]);
                *edge.entry((i.min(j), i.max(j))).or_insert_with(Vector::zeros) += n;
            }
        }
        Self { face, vertex, edge }
    }

    /// `Some(true)` if `p` lies on the outer side of the surface at its
    /// closest point; `None` when the pseudo-normal test is degenerate.
    fn side(&self, mesh: &TriMesh, p: &Point, hit: &crate::geometry::ClosestPointResult) -> Option<bool> {
        let f = mesh.faces[hit.face_index];
        let zero: Vec<usize> = (0..3).filter(|&k| hit.barycentric[k] == 0.0).collect();
        let n = match zero.len() {
            0 => self.face[hit.face_index],
            1 => {
                let k = zero[0];
                let (i, j) = (f[(k + 1) % 3], f[(k + 2) % 3]);
                self.edge[&(i.min(j), i.max(j))]
            }
            _ => {
                let k = (0..3).find(|k| !zero.contains(k)).unwrap_or(0);
                self.vertex[f[k] as usize]
            }
        };
        let s = (p - hit.point).dot(&n);
        if s > 0.0 {
            Some(true)
        } else if s < 0.0 {
            Some(false)
        } else {
            None
        }
    }
}

impl SdfGrid {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn value_at(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.index(i, j, k)]
    }

    pub fn centroid(&self, i: usize, j: usize, k: usize) -> Point {
        self.origin + Vector::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.cell_size
    }

    /// Bounds of the interpolation domain (first to last voxel centroid).
    pub fn interior_bounds(&self) -> (Point, Point) {
        (
            self.centroid(0, 0, 0),
            self.centroid(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1),
        )
    }

    /// Continuous grid coordinate clamped to the interpolation domain.
    fn locate(&self, p: &Point) -> ([f64; 3], Point, bool) {
        let mut g = [0.0; 3];
        let mut clamped = false;
        for k in 0..3 {
            let raw = (p[k] - self.origin[k]) / self.cell_size - 0.5;
            let hi = (self.dims[k] - 1) as f64;
            let c = raw.clamp(0.0, hi);
            if c != raw || raw.is_nan() {
                clamped = true;
            }
            g[k] = if raw.is_nan() { 0.0 } else { c };
        }
        let q = self.origin + Vector::new(g[0] + 0.5, g[1] + 0.5, g[2] + 0.5) * self.cell_size;
        (g, q, clamped)
    }

    fn cell_of(&self, g: &[f64; 3]) -> ([usize; 3], [f64; 3]) {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for k in 0..3 {
            let b = (g[k].floor() as usize).min(self.dims[k] - 2);
            base[k] = b;
            frac[k] = g[k] - b as f64;
        }
        (base, frac)
    }

    fn corners(&self, base: [usize; 3]) -> [f64; 8] {
        let mut c = [0.0; 8];
        for (n, slot) in c.iter_mut().enumerate() {
            let (dx, dy, dz) = (n & 1, (n >> 1) & 1, (n >> 2) & 1);
            *slot = self.value_at(base[0] + dx, base[1] + dy, base[2] + dz) as f64;
        }
        c
    }

    /// Trilinear interpolant of one specific cell at fractional coordinates.
    pub fn eval_cell(&self, base: [usize; 3], frac: [f64; 3]) -> f64 {
        let c = self.corners(base);
        let [x, y, z] = frac;
        let c00 = c[0] * (1.0 - x) + c[1] * x;
        let c10 = c[2] * (1.0 - x) + c[3] * x;
        let c01 = c[4] * (1.0 - x) + c[5] * x;
        let c11 = c[6] * (1.0 - x) + c[7] * x;
        let c0 = c00 * (1.0 - y) + c10 * y;
        let c1 = c01 * (1.0 - y) + c11 * y;
        c0 * (1.0 - z) + c1 * z
    }

    /// Signed distance by trilinear interpolation. Outside the domain the
    /// boundary value is extended by the Euclidean distance to the domain.
    pub fn sample(&self, p: &Point) -> SdfSample {
        let (g, q, clamped) = self.locate(p);
        let (base, frac) = self.cell_of(&g);
        let mut value = self.eval_cell(base, frac);
        if clamped {
            value += (p - q).norm();
        }
        SdfSample { value, clamped }
    }

    /// Exact gradient of the trilinear interpolant.
    pub fn sample_gradient(&self, p: &Point) -> SdfGradient {
        let (g, q, clamped) = self.locate(p);
        let (base, frac) = self.cell_of(&g);
        let c = self.corners(base);
        let [x, y, z] = frac;
        let lerp = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
        let dx = lerp(
            lerp(c[1] - c[0], c[3] - c[2], y),
            lerp(c[5] - c[4], c[7] - c[6], y),
            z,
        );
        let dy = lerp(
            lerp(c[2] - c[0], c[3] - c[1], x),
            lerp(c[6] - c[4], c[7] - c[5], x),
            z,
        );
        let dz = lerp(
            lerp(c[4] - c[0], c[5] - c[1], x),
            lerp(c[6] - c[2], c[7] - c[3], x),
            y,
        );
        let mut gradient = Vector::new(dx, dy, dz) / self.cell_size;
        let mut value = self.eval_cell(base, frac);
        if clamped {
            let off = p - q;
            let dist = off.norm();
            value += dist;
            for k in 0..3 {
                if (g[k] == 0.0 && p[k] < q[k]) || (g[k] == (self.dims[k] - 1) as f64 && p[k] > q[k]) {
                    gradient[k] = 0.0;
                }
            }
            if dist > 0.0 {
                gradient += off / dist;
            }
        }
        SdfGradient {
            gradient,
            value,
            clamped,
        }
    }

    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        for d in self.dims {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for k in 0..3 {
            w.write_f32::<LittleEndian>(self.origin[k] as f32)?;
        }
        w.write_f32::<LittleEndian>(self.cell_size as f32)?;
        for &v in &self.values {
            w.write_f32::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self, SdfError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SdfError::Format("bad magic".into()));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = r.read_u32::<LittleEndian>()? as usize;
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(SdfError::Format(format!("invalid dims {dims:?}")));
        }
        let mut origin = Point::origin();
        for k in 0..3 {
            origin[k] = r.read_f32::<LittleEndian>()? as f64;
        }
        let cell_size = r.read_f32::<LittleEndian>()? as f64;
        let n = dims[0] * dims[1] * dims[2];
        let mut values = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut values)
            .map_err(|_| SdfError::Format("truncated values".into()))?;
        Ok(Self {
            origin,
            cell_size,
            dims,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SdfError> {
        let mut buf = Vec::with_capacity(32 + 4 * self.values.len());
        self.write(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SdfError> {
        let bytes = fs::read(path)?;
        Self::read(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{box_mesh, icosphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_grid() -> SdfGrid {
        let mesh = icosphere(4, 1.0);
        build_sdf(
            &mesh,
            &SdfOptions {
                resolution: 64,
                padding: 1.2,
                max_voxels: DEFAULT_MAX_VOXELS,
            },
        )
        .unwrap()
    }

    #[test]
    fn sphere_center_and_outside() {
        let g = sphere_grid();
        let tol = 2.0 * g.cell_size;
        assert!((g.sample(&Point::origin()).value + 1.0).abs() < tol);
        assert!((g.sample(&Point::new(2.0, 0.0, 0.0)).value - 1.0).abs() < tol);
        assert!((g.sample(&Point::new(0.0, -1.3, 1.3)).value - (1.3f64.hypot(1.3) - 1.0)).abs() < tol);
    }

    #[test]
    fn sphere_random_points_match_analytic() {
        let g = sphere_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let p = Point::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            let expect = p.coords.norm() - 1.0;
            assert!((g.sample(&p).value - expect).abs() < 2.0 * g.cell_size, "{p:?}");
        }
    }

    #[test]
    fn sphere_gradient_points_outward() {
        let g = sphere_grid();
        let gr = g.sample_gradient(&Point::new(1.5, 0.0, 0.0));
        assert!(!gr.clamped);
        assert!((gr.gradient - Vector::new(1.0, 0.0, 0.0)).amax() < 0.05, "{:?}", gr.gradient);
    }

    #[test]
    fn cube_center() {
        let mesh = box_mesh(Point::new(-0.5, -0.5, -0.5), Point::new(0.5, 0.5, 0.5));
        let g = build_sdf(
            &mesh,
            &SdfOptions {
                resolution: 64,
                padding: 0.3,
                max_voxels: DEFAULT_MAX_VOXELS,
            },
        )
        .unwrap();
        assert!((g.sample(&Point::origin()).value + 0.5).abs() < 2.0 * g.cell_size);
    }

    fn synthetic(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> f32) -> SdfGrid {
        let mut values = Vec::new();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    values.push(f(i, j, k));
                }
            }
        }
        SdfGrid {
            origin: Point::new(-1.0, -1.0, -1.0),
            cell_size: 0.25,
            dims,
            values,
        }
    }

    #[test]
    fn sample_at_centroid_is_stored_value() {
        let g = synthetic([5, 6, 7], |i, j, k| (i * 100 + j * 10 + k) as f32 * 0.01);
        let c = g.centroid(2, 3, 4);
        assert_eq!(g.sample(&c).value, g.value_at(2, 3, 4) as f64);
    }

    #[test]
    fn midpoint_is_average() {
        let g = synthetic([4, 4, 4], |i, _, _| if i >= 2 { 3.0 } else { 1.0 });
        let p = Point::from((g.centroid(1, 1, 1).coords + g.centroid(2, 1, 1).coords) * 0.5);
        assert!((g.sample(&p).value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_cell_zero_gradient() {
        let g = synthetic([4, 4, 4], |_, _, _| 0.7);
        let gr = g.sample_gradient(&Point::new(-0.5, -0.4, -0.6));
        assert_eq!(gr.gradient, Vector::zeros());
    }

    #[test]
    fn shared_face_continuity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = synthetic([5, 5, 5], |_, _, _| 0.0);
        let g = SdfGrid {
            values: g.values.iter().map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            ..g
        };
        for _ in 0..100 {
            let (y, z) = (rng.gen::<f64>(), rng.gen::<f64>());
            let left = g.eval_cell([0, 1, 2], [1.0, y, z]);
            let right = g.eval_cell([1, 1, 2], [0.0, y, z]);
            assert_eq!(left, right);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = sphere_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = g.cell_size / 100.0;
        let mut checked = 0;
        while checked < 200 {
            let p = Point::new(rng.gen_range(-1.8..1.8), rng.gen_range(-1.8..1.8), rng.gen_range(-1.8..1.8));
            // keep clear of cell boundaries
            let near_boundary = (0..3).any(|k| {
                let f = ((p[k] - g.origin[k]) / g.cell_size - 0.5).fract();
                !(0.05..=0.95).contains(&f)
            });
            if near_boundary {
                continue;
            }
            let an = g.sample_gradient(&p).gradient;
            let mut fd = Vector::zeros();
            for k in 0..3 {
                let mut a = p;
                let mut b = p;
                a[k] += h;
                b[k] -= h;
                fd[k] = (g.sample(&a).value - g.sample(&b).value) / (2.0 * h);
            }
            let rel = (an - fd).norm() / an.norm().max(fd.norm()).max(1e-12);
            assert!(rel < 1e-4, "rel {rel} at {p:?}");
            checked += 1;
        }
    }

    #[test]
    fn outside_samples_clamp_and_flag() {
        let g = synthetic([4, 4, 4], |_, _, _| 0.5);
        let (_, hi) = g.interior_bounds();
        let s = g.sample(&(hi + Vector::new(1.0, 0.0, 0.0)));
        assert!(s.clamped);
        assert!((s.value - 1.5).abs() < 1e-12);
        let gr = g.sample_gradient(&(hi + Vector::new(1.0, 0.0, 0.0)));
        assert!(gr.clamped);
        assert!((gr.gradient - Vector::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let g = sphere_grid();
        let mut buf = Vec::new();
        g.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SDF1");
        let back = SdfGrid::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, g);
        buf.truncate(buf.len() - 3);
        assert!(SdfGrid::read(&mut buf.as_slice()).is_err());
        assert!(SdfGrid::read(&mut &b"XXXX"[..]).is_err());
    }

    #[test]
    fn small_resolution_and_cap_rejected() {
        let mesh = icosphere(1, 1.0);
        let opts = SdfOptions {
            resolution: 4,
            padding: 0.1,
            max_voxels: DEFAULT_MAX_VOXELS,
        };
        assert!(matches!(build_sdf(&mesh, &opts), Err(SdfError::ResolutionTooSmall(4))));
        let opts = SdfOptions {
            resolution: 64,
            padding: 0.1,
            max_voxels: 1000,
        };
        assert!(matches!(build_sdf(&mesh, &opts), Err(SdfError::TooManyVoxels { .. })));
    }

    #[test]
    fn parity_even_through_closed_mesh() {
        let mesh = icosphere(3, 1.0);
        let bvh = Bvh::build(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let axis = rng.gen_range(0..3);
            let (u, v) = (rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2));
            let mut n = 0;
            bvh.for_each_on_axis_line(axis, u, v, |f| {
                if axis_line_crossing(&mesh.triangle(f), axis, u, v).is_some() {
                    n += 1;
                }
            });
            assert_eq!(n % 2, 0);
        }
        // a line straight through a shared vertex of the icosahedron
        let top = mesh.vertices[0];
        let mut n = 0;
        bvh.for_each_on_axis_line(1, top.z, top.x, |f| {
            if axis_line_crossing(&mesh.triangle(f), 1, top.z, top.x).is_some() {
                n += 1;
            }
        });
        assert_eq!(n % 2, 0);
    }
}
