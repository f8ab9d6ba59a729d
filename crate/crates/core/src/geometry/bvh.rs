//! Bounding-volume hierarchy over triangles for exact closest-point queries.
//!
//! The tree is immutable after [`Bvh::build`]; queries take `&self` and are
//! safe to run from many threads. Results are identical to an exhaustive scan
//! over all triangles, including the tie-break on the lowest face index.

use super::mesh::{Point, TriMesh};
use super::GeometryError;

const LEAF_SIZE: usize = 4;
const PARALLEL_THRESHOLD: usize = 4096;

/// Closest point on a surface to a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPointResult {
    pub point: Point,
    pub distance: f64,
    pub face_index: usize,
    pub barycentric: [f64; 3],
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Point,
    max: Point,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Point::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    fn distance_squared(&self, p: &Point) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: first entry in `order`. Interior: index of the left child; the
    /// right child is stored in `right`.
    start: u32,
    count: u32,
    right: u32,
}

/// Proximity structure over the triangles of a mesh.
#[derive(Debug, Clone)]
pub struct Bvh {
    vertices: Vec<Point>,
    faces: Vec<[u32; 3]>,
    nodes: Vec<Node>,
    order: Vec<u32>,
}

enum Interim {
    Leaf(Aabb, Vec<u32>),
    Inner(Aabb, Box<Interim>, Box<Interim>),
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Result<Self, GeometryError> {
        if mesh.faces.is_empty() {
            return Err(GeometryError::EmptyMesh);
        }
        let boxes: Vec<Aabb> = mesh
            .faces
            .iter()
            .map(|f| {
                let mut b = Aabb::empty();
                for &i in f {
                    b.grow(&mesh.vertices[i as usize]);
                }
                b
            })
            .collect();
        let centroids: Vec<Point> = boxes
            .iter()
            .map(|b| Point::from((b.min.coords + b.max.coords) * 0.5))
            .collect();
        let ids: Vec<u32> = (0..mesh.faces.len() as u32).collect();
        let tree = build_interim(ids, &boxes, &centroids);

        let mut bvh = Bvh {
            vertices: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            nodes: Vec::with_capacity(2 * mesh.faces.len() / LEAF_SIZE + 1),
            order: Vec::with_capacity(mesh.faces.len()),
        };
        bvh.flatten(tree);
        Ok(bvh)
    }

    fn flatten(&mut self, node: Interim) -> u32 {
        let idx = self.nodes.len() as u32;
        match node {
            Interim::Leaf(bounds, ids) => {
                let start = self.order.len() as u32;
                let count = ids.len() as u32;
                self.order.extend(ids);
                self.nodes.push(Node {
                    bounds,
                    start,
                    count,
                    right: 0,
                });
            }
            Interim::Inner(bounds, left, right) => {
                self.nodes.push(Node {
                    bounds,
                    start: 0,
                    count: 0,
                    right: 0,
                });
                let l = self.flatten(*left);
                let r = self.flatten(*right);
                let n = &mut self.nodes[idx as usize];
                n.start = l;
                n.right = r;
            }
        }
        idx
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    fn triangle(&self, face: usize) -> [Point; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Globally nearest surface point; ties go to the lowest face index.
    pub fn closest_point(&self, query: &Point) -> ClosestPointResult {
        let mut best_d2 = f64::INFINITY;
        let mut best_face = usize::MAX;
        let mut best_bary = [1.0, 0.0, 0.0];
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            // equal distances must still be visited for the face-index tie-break
            if node.bounds.distance_squared(query) > best_d2 {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &f in &self.order[s..s + node.count as usize] {
                    let f = f as usize;
                    let [a, b, c] = self.triangle(f);
                    let bary = closest_barycentric(query, &a, &b, &c);
                    let p = combine(&a, &b, &c, &bary);
                    let d2 = (query - p).norm_squared();
                    if d2 < best_d2 || (d2 == best_d2 && f < best_face) {
                        best_d2 = d2;
                        best_face = f;
                        best_bary = bary;
                    }
                }
            } else {
                let l = node.start;
                let r = node.right;
                let dl = self.nodes[l as usize].bounds.distance_squared(query);
                let dr = self.nodes[r as usize].bounds.distance_squared(query);
                // push the farther child first so the nearer one is explored first
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        let [a, b, c] = self.triangle(best_face);
        let point = combine(&a, &b, &c, &best_bary);
        ClosestPointResult {
            point,
            distance: (query - point).norm(),
            face_index: best_face,
            barycentric: best_bary,
        }
    }

    /// Calls `visit` for every face whose bounding box is crossed by the
    /// infinite line parallel to `axis` through `(u, v)` in the other two
    /// coordinates (cyclic order: axis+1, axis+2).
    pub fn for_each_on_axis_line(&self, axis: usize, u: f64, v: f64, mut visit: impl FnMut(usize)) {
        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut stack: Vec<u32> = vec![0];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            let b = &node.bounds;
            if u < b.min[a1] || u > b.max[a1] || v < b.min[a2] || v > b.max[a2] {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &f in &self.order[s..s + node.count as usize] {
                    visit(f as usize);
                }
            } else {
                stack.push(node.right);
                stack.push(node.start);
            }
        }
    }
}

fn build_interim(mut ids: Vec<u32>, boxes: &[Aabb], centroids: &[Point]) -> Interim {
    let bounds = ids
        .iter()
        .fold(Aabb::empty(), |acc, &i| acc.merge(&boxes[i as usize]));
    if ids.len() <= LEAF_SIZE {
        return Interim::Leaf(bounds, ids);
    }
    let mut cb = Aabb::empty();
    for &i in &ids {
        cb.grow(&centroids[i as usize]);
    }
    let ext = cb.max - cb.min;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    ids.sort_by(|&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let right_ids = ids.split_off(ids.len() / 2);
    let (left, right) = if right_ids.len() + ids.len() >= PARALLEL_THRESHOLD {
        rayon::join(
            || build_interim(ids, boxes, centroids),
            || build_interim(right_ids, boxes, centroids),
        )
    } else {
        (
            build_interim(ids, boxes, centroids),
            build_interim(right_ids, boxes, centroids),
        )
    };
    Interim::Inner(bounds, Box::new(left), Box::new(right))
}

fn combine(a: &Point, b: &Point, c: &Point, w: &[f64; 3]) -> Point {
    Point::from(a.coords * w[0] + b.coords * w[1] + c.coords * w[2])
}

/// Barycentric weights of the point on triangle `abc` closest to `p`
/// (Voronoi-region walk over vertices, edges and face).
pub fn closest_barycentric(p: &Point, a: &Point, b: &Point, c: &Point) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    [va * denom, vb * denom, vc * denom]
}

/// Exhaustive closest-point search; the reference the BVH must agree with.
pub fn closest_point_brute_force(mesh: &TriMesh, query: &Point) -> ClosestPointResult {
    let mut best_d2 = f64::INFINITY;
    let mut best: Option<ClosestPointResult> = None;
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.triangle(f);
        let bary = closest_barycentric(query, &a, &b, &c);
        let p = combine(&a, &b, &c, &bary);
        let d2 = (query - p).norm_squared();
        if d2 < best_d2 {
            best_d2 = d2;
            best = Some(ClosestPointResult {
                point: p,
                distance: (query - p).norm(),
                face_index: f,
                barycentric: bary,
            });
        }
    }
    best.expect("mesh has faces")
}
