//! Procedural rooms built from labeled boxes.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{box_mesh, Point, RigidTransform, SceneMesh, TriMesh, Vector};
use crate::interaction::default_class_names;
use crate::rng::rng_for;

pub const FLOOR: u16 = 0;
pub const WALL: u16 = 1;
pub const CHAIR: u16 = 2;
pub const SOFA: u16 = 3;
pub const BED: u16 = 4;
pub const TABLE: u16 = 5;
pub const SHELF: u16 = 6;
pub const OTHER: u16 = 7;

/// Axis-aligned box in an item's local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPart {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoxPart {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }
}

/// Furniture: boxes in a local frame, rotated by `yaw` and moved to `position`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FurnitureItem {
    pub class: u16,
    pub boxes: Vec<BoxPart>,
    pub yaw: f64,
    pub position: [f64; 3],
}

impl FurnitureItem {
    pub fn transform(&self) -> RigidTransform {
        RigidTransform::from_yaw(self.yaw, Vector::from(self.position))
    }

    /// Radius of the item's footprint around its origin.
    pub fn footprint_radius(&self) -> f64 {
        self.boxes
            .iter()
            .flat_map(|b| {
                [
                    (b.min[0], b.min[1]),
                    (b.min[0], b.max[1]),
                    (b.max[0], b.min[1]),
                    (b.max[0], b.max[1]),
                ]
            })
            .map(|(x, y)| x.hypot(y))
            .fold(0.0, f64::max)
    }

    /// Whether world point `p` lies inside one of the item's boxes.
    pub fn contains(&self, p: &Point) -> bool {
        let q = self.transform().inverse().apply(p);
        self.boxes.iter().any(|b| (0..3).all(|k| q[k] > b.min[k] && q[k] < b.max[k]))
    }
}

pub fn chair(seat_height: f64) -> Vec<BoxPart> {
    vec![
        BoxPart::new([-0.25, -0.22, 0.0], [0.25, 0.23, seat_height]),
        BoxPart::new([-0.25, -0.28, 0.0], [0.25, -0.22, seat_height + 0.45]),
    ]
}

pub fn sofa(seat_height: f64, width: f64) -> Vec<BoxPart> {
    let w = width / 2.0;
    vec![
        BoxPart::new([-w, -0.35, 0.0], [w, 0.45, seat_height]),
        BoxPart::new([-w, -0.55, 0.0], [w, -0.35, seat_height + 0.45]),
    ]
}

pub fn bed(height: f64) -> Vec<BoxPart> {
    vec![BoxPart::new([-0.7, -1.0, 0.0], [0.7, 1.0, height])]
}

pub fn table(height: f64) -> Vec<BoxPart> {
    let top = height - 0.04;
    let mut parts = vec![BoxPart::new([-0.6, -0.4, top], [0.6, 0.4, height])];
    for (x, y) in [(-0.55, -0.35), (0.5, -0.35), (-0.55, 0.3), (0.5, 0.3)] {
        parts.push(BoxPart::new([x, y, 0.0], [x + 0.05, y + 0.05, top]));
    }
    parts
}

pub fn shelf(height: f64) -> Vec<BoxPart> {
    vec![BoxPart::new([-0.4, -0.18, 0.0], [0.4, 0.18, height])]
}

pub fn cabinet() -> Vec<BoxPart> {
    vec![BoxPart::new([-0.3, -0.25, 0.0], [0.3, 0.25, 0.8])]
}

/// A room: floor slab under `[-w/2, w/2] × [-d/2, d/2]`, four walls of height
/// `h`, and furniture standing on z = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room: [f64; 3],
    pub items: Vec<FurnitureItem>,
    pub seed: u64,
}

const WALL_THICKNESS: f64 = 0.1;

impl SceneSpec {
    /// Random room with chairs, a sofa, a bed, a table, a shelf and a cabinet
    /// arranged without overlap.
    pub fn random(seed: u64) -> Self {
        let mut rng = rng_for(seed, "scene");
        let w = rng.gen_range(4.5..6.0);
        let d = rng.gen_range(4.5..6.0);
        let mut candidates: Vec<(u16, Vec<BoxPart>)> = vec![
            (BED, bed(rng.gen_range(0.4..0.55))),
            (SOFA, sofa(rng.gen_range(0.38..0.44), 1.9)),
            (TABLE, table(rng.gen_range(0.7..0.78))),
            (CHAIR, chair(rng.gen_range(0.38..0.44))),
            (SHELF, shelf(rng.gen_range(1.0..1.8))),
            (OTHER, cabinet()),
        ];
        if rng.gen_bool(0.5) {
            candidates.push((CHAIR, chair(rng.gen_range(0.38..0.44))));
        }
        let mut items: Vec<FurnitureItem> = Vec::new();
        for (class, boxes) in candidates {
            for _ in 0..100 {
                let mut item = FurnitureItem {
                    class,
                    boxes: boxes.clone(),
                    yaw: FRAC_PI_2 * rng.gen_range(0..4) as f64,
                    position: [0.0; 3],
                };
                let r = item.footprint_radius();
                let (hx, hy) = (w / 2.0 - r - 0.05, d / 2.0 - r - 0.05);
                if hx <= 0.0 || hy <= 0.0 {
                    break;
                }
                item.position = [rng.gen_range(-hx..hx), rng.gen_range(-hy..hy), 0.0];
                let clear = items.iter().all(|o| {
                    let dx = o.position[0] - item.position[0];
                    let dy = o.position[1] - item.position[1];
                    dx.hypot(dy) > o.footprint_radius() + r + 0.3
                });
                if clear {
                    items.push(item);
                    break;
                }
            }
        }
        Self {
            room: [w, d, 2.5],
            items,
            seed,
        }
    }

    pub fn to_scene(&self) -> SceneMesh {
        let [w, d, h] = self.room;
        let (hw, hd, t) = (w / 2.0, d / 2.0, WALL_THICKNESS);
        let mut builder = SceneBuilder::new();
        builder.add_box(FLOOR, [-hw - t, -hd - t, -t], [hw + t, hd + t, 0.0]);
        builder.add_box(WALL, [-hw - t, -hd - t, 0.0], [hw + t, -hd, h]);
        builder.add_box(WALL, [-hw - t, hd, 0.0], [hw + t, hd + t, h]);
        builder.add_box(WALL, [-hw - t, -hd, 0.0], [-hw, hd, h]);
        builder.add_box(WALL, [hw, -hd, 0.0], [hw + t, hd, h]);
        for item in &self.items {
            builder.add_item(item);
        }
        builder.build()
    }

    /// Free-space box of the room interior.
    pub fn interior(&self) -> (Point, Point) {
        let [w, d, h] = self.room;
        (Point::new(-w / 2.0, -d / 2.0, 0.0), Point::new(w / 2.0, d / 2.0, h))
    }

    pub fn inside_furniture(&self, p: &Point) -> bool {
        self.items.iter().any(|i| i.contains(p))
    }
}

/// Accumulates labeled boxes into one scene mesh.
#[derive(Debug, Default)]
pub struct SceneBuilder {
    mesh: Option<TriMesh>,
    labels: Vec<u16>,
}

impl SceneBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_mesh(&mut self, class: u16, m: &TriMesh) {
        self.labels.extend(std::iter::repeat(class).take(m.vertex_count()));
        match &mut self.mesh {
            Some(all) => all.append(m),
            None => self.mesh = Some(m.clone()),
        }
    }

    pub fn add_box(&mut self, class: u16, min: [f64; 3], max: [f64; 3]) {
        self.add_mesh(class, &box_mesh(Point::from(min), Point::from(max)));
    }

    pub fn add_item(&mut self, item: &FurnitureItem) {
        let tf = item.transform();
        for b in &item.boxes {
            let m = box_mesh(Point::from(b.min), Point::from(b.max));
            self.add_mesh(item.class, &tf.apply_mesh(&m));
        }
    }

    pub fn build(self) -> SceneMesh {
        let mesh = self.mesh.unwrap_or_else(|| TriMesh::new(Vec::new(), Vec::new()).unwrap());
        SceneMesh::new(mesh, self.labels, default_class_names()).expect("labels within class list")
    }
}

/// A random labeled room.
pub fn generate_scene(seed: u64) -> SceneMesh {
    SceneSpec::random(seed).to_scene()
}
