//! Closest-point queries through the BVH, checked against brute force.

use hsi_core::geometry::{closest_point_brute_force, icosphere, Bvh, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mesh = icosphere(3, 1.0);
    let bvh = Bvh::build(&mesh).expect("non-empty mesh");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let q = Point::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let hit = bvh.closest_point(&q);
        let oracle = closest_point_brute_force(&mesh, &q);
        worst = worst.max((hit.distance - oracle.distance).abs());
    }
    let hit = bvh.closest_point(&Point::new(0.0, 0.0, 3.0));
    println!("{} faces; top query hits face {} at {:.4}", bvh.face_count(), hit.face_index, hit.distance);
    println!("max deviation from brute force over 1000 queries: {worst:.1e}");
}
