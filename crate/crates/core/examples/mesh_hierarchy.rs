//! Simplification hierarchy and spiral neighborhoods of the body mesh.

use hsi_core::meshnet::build_spirals;
use hsi_core::synthgen::Humanoid;

fn main() {
    let body = Humanoid::new();
    let h = body.hierarchy(4);
    println!("levels {:?}", h.level_sizes());

    let spirals = build_spirals(&h.levels[1], 9).expect("closed manifold");
    println!("vertex 0 spiral: {:?}", spirals.spiral(0));

    // pooled positions of the rest pose
    let rest = body.rest_mesh();
    let coarse = h.downsample_points(&rest.vertices, 2);
    println!("level 2 has {} points, first {:.3?}", coarse.len(), coarse[0].coords.as_slice());
}
