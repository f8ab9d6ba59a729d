//! Seed search and refinement of a standing body whose feet are marked as
//! floor contact.

use std::ops::ControlFlow;

use hsi_core::geometry::Bvh;
use hsi_core::interaction::{FeatureMap, CONTACT_THRESHOLD};
use hsi_core::pipeline::{humanoid, scene_sdf};
use hsi_core::placement::{Placement, PlacementOptions, PlacementWeights, RefineMode};
use hsi_core::synthgen::{generate_body, generate_scene};

fn main() {
    let scene = generate_scene(11);
    let sdf = scene_sdf(&scene, 96).unwrap();
    let bvh = Bvh::build(&scene.mesh).unwrap();
    let body = generate_body(humanoid(), "stand", None).unwrap();

    let regions = &humanoid().regions;
    let v = &body.mesh.vertices;
    let contact: Vec<u8> = (0..v.len()).map(|i| ((regions.left_foot[i] || regions.right_foot[i]) && v[i].z < 1e-3) as u8).collect();
    // class 1 is floor: anything within the contact threshold at rest, so
    // the observed labels agree once the soles touch down
    let classes: Vec<u16> = v.iter().map(|p| (p.z <= CONTACT_THRESHOLD) as u16).collect();
    let fmap = FeatureMap::from_labels(&contact, &classes, scene.num_classes() + 1);

    let p = Placement::new(&body, &fmap, &sdf, &scene, &bvh, PlacementWeights::default(), PlacementOptions::default()).unwrap();
    let seeds = p.seed_search(16, 5).unwrap();
    println!("best seed {:.2?} energy {:.4}", seeds[0].0.translation, seeds[0].1.total);

    let r = p
        .refine(&seeds[0].0, RefineMode::Full, |t| {
            if t.iteration % 50 == 0 {
                println!("  iter {:3} best {:.5}", t.iteration, t.best);
            }
            ControlFlow::Continue(())
        })
        .unwrap();
    println!("refined {:.3?} yaw {:.3}: {:.5} (from {:.5})", r.transform.translation, r.transform.yaw, r.energy.total, r.initial_energy);
}
