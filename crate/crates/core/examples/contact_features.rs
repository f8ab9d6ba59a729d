//! Stage a posed body in a room and label each vertex with contact and the
//! class of the nearest scene surface.

use hsi_core::geometry::Bvh;
use hsi_core::interaction::{extract_features, CONTACT_THRESHOLD};
use hsi_core::pipeline::humanoid;
use hsi_core::synthgen::staged_frame;

fn main() {
    for i in 0..5 {
        let staged = staged_frame(humanoid(), 3, i).expect("staging");
        let bvh = Bvh::build(&staged.scene.mesh).unwrap();
        let (_, fmap) = extract_features(&staged.placed.mesh.vertices, &staged.scene, &bvh, CONTACT_THRESHOLD).unwrap();
        let classes = fmap.argmax_classes();
        let mut hist = vec![0usize; fmap.num_classes];
        for (c, &k) in fmap.contact.iter().zip(&classes) {
            if *c > 0.5 {
                hist[k as usize] += 1;
            }
        }
        let names: Vec<String> = hist
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(k, n)| format!("{}={n}", staged.scene.class_names[k - 1]))
            .collect();
        println!("frame {i} ({:>10}): {}", staged.pose, names.join(" "));
    }
}
