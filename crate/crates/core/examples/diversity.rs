//! K-means entropy and cluster size of sample sets.

use hsi_core::metrics::diversity;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let blobs: Vec<Vec<f64>> = (0..200)
        .map(|i| {
            let c = (i % 4) as f64 * 5.0;
            vec![c + rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)]
        })
        .collect();
    let spread: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0)]).collect();
    for (name, set) in [("four blobs", &blobs), ("uniform", &spread)] {
        for k in [4, 20] {
            let d = diversity(set, k, 0).unwrap();
            println!("{name:>10} k={k:2}: entropy {:.3} (max {:.3}), cluster size {:.3}", d.entropy, (k as f64).ln(), d.cluster_size);
        }
    }
}
