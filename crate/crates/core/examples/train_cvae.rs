//! Train a small conditional VAE on synthetic frames, then sample feature
//! maps for an unseen body.
//!
//! ```bash
//! cargo run --release -p hsi-core --example train_cvae -- 400
//! ```

use hsi_core::cvae::{train, Model, ModelConfig, TrainOptions};
use hsi_core::interaction::default_class_names;
use hsi_core::pipeline::{body_hierarchy, humanoid};
use hsi_core::synthgen::{generate_body, generate_frames};

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    let data = generate_frames(humanoid(), &body_hierarchy(), 1, n, 42).expect("frames").dataset;
    let config = ModelConfig { latent_dim: 16, conv_width: 16, fc_width: 64, decoder_convs: 2, alpha: 5.0, ..Default::default() };
    let model = Model::new(config, body_hierarchy(), default_class_names(), 1).unwrap();
    println!("{} frames, {} parameters", data.frames.len(), model.param_count());

    let opts = TrainOptions { epochs: 5, batch_size: 16, micro_batch: 16, lr: 2e-3, ..Default::default() };
    let ck = train(model, &data, &opts, 3, |e| {
        println!("epoch {} loss {:.3} val accuracy {:?}", e.epoch, e.train_loss, e.val_contact_accuracy);
    })
    .unwrap();

    let body = generate_body(humanoid(), "sit", Some(99)).unwrap();
    for (i, m) in ck.model.sample(&body, 3, 0).unwrap().iter().enumerate() {
        let touching = m.contact.iter().filter(|&&c| c >= 0.5).count();
        println!("sample {i}: {touching} of {} vertices in contact", m.contact.len());
    }
}
