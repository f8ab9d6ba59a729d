//! Serve one generated room, two bodies and an untrained tiny model on
//! 127.0.0.1:8080. Try:
//!
//! ```bash
//! curl localhost:8080/api/scenes
//! curl -X POST localhost:8080/api/sample -H 'content-type: application/json' \
//!      -d '{"body_id":"stand","n":2,"seed":1}'
//! ```

use hsi_core::cvae::{Model, ModelConfig};
use hsi_core::interaction::default_class_names;
use hsi_core::pipeline::{body_hierarchy, humanoid, scene_sdf};
use hsi_core::synthgen::{generate_body, generate_scene};
use hsi_service::{serve, Catalog};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ModelConfig { latent_dim: 8, conv_width: 8, fc_width: 16, decoder_convs: 1, ..Default::default() };
    let model = Model::new(config, body_hierarchy(), default_class_names(), 0)?;
    let scene = generate_scene(1);
    let sdf = scene_sdf(&scene, 64)?;
    let bodies = ["stand", "sit"].map(|p| (p.to_string(), generate_body(humanoid(), p, None).unwrap()));
    let catalog = Catalog::from_parts(model, vec![("room".into(), scene, sdf)], bodies.into())?;
    serve(catalog, "127.0.0.1:8080".parse()?).await?;
    Ok(())
}
